"""Run every shipped config through the command-line driver.

    python scripts/run_all_scenarios.py [--out runs]

Each config writes into <out>/<config stem>/; the PASS/FAIL lines of the
scenario checks are printed and collected in <out>/summary.json.
"""
import argparse
import json
from pathlib import Path

from bohmflow.cli import main
from bohmflow.config import ScenarioConfig


def run(config: Path, out: Path) -> dict:
    scenario = ScenarioConfig.load(config).scenario
    directory = out / config.stem
    code = main([scenario, "--config", str(config), f"--outputs.directory={directory}"])
    checks = json.loads((directory / "manifest.json").read_text())["checks"] if code == 0 else {}
    return {"scenario": scenario, "exit_code": code, "checks": checks}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", default="runs")
    ap.add_argument("--configs", default=str(Path(__file__).resolve().parents[1] / "configs"))
    args = ap.parse_args()
    out = Path(args.out)
    summary = {}
    for cfg in sorted(Path(args.configs).glob("*.json")):
        print(f"== {cfg.stem}")
        summary[cfg.stem] = run(cfg, out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
