"""Scan the effective-well comparison over the final time.

For each t the single-packet run against wall + well is set beside the
mirrored two-packet density; printed are the innermost FWHM ratios of both
and the largest offset between matched peaks, in grid cells and in fringe
spacings. Also runs the wall-only ablation at the configured time.

    python scripts/well_ratio_vs_time.py [--config configs/effective_well.json]
"""
import argparse

import numpy as np

from bohmflow.config import ScenarioConfig
from bohmflow.well import V0, compare_with_superposition, x_min


def row(cfg, t, include_well=True):
    n = cfg.numerics
    c = compare_with_superposition(cfg.well_params(), cfg.grid(), t, dt=float(n["dt"]),
                                   include_well=include_well, min_prominence=float(n["min_prominence"]))
    rw = c.fringes_well.innermost_ratio if c.fringes_well else None
    rs = c.fringes_superposition.innermost_ratio if c.fringes_superposition else None
    spacing = c.fringes_superposition.spacing_estimate if c.fringes_superposition else np.nan
    off = float(np.max(np.abs(c.peak_offsets))) if len(c.peak_offsets) else np.nan
    return rw, rs, off / c.cell, off / spacing


def fmt(v):
    return "   --" if v is None else f"{v:5.3f}"


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--config", default="configs/effective_well.json")
    ap.add_argument("--times", default="1,2,3,4,5,6,8")
    args = ap.parse_args()
    cfg = ScenarioConfig.load(args.config)
    wp = cfg.well_params()
    print(f"{'t':>5} {'width':>7} {'depth':>7} {'r_well':>6} {'r_sup':>6} {'off/cell':>8} {'off/spacing':>11}")
    for t in map(float, args.times.split(",")):
        rw, rs, oc, osp = row(cfg, t)
        print(f"{t:5.2f} {float(x_min(wp, t)):7.3f} {float(V0(wp, t)):7.3f} {fmt(rw):>6} {fmt(rs):>6} "
              f"{oc:8.1f} {osp:11.3f}")
    T = float(cfg.numerics["t_final"])
    rw, rs, oc, osp = row(cfg, T, include_well=False)
    print(f"wall only at t = {T:g}: r_well {fmt(rw)}, r_sup {fmt(rs)}, offset {oc:.1f} cells")
