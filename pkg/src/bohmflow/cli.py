"""Command-line driver for the four canonical scenarios.

    bohmflow <scenario> [--config FILE] [--section.key VALUE ...] [--check]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance-check failure (only with --check).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (classify_final_density, density_variance, detect_vortices, find_fringes,
                       fit_sigma)
from .analytic import SuperpositionSpec, field_sample, psi_and_derivatives, sigma_t
from .config import SCENARIOS, ScenarioConfig, parse_value
from .errors import BohmflowError, ConfigError, NumericalError, TooFewPeaks
from .grid import (AbsorbingLayer, PotentialSpec, SpectralPropagator, initialize_grid, propagate,
                   synthesize_fields, write_snapshot_series)
from .svg import Figure
from .trajectories import (AnalyticProvider, asymptotic_slope, check_noncrossing, classify_regime,
                           integrate_ensemble, sample_initial_positions)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
FORMAT_VERSIONS = {"csv": "1", "json": "1", "svg": "1.1", "snapshot": "BFSN-1"}
COLLISION_RATIO, INTERFERENCE_RATIO = 3.0, 1.0 / 3.0


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


class RunOutput:
    """Collects the files of one run and writes the manifest last."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.directory = Path(config.outputs["directory"])
        self.directory.mkdir(parents=True, exist_ok=True)
        self.formats = set(config.outputs["formats"])
        self.files: list[str] = []

    def _write(self, name, text):
        (self.directory / name).write_text(text)
        self.files.append(name)

    def json(self, name, obj):
        if "json" in self.formats:
            self._write(name, dumps(obj))

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
            self._write(name, buf.getvalue())

    def svg(self, name, fig: Figure):
        if "svg" in self.formats:
            self._write(name, fig.to_string())

    def snapshots(self, states, stem="snap"):
        if self.config.outputs.get("snapshots"):
            manifest = write_snapshot_series(self.directory, states, stem=stem)
            self.files.extend(e["file"] for e in json.loads(Path(manifest).read_text())["snapshots"])
            self.files.append(Path(manifest).name)

    def manifest(self, checks: dict | None = None) -> Path:
        entries = []
        for name in sorted(set(self.files)):
            data = (self.directory / name).read_bytes()
            entries.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
        doc = {
            "tool": "bohmflow",
            "version": __version__,
            "scenario": self.config.scenario,
            "config": self.config.to_dict(),
            "versions": {"python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "formats": FORMAT_VERSIONS,
            "outputs": entries,
            "checks": checks or {},
        }
        path = self.directory / "manifest.json"
        path.write_text(dumps(doc))
        return path


def _lim(a, pad=0.05):
    a = np.asarray(a, float)
    a = a[np.isfinite(a)]
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        hi, lo = hi + 1.0, lo - 1.0
    d = pad * (hi - lo)
    return lo - d, hi + d


# --- free Gaussian ------------------------------------------------------------

def run_free_gaussian(cfg: ScenarioConfig, out: RunOutput) -> dict:
    """Trajectory fan-out in the short- and long-time regimes, asymptotic
    slopes, and a grid run whose measured width is fitted to the spreading law."""
    n = cfg.numerics
    p = cfg.packets()[0]
    spec = SuperpositionSpec.single(p)
    tau = float(p.tau)
    xc, v0 = float(p.centers[0]), float(p.velocities[0])
    x_init = sample_initial_positions(p, int(n["n_trajectories"]), method="quantile",
                                      seed=cfg.outputs["seed"])
    prov = AnalyticProvider(spec)
    tol = float(n["tol"])
    short = integrate_ensemble(prov, x_init, (0.0, n["t_short"] * tau), tol=tol, n_times=n["n_times"])
    long = integrate_ensemble(prov, x_init, (0.0, n["t_long"] * tau), tol=tol, n_times=n["n_times"])

    rows = [(name, i, t, float(x)) for name, ens in (("short", short), ("long", long))
            for i in range(ens.n_paths) for t, x in zip(ens.times, ens.paths[i])]
    out.csv("trajectories.csv", ["window", "path_id", "t", "x"], rows)
    th = tuple(n["regime_thresholds"])
    out.csv("regimes.csv", ["window", "t", "regime"],
            [(name, t, classify_regime(p, t, th)) for name, ens in (("short", short), ("long", long))
             for t in ens.times])

    # classical comparison lines: start x0 with slope v0 at short times,
    # start at the center with slope v0 + (x0 - xc)/tau at long times
    expected = v0 + (x_init - xc) / tau
    out.csv("classical.csv", ["path_id", "x0", "short_intercept", "short_slope",
                              "long_intercept", "long_slope"],
            [(i, float(x), float(x), v0, xc, float(s)) for i, (x, s) in enumerate(zip(x_init, expected))])
    window = (n["slope_window"][0] * tau, n["slope_window"][1] * tau)
    slopes = asymptotic_slope(long, window)
    # errors are measured against the size of the two terms, |v0| + |x0 - xc|/tau,
    # so a path whose two terms nearly cancel does not blow up the relative error
    scale = np.abs(v0) + np.abs(x_init - xc) / tau
    slope_err = np.abs(slopes - expected) / np.maximum(scale, 1e-300)
    slope_ok = bool(np.all(np.abs(slopes - expected) <= 1e-2 * scale + 1e-12))

    # grid run and spreading-law fit
    geo = cfg.grid()
    state = initialize_grid(spec, geo)
    dt = float(n["dt"])
    n_steps = int(round(n["t_grid"] / dt))
    snaps = propagate(state, PotentialSpec("free"), dt, n_steps, stride=int(n["snapshot_stride"]))
    x = geo.axis(0)
    times = np.array([s.t for s in snaps])
    sig_grid = np.sqrt([density_variance(x, s.rho) for s in snaps])
    sig_exact = sigma_t(p, times)
    sig_err = np.abs(sig_grid - sig_exact) / sig_exact
    fit = fit_sigma(times, x, [s.rho for s in snaps], p.mass, p.hbar)
    out.csv("sigma.csv", ["t", "sigma_grid", "sigma_exact"], zip(times, sig_grid, sig_exact))
    out.snapshots(snaps)

    report = {
        "tau": tau, "spreading_velocity": float(p.spreading_velocity),
        "regime_boundaries": {"huygens_end": th[0] * tau, "fraunhofer_start": th[1] * tau},
        "slope_window": list(window),
        "slopes": slopes, "expected_slopes": expected, "max_slope_relative_error": float(np.max(slope_err)),
        "sigma_fit": fit.to_dict(), "max_sigma_relative_error": float(np.max(sig_err)),
        "halted_paths": len(short.halted) + len(long.halted),
    }
    out.json("report.json", report)

    fig = Figure(900, 420)
    for k, (ens, title, lines) in enumerate(((short, "short times", "short"), (long, "long times", "long"))):
        T = ens.times
        pan = fig.panel((70 + 430 * k, 40, 380, 320), (T[0], T[-1]), _lim(ens.paths),
                        title=title, xlabel="t", ylabel="x")
        for i in range(ens.n_paths):
            pan.polyline(T, ens.paths[i], color="#1f4fbf")
            if lines == "short":
                pan.polyline(T, x_init[i] + v0 * T, color="#888888", dash="4,3")
            else:
                pan.polyline(T, xc + expected[i] * T, color="#888888", dash="4,3")
    out.svg("trajectories.svg", fig)

    checks = {
        "asymptotic_slopes_within_1pct": slope_ok,
        "grid_sigma_within_0.1pct": bool(np.max(sig_err) < 1e-3),
        "sigma_fit_consistent": bool(fit.consistent),
        "no_halted_paths": report["halted_paths"] == 0,
    }
    return {"report": report, "checks": checks}


# --- superposition -------------------------------------------------------------

def classify_superposition(spec: SuperpositionSpec) -> dict:
    """v0/v_s with v0 the largest packet speed and v_s the fastest spreading rate."""
    v0 = max(float(np.max(np.abs(c.velocities))) for c in spec.components)
    vs = max(float(np.max(c.spreading_velocity)) for c in spec.components)
    ratio = v0 / vs
    label = ("collision-like" if ratio >= COLLISION_RATIO else
             "interference-like" if ratio <= INTERFERENCE_RATIO else "intermediate")
    return {"v0": v0, "v_s": vs, "ratio": ratio, "label": label}


def run_superposition(cfg: ScenarioConfig, out: RunOutput) -> dict:
    n = cfg.numerics
    spec = cfg.spec()
    T = float(n["t_final"])
    cls = classify_superposition(spec)
    x_init = sample_initial_positions(spec, int(n["n_trajectories"]), method="quantile",
                                      seed=cfg.outputs["seed"])
    ens = integrate_ensemble(AnalyticProvider(spec), x_init, (0.0, T), tol=float(n["tol"]),
                             n_times=int(n["n_times"]))
    nc = check_noncrossing(ens)
    out.csv("trajectories.csv", ["path_id", "t", "x"],
            [(i, t, float(x)) for i in range(ens.n_paths) for t, x in zip(ens.times, ens.paths[i])])

    xs = np.linspace(*n["field_extent"], int(n["field_points"]))
    ts = ens.times
    rho = np.empty((len(ts), len(xs)))
    phase = np.empty_like(rho)
    vel = np.empty_like(rho)
    for k, t in enumerate(ts):
        psi = psi_and_derivatives(spec, xs, t)[0]
        fs = field_sample(spec, xs, t)
        rho[k], phase[k], vel[k] = np.abs(psi) ** 2, np.angle(psi), fs.v
    out.csv("fields.csv", ["t", "x", "rho", "phase", "v"],
            [(t, x, rho[k, j], phase[k, j], vel[k, j]) for k, t in enumerate(ts) for j, x in enumerate(xs)])

    xf = np.linspace(*n["field_extent"], int(n["fringe_points"]))
    rho_f = np.abs(psi_and_derivatives(spec, xf, T)[0]) ** 2
    sig_T = max(float(np.max(sigma_t(c, T))) for c in spec.components)
    final = classify_final_density(rho_f, xf, sig_T, min_prominence=n["min_prominence"])
    try:
        fr = find_fringes(rho_f, xf, min_prominence=n["min_prominence"])
        out.csv("fringes.csv", ["position", "height", "fwhm"],
                [(p["position"], p["height"], p["fwhm"]) for p in fr.peaks])
        fringe_doc = fr.to_dict()
    except TooFewPeaks:
        fringe_doc = None

    report = {"classification": cls, "noncrossing": nc.to_dict(), "final_density": final,
              "fringes": fringe_doc, "t_final": T, "halted_paths": len(ens.halted)}
    out.json("report.json", report)

    fig = Figure(1100, 420)
    step_t = max(1, len(ts) // 100)
    step_x = max(1, len(xs) // 120)
    for k, (field, title) in enumerate(((rho, "density"), (phase, "phase"), (vel, "velocity"))):
        pan = fig.panel((60 + 350 * k, 40, 300, 320), (xs[0], xs[-1]), (ts[0], ts[-1]),
                        title=title, xlabel="x", ylabel="t" if k == 0 else None)
        pan.heatmap(xs[::step_x], ts[::step_t], field[::step_t, ::step_x].T)
        if k == 0:
            for i in range(ens.n_paths):
                pan.polyline(ens.paths[i], ts, color="white", width=0.6)
    out.svg("fields.svg", fig)

    expected = {"collision-like": "two_lobes", "interference-like": "fringes"}.get(cls["label"])
    checks = {"noncrossing": bool(nc.passed)}
    if expected is not None:
        checks["final_density_matches_label"] = final["label"] == expected
    return {"report": report, "checks": checks}


# --- effective well --------------------------------------------------------------

def run_effective_well(cfg: ScenarioConfig, out: RunOutput) -> dict:
    from .well import V0, compare_with_superposition, x_min

    n = cfg.numerics
    wp = cfg.well_params()
    T = float(n["t_final"])
    comp = compare_with_superposition(wp, cfg.grid(), T, dt=float(n["dt"]),
                                      include_well=bool(n["include_well"]),
                                      min_prominence=float(n["min_prominence"]))
    band = tuple(n["halfwidth_band"])
    doc = comp.to_dict()
    doc["halfwidth_ok"] = comp.halfwidth_ok(band)
    doc["halfwidth_band"] = list(band)
    doc["well_width"] = float(x_min(wp, T))
    doc["well_depth"] = float(V0(wp, T))
    out.json("report.json", doc)
    out.csv("densities.csv", ["x", "rho_well", "rho_superposition"],
            zip(comp.x, comp.rho_well, comp.rho_superposition))
    for name, rep in (("fringes_well.csv", comp.fringes_well), ("fringes_superposition.csv",
                                                                 comp.fringes_superposition)):
        if rep is not None:
            out.csv(name, ["position", "height", "fwhm"],
                    [(p["position"], p["height"], p["fwhm"]) for p in rep.peaks])

    fig = Figure(700, 420)
    # show the region where the superposition density is appreciable
    keep = comp.rho_superposition > 1e-4 * comp.rho_superposition.max()
    xlo = float(comp.x[keep].min()) if keep.any() else float(comp.x[0])
    pan = fig.panel((70, 40, 600, 320), (xlo, 0.0),
                    (0.0, 1.05 * max(comp.rho_well.max(), comp.rho_superposition.max())),
                    title=f"t = {T:g}", xlabel="x", ylabel="density")
    pan.polyline(comp.x, comp.rho_superposition, color="black", dash="5,3")
    pan.polyline(comp.x, comp.rho_well, color="#d02020", width=1.5)
    out.svg("overlay.svg", fig)

    hw = doc["halfwidth_ok"]
    checks = {"fringe_agreement_within_cell": comp.fringe_agreement,
              "halfwidth_well": bool(hw["well"]), "halfwidth_superposition": bool(hw["superposition"])}
    return {"report": doc, "checks": checks}


# --- 2D reaction ---------------------------------------------------------------

def transmitted_flux(state, plane_index: int) -> float:
    """Probability flux through the line x = x[plane_index] (spectral d/dx)."""
    g = state.geometry
    kx = g.wavenumbers()[0][:, None]
    dpsi = np.fft.ifft(1j * kx * np.fft.fft(state.psi, axis=0), axis=0)
    jx = (state.hbar / state.mass) * np.imag(np.conj(state.psi[plane_index]) * dpsi[plane_index])
    return float(np.sum(jx) * g.spacing[1])


def run_reaction_2d(cfg: ScenarioConfig, out: RunOutput) -> dict:
    n = cfg.numerics
    spec = cfg.spec()
    p = spec.components[0]
    geo = cfg.grid()
    if geo.dimension != 2:
        raise ConfigError("reaction_2d needs a 2D grid")
    pot_params = dict(cfg.physics["potential"], mass=spec.mass)
    pot = PotentialSpec("model_pes_2d", pot_params)
    dt = float(n["dt"])
    state = initialize_grid(spec, geo)
    stepper = SpectralPropagator(geo, pot, dt, spec.mass, spec.hbar)
    absorber = AbsorbingLayer(geo, float(n["absorber_width"]), float(n["absorber_strength"]), dt)
    x = geo.axis(0)
    plane = int(np.argmin(np.abs(x)))       # dividing surface through the saddle
    n_steps = int(round(float(n["t_final"]) / dt))
    fstride, sstride = int(n["flux_stride"]), int(n["snapshot_stride"])

    series = [(0.0, transmitted_flux(state, plane))]
    snaps, vortex_reports = [state], []

    def record(st):
        rep = detect_vortices(st, float(n["vortex_threshold"]))
        vortex_reports.append({"t": st.t, "count": rep.count, "vortices": rep.vortices})

    record(state)
    for i in range(1, n_steps + 1):
        state = stepper.step(state)
        state = state.evolved(state.psi, i * dt)
        state = absorber.apply(state)
        if i % fstride == 0 or i == n_steps:
            series.append((state.t, transmitted_flux(state, plane)))
        if i % sstride == 0 or i == n_steps:
            snaps.append(state)
            record(state)

    ts = np.array([s[0] for s in series])
    flux = np.array([s[1] for s in series])
    transmitted = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(ts) * (flux[1:] + flux[:-1]))])
    out.csv("transmission.csv", ["t", "flux", "transmitted"], zip(ts, flux, transmitted))
    out.json("vortices.json", vortex_reports)
    out.snapshots(snaps)

    # the packet front (3 sigma ahead of the center) reaches the barrier edge
    vx = float(p.velocities[0])
    front = float(p.centers[0]) + 3.0 * float(p.sigmas[0])
    barrier_edge = -float(cfg.physics["potential"]["barrier_width"])
    t_arrival = (barrier_edge - front) / vx if vx > 0 else np.inf
    early = [r["count"] for r in vortex_reports if r["t"] < t_arrival]
    ratios = [v["circulation"] / (v["winding"] * v["quantum"])
              for r in vortex_reports for v in r["vortices"]]
    report = {
        "t_arrival": t_arrival, "transmitted_fraction": float(transmitted[-1]),
        "absorbed": absorber.absorbed, "final_norm": state.norm(),
        "vortex_counts": [[r["t"], r["count"]] for r in vortex_reports],
        "max_circulation_error": float(np.max(np.abs(np.array(ratios) - 1))) if ratios else None,
        "dividing_surface_x": float(x[plane]),
    }
    out.json("report.json", report)

    if "svg" in out.formats:
        y = geo.axis(1)
        V = pot.evaluate(geo)[0]
        ag = n["arrow_grid"]
        si = max(1, len(x) // int(ag[0]))
        sj = max(1, len(y) // int(ag[1]))
        for k, st in enumerate(snaps):
            rho = st.rho
            fig = Figure(720, 420)
            pan = fig.panel((60, 40, 620, 310), (x[0], x[-1]), (y[0], y[-1]),
                            title=f"t = {st.t:.3f}", xlabel="x", ylabel="y")
            vmax = float(np.max(V[np.abs(geo.mesh()[..., 1]) < 5])) if np.any(V) else 1.0
            pan.contour(x, y, V, np.linspace(0.1, 0.9, 5) * vmax, color="#bbbbbb", width=0.5)
            pan.contour(x, y, rho, np.array([0.02, 0.1, 0.3, 0.6]) * rho.max(), color="#d02020")
            v = synthesize_fields(st).v
            sub = (slice(None, None, si), slice(None, None, sj))
            mask = rho[sub] > 1e-2 * rho.max()
            vx_, vy_ = (np.where(mask, v[sub][..., c], np.nan) for c in (0, 1))
            X, Y = np.meshgrid(x[::si], y[::sj], indexing="ij")
            speed = np.nanmax(np.hypot(vx_, vy_)) if mask.any() else 1.0
            pan.arrows(X, Y, vx_, vy_, scale=1.2 * si * geo.spacing[0] / speed, color="#1f4fbf")
            out.svg(f"snapshot_{k:04d}.svg", fig)

    checks = {
        "no_vortices_before_arrival": all(c == 0 for c in early),
        "vortices_present": any(r["count"] > 0 for r in vortex_reports),
        "circulation_quantized_1pct": bool(all(abs(r - 1) < 1e-2 for r in ratios)),
    }
    return {"report": report, "checks": checks}


RUNNERS = {"free_gaussian": run_free_gaussian, "superposition": run_superposition,
           "effective_well": run_effective_well, "reaction_2d": run_reaction_2d}


def run(cfg: ScenarioConfig) -> dict:
    """Run one scenario and write its outputs and manifest."""
    out = RunOutput(cfg)
    result = RUNNERS[cfg.scenario](cfg, out)
    result["manifest"] = out.manifest(result["checks"])
    result["files"] = sorted(set(out.files))
    return result


def _parse_overrides(rest):
    pairs = []
    i = 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(rest):
                raise ConfigError(f"override {tok} needs a value")
            val = rest[i + 1]
            i += 2
        pairs.append((key, parse_value(val)))
    return pairs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bohmflow", description=__doc__.split("\n")[0],
                                     epilog="Overrides: --physics.KEY, --numerics.KEY, --outputs.KEY "
                                            "(dotted paths, JSON values).")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
    parser.add_argument("--check", action="store_true", help="exit 4 unless every scenario check passes")
    parser.add_argument("--no-well", action="store_true", help="effective_well ablation: wall only")
    args, rest = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(rest)
        if args.no_well:
            overrides.append(("numerics.include_well", False))
        cfg = ScenarioConfig.load(args.config, args.scenario, overrides)
        result = run(cfg)
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BohmflowError as exc:
        print(f"configuration error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(result['files'])} files and {result['manifest']}")
    for name, ok in result["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    if args.check and not all(result["checks"].values()):
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
