"""Bohmian trajectory ensembles: initial sampling, adaptive integration
through analytic or gridded velocity fields, and path diagnostics."""
from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.integrate import cumulative_simpson

from .analytic import DENSITY_FLOOR, GaussianParams, SuperpositionSpec, psi_and_derivatives
from .errors import (NodalRegionEncounter, ProviderRangeExceeded, UnnormalizableDensity,
                     WindowOutOfRange)
from .grid import GridState, derivatives

DEFAULT_THRESHOLDS = (0.1, 10.0)


# --- velocity providers ---------------------------------------------------

class AnalyticProvider:
    """Velocity field of a closed-form superposition."""

    def __init__(self, spec: SuperpositionSpec, floor: float = DENSITY_FLOOR):
        self.spec = spec
        self.floor = floor
        self.dimension = spec.dimension
        self.t_range = (-np.inf, np.inf)
        self.length_scale = float(min(np.min(c.sigmas) for c in spec.components))

    def velocity(self, x, t):
        psi, grad, _ = psi_and_derivatives(self.spec, x, t)
        rho = np.abs(psi) ** 2
        ok = rho > self.floor
        with np.errstate(divide="ignore", invalid="ignore"):
            v = (self.spec.hbar / self.spec.mass) * np.imag(np.conj(psi)[..., None] * grad) / rho[..., None]
        return (v[..., 0] if self.dimension == 1 else v), ok

    def describe(self) -> dict:
        return {"source": "analytic", "components": len(self.spec.components)}


class GridProvider:
    """Velocity field interpolated from a time-ordered series of grid snapshots.

    psi and grad psi are spline-interpolated in space (order 3 for
    ``cubic``, 1 for ``bilinear``); the resulting velocities are combined
    linearly in time between the two bracketing snapshots.
    """

    def __init__(self, snapshots: Sequence[GridState], interpolation: str = "cubic",
                 floor: float = DENSITY_FLOOR, cache_size: int = 8):
        if len(snapshots) < 2:
            raise ValueError("need at least two snapshots")
        self.snapshots = list(snapshots)
        self.times = np.array([s.t for s in self.snapshots])
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must increase")
        self.order = {"cubic": 3, "bilinear": 1}[interpolation]
        self.interpolation = interpolation
        self.floor = floor
        g = self.snapshots[0].geometry
        self.geometry = g
        self.dimension = g.dimension
        self.t_range = (self.times[0], self.times[-1])
        self.length_scale = float(min(g.spacing)) * 10
        self._cache: OrderedDict[int, tuple] = OrderedDict()
        self._cache_size = cache_size

    def _coefficients(self, k):
        if k in self._cache:
            self._cache.move_to_end(k)
            return self._cache[k]
        s = self.snapshots[k]
        grad, _ = derivatives(s)
        periodic = s.boundary == "periodic"
        mode = "grid-wrap" if periodic else "constant"
        arrays = [s.psi] + [grad[..., i] for i in range(self.dimension)]
        coeffs = []
        for a in arrays:
            parts = []
            for part in (a.real, a.imag):
                parts.append(ndimage.spline_filter(part, order=self.order, mode=mode)
                             if self.order > 1 else np.asarray(part))
            coeffs.append(parts)
        entry = (coeffs, mode, periodic)
        self._cache[k] = entry
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return entry

    def _velocity_at(self, k, x):
        coeffs, mode, periodic = self._coefficients(k)
        g = self.geometry
        X = np.asarray(x, float).reshape(-1, self.dimension) if self.dimension > 1 else np.asarray(x, float).reshape(-1, 1)
        idx = np.empty((self.dimension, X.shape[0]))
        inside = np.ones(X.shape[0], bool)
        for k_ax, ((lo, hi), h) in enumerate(zip(g.extents, g.spacing)):
            idx[k_ax] = (X[:, k_ax] - lo) / h
            if not periodic:
                inside &= (X[:, k_ax] >= lo) & (X[:, k_ax] <= hi)
        vals = []
        for re_c, im_c in coeffs:
            re = ndimage.map_coordinates(re_c, idx, order=self.order, mode=mode, prefilter=False)
            im = ndimage.map_coordinates(im_c, idx, order=self.order, mode=mode, prefilter=False)
            vals.append(re + 1j * im)
        psi = vals[0]
        grad = np.stack(vals[1:], axis=-1)
        s = self.snapshots[k]
        rho = np.abs(psi) ** 2
        ok = (rho > self.floor) & inside
        with np.errstate(divide="ignore", invalid="ignore"):
            v = (s.hbar / s.mass) * np.imag(np.conj(psi)[:, None] * grad) / rho[:, None]
        return v, ok

    def velocity(self, x, t):
        lo, hi = self.t_range
        span = hi - lo
        if t < lo - 1e-12 * span or t > hi + 1e-12 * span:
            raise ProviderRangeExceeded(f"t={t:g} outside snapshot range [{lo:g}, {hi:g}]")
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        v0, ok0 = self._velocity_at(k, x)
        if lam <= 0.0:
            v, ok = v0, ok0
        else:
            v1, ok1 = self._velocity_at(k + 1, x)
            v, ok = (1.0 - lam) * v0 + lam * v1, ok0 & ok1
        shape = np.shape(x) if self.dimension == 1 else np.shape(x)[:-1]
        v = v[:, 0].reshape(shape) if self.dimension == 1 else v.reshape(shape + (self.dimension,))
        return v, ok.reshape(shape)

    def describe(self) -> dict:
        return {"source": "grid", "interpolation": self.interpolation,
                "snapshots": len(self.snapshots), "geometry": self.geometry.to_dict()}


# --- ensembles ------------------------------------------------------------

@dataclass
class TrajectoryEnsemble:
    """Paths on a shared time base. ``paths`` has shape (N, T) in 1D and
    (N, T, 2) in 2D; entries after a nodal halt are NaN."""

    times: np.ndarray
    paths: np.ndarray
    weights: np.ndarray
    initial_positions: np.ndarray
    halted: list[NodalRegionEncounter] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    def positions_at(self, index: int) -> np.ndarray:
        return self.paths[:, index]

    def mean_position(self) -> np.ndarray:
        w = self.weights / self.weights.sum()
        return np.tensordot(w, self.paths, axes=(0, 0))


def _cdf_on_grid(f, lo, hi, n_grid):
    x = np.linspace(lo, hi, n_grid)
    y = np.asarray(f(x), float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise UnnormalizableDensity("density must be finite and non-negative")
    cdf = cumulative_simpson(y, x=x, initial=0.0)
    total = cdf[-1]
    if not np.isfinite(total) or total <= 0:
        raise UnnormalizableDensity("density integrates to zero or diverges")
    return x, y, cdf, total


def _quantiles_callable(f, bounds, q, n_grid=2**14 + 1, newton_steps=3):
    lo, hi = bounds
    x, _, cdf, total = _cdf_on_grid(f, lo, hi, n_grid)
    cdf = cdf / total
    # np.interp needs a strictly increasing abscissa; flat stretches carry no mass
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    xq = np.interp(q, cdf[keep], x[keep])
    nodes, wts = np.polynomial.legendre.leggauss(10)
    for _ in range(newton_steps):
        i = np.clip(np.searchsorted(x, xq) - 1, 0, len(x) - 2)
        a = x[i]
        half = 0.5 * (xq - a)
        pts = a[:, None] + half[:, None] * (nodes[None, :] + 1.0)
        F = cdf[i] + (half * np.sum(wts[None, :] * f(pts), axis=1)) / total
        dens = f(xq) / total
        step = np.where(dens > 0, (F - q) / np.where(dens > 0, dens, 1.0), 0.0)
        xq = np.clip(xq - step, lo, hi)
    return xq


def sample_initial_positions(rho0, n, bounds=None, method: str = "quantile", seed: int = 0):
    """Initial positions distributed like ``rho0``.

    ``rho0`` may be a callable (``bounds`` required), an ``(x, rho)`` pair of
    samples, a GaussianParams/SuperpositionSpec (density at t = 0), or in 2D
    a pair of 1D densities for a separable profile (``n`` then is (nx, ny)).
    Quantile mode puts sample i at the (i - 1/2)/n quantile; ``random`` draws
    with a fixed seed. Non-separable 2D callables use rejection sampling.
    """
    if isinstance(rho0, GaussianParams):
        rho0 = SuperpositionSpec.single(rho0)
    if isinstance(rho0, SuperpositionSpec):
        spec = rho0
        if spec.dimension == 2:
            if len(spec.components) == 1:
                c = spec.components[0]
                dens = [GaussianParams(c.mass, c.hbar, c.sigmas[k], c.centers[k], c.velocities[k])
                        for k in range(2)]
                return sample_initial_positions(tuple(dens), n, method=method, seed=seed)
            lo = np.min([c.centers - 12 * c.sigmas for c in spec.components], axis=0)
            hi = np.max([c.centers + 12 * c.sigmas for c in spec.components], axis=0)
            f2 = lambda r: np.abs(psi_and_derivatives(spec, r, 0.0)[0]) ** 2
            return _rejection_2d(f2, ((lo[0], hi[0]), (lo[1], hi[1])), n, seed)
        lo = min(c.centers[0] - 12 * c.sigmas[0] for c in spec.components)
        hi = max(c.centers[0] + 12 * c.sigmas[0] for c in spec.components)
        rho0 = lambda x: np.abs(psi_and_derivatives(spec, x, 0.0)[0]) ** 2
        bounds = (lo, hi)
    if isinstance(rho0, tuple) and len(rho0) == 2 and \
            all(isinstance(r, GaussianParams) or callable(r) for r in rho0):
        nx, ny = (n, n) if np.isscalar(n) else n
        bx, by = bounds if bounds is not None else (None, None)
        xs = sample_initial_positions(rho0[0], nx, bx, method=method, seed=seed)
        ys = sample_initial_positions(rho0[1], ny, by, method=method, seed=seed + 1)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=-1)
    if n < 1:
        raise ValueError("n must be at least 1")
    if method == "quantile":
        q = (np.arange(1, n + 1) - 0.5) / n
    elif method == "random":
        q = np.sort(np.random.default_rng(seed).random(n))
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    if callable(rho0):
        if bounds is None:
            raise ValueError("bounds are required for a callable density")
        if np.ndim(bounds[0]) > 0:
            return _rejection_2d(rho0, bounds, n, seed)
        return _quantiles_callable(rho0, bounds, q)
    x, f = (np.asarray(a, float) for a in rho0)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise UnnormalizableDensity("density must be finite and non-negative")
    mid = 0.5 * (f[1:] + f[:-1]) * np.diff(x)
    total = mid.sum()
    if total <= 0:
        raise UnnormalizableDensity("density integrates to zero")
    cdf = np.concatenate(([0.0], np.cumsum(mid) / total))
    keep = np.concatenate(([True], np.diff(cdf) > 0))
    return np.interp(q, cdf[keep], x[keep])


def _rejection_2d(f, bounds, n, seed):
    (x0, x1), (y0, y1) = bounds
    rng = np.random.default_rng(seed)
    probe = np.stack(np.meshgrid(np.linspace(x0, x1, 201), np.linspace(y0, y1, 201), indexing="ij"), -1)
    fmax = np.max(f(probe)) * 1.2
    if not np.isfinite(fmax) or fmax <= 0:
        raise UnnormalizableDensity("density vanishes on the sampling box")
    out = []
    while sum(len(o) for o in out) < n:
        pts = np.column_stack([rng.uniform(x0, x1, 4 * n), rng.uniform(y0, y1, 4 * n)])
        out.append(pts[rng.uniform(0, fmax, 4 * n) < f(pts)])
    return np.concatenate(out)[:n]


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def integrate_ensemble(provider, initial, t_span, tol: float = 1e-8, times=None,
                       n_times: int = 201, atol: float | None = None,
                       weights=None, strict: bool = False, max_steps: int = 10**6,
                       h_min: float | None = None) -> TrajectoryEnsemble:
    """Integrate dx/dt = v(x, t) for every initial position.

    Adaptive Dormand-Prince 5(4) with a step shared by all live paths; the
    step is accepted only when every path meets
    |err| <= atol + tol * |x|, with ``atol`` defaulting to tol times the
    provider's length scale. Steps land exactly on ``times``. A path whose
    velocity becomes undefined is halted and recorded in ``halted``
    (raised instead when ``strict``).
    """
    t0, t1 = map(float, t_span)
    lo, hi = provider.t_range
    if t0 < lo or t1 > hi:
        raise ProviderRangeExceeded(f"t_span [{t0:g}, {t1:g}] outside provider range [{lo:g}, {hi:g}]")
    if times is None:
        times = np.linspace(t0, t1, n_times)
    times = np.asarray(times, float)
    if times[0] != t0 or times[-1] != t1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must increase from t_span[0] to t_span[1]")
    dim = provider.dimension
    x = np.array(initial, dtype=float)
    if dim == 1:
        x = x.reshape(-1)
    n = x.shape[0]
    X = x.reshape(n, -1).copy()
    if atol is None:
        atol = tol * provider.length_scale
    if h_min is None:
        h_min = 1e-14 * max(1.0, abs(t1), abs(t0))
    if weights is None:
        weights = np.full(n, 1.0 / n)

    def vel(pos, t):
        v, ok = provider.velocity(pos if dim > 1 else pos[:, 0], t)
        return np.asarray(v, float).reshape(len(pos), -1), np.asarray(ok, bool).reshape(-1)

    out = np.full((n, len(times), X.shape[1]), np.nan)
    out[:, 0] = X
    active = np.ones(n, bool)
    halted: list[NodalRegionEncounter] = []

    def halt(ids, t):
        for i in ids:
            if active[i]:
                active[i] = False
                exc = NodalRegionEncounter(i, t, X[i].copy())
                if strict:
                    raise exc
                halted.append(exc)

    t = t0
    k1, ok = vel(X, t)
    if not ok.all():
        halt(np.flatnonzero(~ok), t)
    scale = max(np.max(np.abs(k1[active])) if active.any() else 0.0, 1e-300)
    h = min(0.01 * (t1 - t0), 0.01 * provider.length_scale / scale) if t1 > t0 else 0.0
    h = max(h, 1e-6 * (t1 - t0))
    out_i = 1
    steps = 0
    while out_i < len(times) and active.any():
        steps += 1
        if steps > max_steps:
            raise RuntimeError("step budget exhausted")
        target = times[out_i]
        h_try = min(h, target - t)
        last = h_try == target - t
        ids = np.flatnonzero(active)
        Xa = X[ids]
        K = [k1[ids]]
        bad = np.zeros(len(ids), bool)
        for s in range(1, 7):
            xs = Xa + h_try * sum(a * K[j] for j, a in enumerate(_A[s]))
            ks, oks = vel(xs, t + _C[s] * h_try)
            bad |= ~oks
            K.append(np.where(oks[:, None], ks, 0.0))
        if bad.any():
            if h_try <= h_min:
                halt(ids[bad], t)
                continue
            h = max(h_try / 4.0, h_min)
            continue
        x5 = Xa + h_try * sum(b * k for b, k in zip(_B5, K))
        err = h_try * sum(e * k for e, k in zip(_E, K))
        sc = atol + tol * np.maximum(np.abs(Xa), np.abs(x5))
        enorm = np.max(np.abs(err) / sc) if len(ids) else 0.0
        if enorm <= 1.0 or h_try <= h_min:
            t = target if last else t + h_try
            X[ids] = x5
            k1[ids] = K[6]
            if last:
                out[active, out_i] = X[active]
                out_i += 1
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** -0.2))
            if not last or fac < 1.0:
                h = h_try * fac
        else:
            h = h_try * max(0.2, 0.9 * enorm ** -0.2)
    paths = out[..., 0] if dim == 1 else out
    init = np.array(initial, float).reshape(n) if dim == 1 else np.array(initial, float).reshape(n, dim)
    meta = {"tol": tol, "atol": atol, "t_span": [t0, t1], "steps": steps,
            "provider": provider.describe() if hasattr(provider, "describe") else str(provider)}
    return TrajectoryEnsemble(times, paths, np.asarray(weights, float), init, halted, meta)


def classify_regime(params: GaussianParams, t, thresholds=DEFAULT_THRESHOLDS) -> str:
    """huygens for t < th1 tau, fraunhofer for t > th2 tau, fresnel between."""
    th1, th2 = thresholds
    tau = float(np.min(params.tau))
    t = abs(float(t))
    if t < th1 * tau:
        return "huygens"
    if t > th2 * tau:
        return "fraunhofer"
    return "fresnel"


@dataclass
class NonCrossingReport:
    passed: bool
    first_violation: tuple | None = None   # (path_a, path_b, time_index, t)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "first_violation": self.first_violation}


def check_noncrossing(ensemble: TrajectoryEnsemble) -> NonCrossingReport:
    """Pass iff the position sort order of the 1D paths never changes."""
    paths = ensemble.paths
    if paths.ndim != 2:
        raise ValueError("non-crossing check is defined for 1D ensembles")
    finite = np.all(np.isfinite(paths), axis=1)
    ids = np.flatnonzero(finite)
    ref = ids[np.argsort(paths[ids, 0], kind="stable")]
    for k in range(1, paths.shape[1]):
        col = paths[ref, k]
        d = np.diff(col)
        if np.any(d <= 0):
            j = int(np.flatnonzero(d <= 0)[0])
            return NonCrossingReport(False, (int(ref[j]), int(ref[j + 1]), k, float(ensemble.times[k])))
    return NonCrossingReport(True)


def asymptotic_slope(ensemble: TrajectoryEnsemble, window) -> np.ndarray:
    """Least-squares velocity of each path over ``window`` = (t_a, t_b)."""
    ta, tb = window
    times = ensemble.times
    if ta < times[0] or tb > times[-1] or tb <= ta:
        raise WindowOutOfRange(f"window [{ta:g}, {tb:g}] outside [{times[0]:g}, {times[-1]:g}]")
    sel = (times >= ta) & (times <= tb)
    if sel.sum() < 2:
        raise WindowOutOfRange("fewer than two samples inside the window")
    tt = times[sel]
    y = ensemble.paths[:, sel]
    if y.ndim == 2:
        return np.polyfit(tt, y.T, 1)[0]
    return np.stack([np.polyfit(tt, y[..., k].T, 1)[0] for k in range(y.shape[-1])], axis=-1)


# --- export ---------------------------------------------------------------

def write_ensemble_csv(path, ensemble: TrajectoryEnsemble) -> None:
    """One row per (path, time): path_id, t, x[, y]."""
    two_d = ensemble.paths.ndim == 3
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "t", "x", "y"] if two_d else ["path_id", "t", "x"])
        for i in range(ensemble.n_paths):
            for k, t in enumerate(ensemble.times):
                pos = ensemble.paths[i, k]
                vals = [repr(float(p)) for p in pos] if two_d else [repr(float(pos))]
                w.writerow([i, repr(float(t))] + vals)


def write_ensemble_sidecar(path, ensemble: TrajectoryEnsemble, parameters: dict | None = None,
                           seed: int | None = None) -> None:
    doc = {
        "parameters": parameters or {},
        "tolerances": {"tol": ensemble.meta.get("tol"), "atol": ensemble.meta.get("atol")},
        "provider": ensemble.meta.get("provider"),
        "seed": seed,
        "n_paths": ensemble.n_paths,
        "n_times": len(ensemble.times),
        "halted": [{"path_id": h.path_id, "t": h.t} for h in ensemble.halted],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=float)
