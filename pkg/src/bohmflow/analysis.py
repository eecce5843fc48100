"""Observables extracted from densities, snapshots and ensembles."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks

from .analytic import GaussianParams, closed_form_trajectory
from .errors import FitDiverged, GeometryMismatch, TooFewPeaks
from .grid import GridState, derivatives, divergence, synthesize_fields


@dataclass
class FringeReport:
    peaks: list[dict]
    spacing_estimate: float
    innermost_ratio: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["position", "height", "fwhm"])
            for p in self.peaks:
                w.writerow([repr(p["position"]), repr(p["height"]), repr(p["fwhm"])])


def _crossing(x, rho, i, half, step):
    """Walk from index i in direction ``step`` to the half-height crossing."""
    n = len(rho)
    j = i
    while 0 <= j + step < n and rho[j + step] >= half:
        j += step
    k = j + step
    if not 0 <= k < n:
        return x[j]
    # linear interpolation between j (>= half) and k (< half)
    return x[j] + (x[k] - x[j]) * (rho[j] - half) / (rho[j] - rho[k])


def find_fringes(rho, x=None, min_prominence: float = 0.05, wall: str | None = None) -> FringeReport:
    """Local maxima of a sampled 1D density with their FWHM.

    Widths come from linear interpolation of the half-height crossings. With
    ``wall`` ('left' or 'right') a maximum sitting on that edge of the sample
    counts as a peak, its width truncated at the edge, and it is the peak
    used for ``innermost_ratio``; without a wall the peak nearest the middle
    of the range is used.
    """
    rho = np.asarray(rho, float)
    x = np.arange(len(rho), dtype=float) if x is None else np.asarray(x, float)
    if not 0 < min_prominence < 1:
        raise ValueError("min_prominence must lie in (0, 1)")
    top = rho.max()
    thr = min_prominence * top
    idx, _ = find_peaks(rho, prominence=thr)
    idx = list(idx)
    if wall in ("left", "right"):
        e, nb = (0, 1) if wall == "left" else (len(rho) - 1, len(rho) - 2)
        if rho[e] >= rho[nb]:
            if idx:
                near = min(idx) if wall == "left" else max(idx)
                seg = rho[:near + 1] if wall == "left" else rho[near:]
            else:
                seg = rho
            if rho[e] - seg.min() >= thr:
                idx.append(e)
    elif wall is not None:
        raise ValueError("wall must be None, 'left' or 'right'")
    idx = sorted(set(int(i) for i in idx))
    if len(idx) < 2:
        raise TooFewPeaks(f"found {len(idx)} peak(s)")
    peaks = []
    for i in idx:
        half = 0.5 * rho[i]
        left = _crossing(x, rho, i, half, -1)
        right = _crossing(x, rho, i, half, +1)
        peaks.append({"position": float(x[i]), "height": float(rho[i]), "fwhm": float(right - left)})
    pos = np.array([p["position"] for p in peaks])
    spacing = float(np.median(np.diff(pos)))
    ratio = None
    if len(peaks) >= 3:
        if wall == "right":
            k = len(peaks) - 1
        elif wall == "left":
            k = 0
        else:
            k = int(np.argmin(np.abs(pos - 0.5 * (x[0] + x[-1]))))
        others = [p["fwhm"] for j, p in enumerate(peaks) if j != k]
        ratio = float(peaks[k]["fwhm"] / np.median(others))
    return FringeReport(peaks, spacing, ratio)


@dataclass
class SigmaFit:
    sigma0: float
    tau: float
    rms_residual: float
    consistent: bool
    ok: bool

    def to_dict(self) -> dict:
        return asdict(self)


def density_variance(x, rho) -> float:
    w = rho / np.sum(rho)
    mu = np.sum(w * x)
    return float(np.sum(w * (x - mu) ** 2))


def fit_sigma(times, x, densities, mass: float = 1.0, hbar: float = 1.0,
              threshold: float = 1e-3) -> SigmaFit:
    """Fit variance(rho_t) = sigma0^2 (1 + (t/tau)^2) with sigma0 and tau free.

    ``rms_residual`` is relative to the variances. The fit is ``consistent``
    when tau matches 2 m sigma0^2 / hbar within 1%, and ``ok`` when it is
    consistent and the residual is below ``threshold``; a superposition or
    any non-free evolution fails one of the two.
    """
    times = np.asarray(times, float)
    if len(times) < 5:
        raise ValueError("need at least five snapshots")
    var = np.array([density_variance(x, r) for r in densities])

    def model(t, s0, tau):
        return s0**2 * (1.0 + (t / tau) ** 2)

    s_guess = np.sqrt(var[0])
    tau_guess = 2 * mass * s_guess**2 / hbar
    try:
        popt, _ = curve_fit(model, times, var, p0=(s_guess, tau_guess), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitDiverged(str(exc)) from exc
    s0, tau = abs(popt[0]), abs(popt[1])
    if not np.isfinite(s0) or not np.isfinite(tau):
        raise FitDiverged("non-finite parameters")
    rms = float(np.sqrt(np.mean(((model(times, s0, tau) - var) / var) ** 2)))
    consistent = bool(abs(tau - 2 * mass * s0**2 / hbar) <= 1e-2 * tau)
    return SigmaFit(float(s0), float(tau), rms, consistent, consistent and rms < threshold)


def continuity_residual(state_prev: GridState, state_next: GridState) -> float:
    """L2 norm over interior nodes of (rho_next - rho_prev)/dt + div J_mid,
    J_mid the mean of the two currents. Expected scaling O(dt^2 + dx^4)
    (spectral grids: O(dt^2))."""
    if state_prev.geometry != state_next.geometry:
        raise GeometryMismatch("snapshots live on different grids")
    dt = state_next.t - state_prev.t
    if dt <= 0:
        raise ValueError("snapshots must be time ordered")
    J = 0.5 * (synthesize_fields(state_prev).J + synthesize_fields(state_next).J)
    return _residual_norm(state_prev, state_next, J, dt)


def _residual_norm(state_prev, state_next, J, dt):
    res = (state_next.rho - state_prev.rho) / dt + divergence(state_next, J)
    interior = tuple(slice(2, -2) for _ in range(state_prev.geometry.dimension))
    return float(np.sqrt(np.sum(res[interior] ** 2) * state_prev.geometry.cell_volume))


@dataclass
class VortexReport:
    vortices: list[dict] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.vortices)

    def to_dict(self) -> dict:
        return {"count": self.count, "vortices": self.vortices}


def _wrap(phase):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - phase, 2.0 * np.pi)


def winding_numbers(psi, tie_tol: float = 1e-9) -> np.ndarray:
    """Integer phase winding around every plaquette (i, j)-(i+1, j)-(i+1, j+1)-(i, j+1).

    A phase jump of exactly pi (a sign change of a locally real field) has no
    direction; such ties are oriented so that the plaquette total is as close
    to zero as possible, so a real field never reports a singularity.
    """
    ph = np.angle(psi)
    a, b, c, d = ph[:-1, :-1], ph[1:, :-1], ph[1:, 1:], ph[:-1, 1:]
    diffs = np.stack([_wrap(b - a), _wrap(c - b), _wrap(d - c), _wrap(a - d)])
    tie = np.abs(diffs) > np.pi - tie_tol
    s = np.sum(np.where(tie, 0.0, diffs), axis=0)
    k = tie.sum(axis=0)
    # the k ties add pi * j with j in {-k, -k + 2, ..., k}
    j = np.clip(-s / np.pi, -k, k)
    j = k - 2 * np.rint((k - j) / 2)
    return np.rint((s + np.pi * j) / (2.0 * np.pi)).astype(int)


def _loop_circulation(state, grad, center, radius, n=256):
    """Trapezoid quadrature of v . dl on a circle, with psi and grad psi
    interpolated by cubic splines."""
    from scipy import ndimage

    g = state.geometry
    th = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)], -1)
    idx = np.stack([(pts[:, k] - g.extents[k][0]) / g.spacing[k] for k in range(2)])
    mode = "grid-wrap" if state.boundary == "periodic" else "nearest"

    def interp(a):
        return (ndimage.map_coordinates(a.real, idx, order=3, mode=mode)
                + 1j * ndimage.map_coordinates(a.imag, idx, order=3, mode=mode))

    psi = interp(state.psi)
    gx, gy = interp(grad[..., 0]), interp(grad[..., 1])
    rho = np.abs(psi) ** 2
    vx = (state.hbar / state.mass) * np.imag(np.conj(psi) * gx) / rho
    vy = (state.hbar / state.mass) * np.imag(np.conj(psi) * gy) / rho
    tangent = np.stack([-np.sin(th), np.cos(th)], -1) * radius
    return float(np.sum(vx * tangent[:, 0] + vy * tangent[:, 1]) * 2.0 * np.pi / n)


def detect_vortices(state: GridState, density_threshold: float = 1e-6) -> VortexReport:
    """Phase singularities of a 2D state.

    Every plaquette's wrapped phase differences are summed; nonzero totals
    are vortices placed at the plaquette center. Plaquettes whose mean
    corner density is below ``density_threshold`` times the peak density are
    skipped since their phase is round-off noise. Circulation is measured
    independently by quadrature of the velocity field on a small circle.
    """
    g = state.geometry
    if g.dimension != 2:
        raise ValueError("vortex detection needs a 2D state")
    psi = state.psi
    w = winding_numbers(psi)
    rho = np.abs(psi) ** 2
    corner = 0.25 * (rho[:-1, :-1] + rho[1:, :-1] + rho[1:, 1:] + rho[:-1, 1:])
    w = np.where(corner > density_threshold * rho.max(), w, 0)
    hx, hy = g.spacing
    ii, jj = np.nonzero(w)
    if len(ii) == 0:
        return VortexReport([])
    grad, _ = derivatives(state)
    centers = np.stack([g.extents[0][0] + (ii + 0.5) * hx, g.extents[1][0] + (jj + 0.5) * hy], -1)
    out = []
    for n, (i, j) in enumerate(zip(ii, jj)):
        others = np.delete(centers, n, axis=0)
        gap = np.min(np.hypot(*(others - centers[n]).T)) if len(others) else np.inf
        # 1.5 plaquette diagonals keeps the loop clear of a core anywhere in the plaquette
        radius = min(1.5 * np.hypot(hx, hy), 0.45 * gap)
        out.append({
            "position": [float(centers[n, 0]), float(centers[n, 1])],
            "winding": int(w[i, j]),
            "circulation": _loop_circulation(state, grad, centers[n], radius),
            "quantum": float(2.0 * np.pi * state.hbar / state.mass),
        })
    return VortexReport(out)


@dataclass
class EhrenfestReport:
    max_deviation: float
    passed: bool
    representative: bool
    predicted_max_deviation: float

    def to_dict(self) -> dict:
        return asdict(self)


def ehrenfest_check(ensemble, params: GaussianParams, tol: float = 1e-6) -> EhrenfestReport:
    """Compare the weighted ensemble mean with the classical path x_c + v0 t.

    ``predicted_max_deviation`` is what the exact free trajectories of the
    same starting points give; a sample whose mean start is off-center is
    flagged as not representative.
    """
    times = ensemble.times
    w = ensemble.weights / np.sum(ensemble.weights)
    mean = np.tensordot(w, ensemble.paths, axes=(0, 0))
    xc = params.centers if params.dimension > 1 else float(params.centers[0])
    v0 = params.velocities if params.dimension > 1 else float(params.velocities[0])
    t_shape = (-1,) + (1,) * (np.ndim(mean) - 1)
    classical = xc + v0 * times.reshape(t_shape)
    dev = float(np.max(np.abs(mean - classical)))
    x0 = ensemble.initial_positions
    x0 = x0[:, None] if x0.ndim == 1 else x0[:, None, :]
    exact = closed_form_trajectory(params, x0, times.reshape(t_shape))
    predicted = float(np.max(np.abs(np.tensordot(w, exact, axes=(0, 0)) - classical)))
    start_offset = float(np.max(np.abs(np.tensordot(w, ensemble.initial_positions, axes=(0, 0)) - xc)))
    representative = start_offset <= tol
    return EhrenfestReport(dev, dev <= tol, representative, predicted)


def ks_distance(samples, cdf) -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and a CDF callable."""
    s = np.sort(np.asarray(samples, float))
    n = len(s)
    F = cdf(s)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def fraunhofer_spacing(hbar: float, mass: float, t: float, separation: float) -> float:
    """Asymptotic fringe spacing 2 pi hbar t / (m d)."""
    return 2.0 * np.pi * hbar * t / (mass * separation)


def classify_final_density(rho, x, sigma, min_prominence: float = 0.05,
                           gap_fraction: float = 1e-3, min_fringes: int = 5) -> dict:
    """Label a 1D density as 'two_lobes', 'fringes' or 'unresolved'.

    two_lobes: exactly two maxima more than 4 ``sigma`` apart with the
    density between them below ``gap_fraction`` of the peak; fringes: at
    least ``min_fringes`` maxima. Peaks come from :func:`find_fringes`.
    """
    rho = np.asarray(rho, float)
    x = np.asarray(x, float)
    try:
        rep = find_fringes(rho, x, min_prominence=min_prominence)
    except TooFewPeaks:
        n = len(find_peaks(rho, prominence=min_prominence * rho.max())[0])
        return {"label": "unresolved", "n_peaks": int(n), "peaks": [], "sigma": float(sigma)}
    pos = [p["position"] for p in rep.peaks]
    out = {"n_peaks": len(pos), "peaks": pos, "sigma": float(sigma)}
    if len(pos) == 2:
        a, b = np.searchsorted(x, pos)
        gap_min = float(np.min(rho[a:b + 1]) / rho.max())
        out["separation"] = float(pos[1] - pos[0])
        out["gap_min_relative"] = gap_min
        if pos[1] - pos[0] > 4.0 * sigma and gap_min < gap_fraction:
            out["label"] = "two_lobes"
            return out
    out["label"] = "fringes" if len(pos) >= min_fringes else "unresolved"
    return out
