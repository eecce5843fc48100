"""Time-dependent square well plus hard wall that lets a single packet mimic
the interference of a symmetric two-packet superposition.

The well spans [-w(t), 0] with w(t) the width formula below, the wall
occupies x >= 0, and the incident packet starts at -x0_offset moving
towards the wall.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .analytic import GaussianParams, SuperpositionSpec, psi_and_derivatives, sigma_t
from .errors import ConfigError, DegenerateWell


@dataclass(frozen=True)
class EffectiveWellParams:
    """Incident packet (``base``: m, hbar, sigma0, v0 >= 0) and its initial
    distance ``x0_offset`` from the wall at the origin."""

    base: GaussianParams
    x0_offset: float
    wall_position: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.base.dimension != 1:
            raise ConfigError("the effective well is 1D")
        if self.p0 < 0:
            raise ConfigError("the incident momentum must be non-negative")
        if self.p0 == 0 and self.x0_offset == 0:
            raise DegenerateWell("p0 = 0 with x0 = 0 leaves the well width undefined at t = 0")

    @property
    def p0(self) -> float:
        return float(self.base.mass * self.base.velocities[0])

    @property
    def sigma0(self) -> float:
        return float(self.base.sigmas[0])

    def incident(self) -> GaussianParams:
        b = self.base
        return GaussianParams(b.mass, b.hbar, self.sigma0, -self.x0_offset, float(b.velocities[0]), 1.0)

    def mirrored_pair(self) -> SuperpositionSpec:
        """The symmetric two-packet superposition the well stands in for."""
        inc = self.incident()
        mirror = GaussianParams(inc.mass, inc.hbar, inc.sigma0, self.x0_offset, -float(inc.v0), 1.0)
        return SuperpositionSpec((inc, mirror))


def x_min(params: EffectiveWellParams, t):
    """Well width pi sigma_t^2 / (2 p0 sigma0^2 / hbar + (hbar t / 2 m sigma0^2) x0)."""
    b = params.base
    s0 = params.sigma0
    t = np.asarray(t, dtype=float)
    den = 2.0 * params.p0 * s0**2 / b.hbar + b.hbar * t / (2.0 * b.mass * s0**2) * params.x0_offset
    if np.any(den <= 0):
        raise DegenerateWell("well-width denominator is not positive")
    return np.pi * sigma_t(b, t) ** 2 / den


def V0(params: EffectiveWellParams, t):
    """Well depth 2 hbar^2 / (m x_min^2)."""
    b = params.base
    return 2.0 * b.hbar**2 / (b.mass * x_min(params, t) ** 2)


def potential_on_grid(params: EffectiveWellParams, geometry, t: float, include_well: bool = True):
    """Node potentials and wall mask at time ``t``.

    V = 0 left of the well, -V0 on [-x_min, 0]; nodes at x >= 0 are wall
    nodes. ``include_well=False`` keeps the wall but zeroes the well.
    """
    if geometry.dimension != 1:
        raise ConfigError("the effective well needs a 1D grid")
    x = geometry.axis(0)
    h = geometry.spacing[0]
    if np.min(np.abs(x)) > 1e-9 * h:
        raise ConfigError("x = 0 must be a grid node")
    tol = 1e-9 * h
    wall = x >= -tol
    V = np.zeros_like(x)
    if include_well:
        w = float(x_min(params, t))
        V[(x >= -w - tol) & ~wall] = -float(V0(params, t))
    return V, wall


@dataclass
class WellComparison:
    t_final: float
    x: np.ndarray
    rho_well: np.ndarray
    rho_superposition: np.ndarray
    fringes_well: object
    fringes_superposition: object
    peak_offsets: np.ndarray
    cell: float
    include_well: bool
    parameters: dict

    @property
    def fringe_agreement(self) -> bool:
        return bool(len(self.peak_offsets) > 0 and np.max(np.abs(self.peak_offsets)) <= self.cell)

    def halfwidth_ok(self, band=(0.4, 0.6)) -> dict:
        out = {}
        for name, rep in (("well", self.fringes_well), ("superposition", self.fringes_superposition)):
            r = getattr(rep, "innermost_ratio", None)
            out[name] = r is not None and band[0] <= r <= band[1]
        return out

    def to_dict(self) -> dict:
        return {
            "t_final": self.t_final,
            "include_well": self.include_well,
            "grid_cell": self.cell,
            "parameters": self.parameters,
            "fringes_well": self.fringes_well.to_dict() if self.fringes_well else None,
            "fringes_superposition": self.fringes_superposition.to_dict() if self.fringes_superposition else None,
            "peak_offsets": [float(v) for v in self.peak_offsets],
            "max_peak_offset": float(np.max(np.abs(self.peak_offsets))) if len(self.peak_offsets) else None,
            "fringe_agreement": self.fringe_agreement,
            "halfwidth_ok": self.halfwidth_ok(),
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def compare_with_superposition(params: EffectiveWellParams, grid, t_final: float, dt: float = 1e-3,
                               include_well: bool = True, min_prominence: float = 0.05,
                               n_peaks: int | None = None) -> WellComparison:
    """Propagate the incident packet against wall + well and set it beside the
    analytic mirrored pair, both restricted to x <= 0.

    Peaks are matched in order outward from the wall; ``n_peaks`` limits the
    comparison to the innermost ones (default: all peaks both runs share).
    """
    from .analysis import find_fringes
    from .errors import TooFewPeaks
    from .grid import ImplicitPropagator, PotentialSpec, initialize_grid

    inc = SuperpositionSpec.single(params.incident())
    state = initialize_grid(inc, grid)
    pot = PotentialSpec("effective_well", {"well": params, "include_well": include_well})
    stepper = ImplicitPropagator(grid, pot, dt, state.mass, state.hbar)
    # the first step zeroes the wall nodes; the packet tail there is negligible
    n_steps = int(round(t_final / dt))
    t0 = state.t
    for i in range(1, n_steps + 1):
        state = stepper.step(state)
        state = state.evolved(state.psi, t0 + i * dt)
    x = grid.axis(0)
    neg = x <= 1e-9 * grid.spacing[0]
    xs = x[neg]
    rho_w = state.rho[neg]
    pair = params.mirrored_pair()
    rho_s = np.abs(psi_and_derivatives(pair, xs, float(state.t))[0]) ** 2
    h = grid.spacing[0]
    rho_w = rho_w / (np.sum(rho_w) * h)
    rho_s = rho_s / (np.sum(rho_s) * h)

    def fringes(rho, wall):
        try:
            return find_fringes(rho, xs, min_prominence=min_prominence, wall=wall)
        except TooFewPeaks:
            return None

    fw = fringes(rho_w, "right")
    fs = fringes(rho_s, "right")
    offsets = np.array([])
    if fw is not None and fs is not None:
        pw = sorted((p["position"] for p in fw.peaks), reverse=True)
        ps = sorted((p["position"] for p in fs.peaks), reverse=True)
        k = min(len(pw), len(ps)) if n_peaks is None else min(n_peaks, len(pw), len(ps))
        offsets = np.array(pw[:k]) - np.array(ps[:k])
    return WellComparison(float(state.t), xs, rho_w, rho_s, fw, fs, offsets, h, include_well, {
        "mass": params.base.mass, "hbar": params.base.hbar, "sigma0": params.sigma0,
        "v0": float(params.base.velocities[0]), "x0_offset": params.x0_offset,
        "grid": grid.to_dict(), "dt": dt,
    })
