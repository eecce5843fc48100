"""Closed-form free Gaussian packets, their superpositions and the Bohmian
fields derived from them.

Positions are plain arrays in 1D. In 2D the last axis holds (x, y) and
vector-valued fields carry the same trailing axis; packets are separable
products of 1D Gaussians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateDensity

DENSITY_FLOOR = 1e-300


def _as_axis_array(value, dimension):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1 and dimension > 1:
        arr = np.repeat(arr, dimension)
    return arr


@dataclass(frozen=True)
class GaussianParams:
    """One free Gaussian packet.

    ``sigma0``, ``x0_center`` and ``v0`` are floats in 1D and length-2
    sequences in 2D. ``weight`` is a complex amplitude multiplier.
    """

    mass: float = 1.0
    hbar: float = 1.0
    sigma0: float | Sequence[float] = 1.0
    x0_center: float | Sequence[float] = 0.0
    v0: float | Sequence[float] = 0.0
    weight: complex = 1.0

    def __post_init__(self):
        if not self.mass > 0 or not self.hbar > 0:
            raise ConfigError("mass and hbar must be positive")
        if np.any(~(self.sigmas > 0)):
            raise ConfigError("sigma0 must be positive")
        n = {np.size(self.sigma0), np.size(self.x0_center), np.size(self.v0)} - {1}
        if len(n) > 1 or (n and n.pop() != 2):
            raise ConfigError("per-axis parameters must all be scalars or length-2")
        if not np.all(np.isfinite(self.tau)):
            raise ConfigError("spreading time is not finite")

    @property
    def dimension(self) -> int:
        return max(np.size(self.sigma0), np.size(self.x0_center), np.size(self.v0))

    @property
    def sigmas(self) -> np.ndarray:
        return _as_axis_array(self.sigma0, self.dimension)

    @property
    def centers(self) -> np.ndarray:
        return _as_axis_array(self.x0_center, self.dimension)

    @property
    def velocities(self) -> np.ndarray:
        return _as_axis_array(self.v0, self.dimension)

    @property
    def p0(self):
        return self.mass * np.asarray(self.v0, dtype=float)

    @property
    def tau(self):
        """Spreading time 2 m sigma0^2 / hbar (per axis in 2D)."""
        return 2.0 * self.mass * np.asarray(self.sigma0, dtype=float) ** 2 / self.hbar

    @property
    def spreading_velocity(self):
        """v_s = hbar / (2 m sigma0)."""
        return self.hbar / (2.0 * self.mass * np.asarray(self.sigma0, dtype=float))


@dataclass(frozen=True)
class SuperpositionSpec:
    components: tuple[GaussianParams, ...]
    dimension: int = field(default=0)

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ConfigError("a superposition needs at least one component")
        dims = {c.dimension for c in comps}
        if len(dims) != 1:
            raise ConfigError("components disagree on dimension")
        dim = dims.pop()
        if self.dimension and self.dimension != dim:
            raise ConfigError(f"dimension {self.dimension} does not match components ({dim})")
        object.__setattr__(self, "dimension", dim)
        if dim not in (1, 2):
            raise ConfigError("only 1D and 2D packets are supported")
        if len({(c.mass, c.hbar) for c in comps}) != 1:
            raise ConfigError("all components must share mass and hbar")
        if all(c.weight == 0 for c in comps):
            raise ConfigError("at least one component needs a nonzero weight")

    @classmethod
    def single(cls, params: GaussianParams) -> "SuperpositionSpec":
        return cls((params,))

    @property
    def mass(self) -> float:
        return self.components[0].mass

    @property
    def hbar(self) -> float:
        return self.components[0].hbar

    @property
    def alpha(self) -> float:
        """|w2/w1|^2, the relative weight of a two-packet superposition."""
        if len(self.components) != 2:
            raise ValueError("alpha is only defined for two components")
        w1, w2 = (c.weight for c in self.components)
        return abs(w2 / w1) ** 2


@dataclass
class FieldSample:
    """Bohmian fields at a set of points.

    ``v`` and ``Q`` are NaN where ``defined`` is False (density at or
    below the floor). Vector fields carry a trailing axis in 2D.
    """

    rho: np.ndarray
    grad_S: np.ndarray
    J: np.ndarray
    v: np.ndarray
    Q: np.ndarray
    defined: np.ndarray


def sigma_t(params: GaussianParams, t):
    """Packet width sigma0 * sqrt(1 + (hbar t / 2 m sigma0^2)^2)."""
    s0 = np.asarray(params.sigma0, dtype=float)
    return s0 * np.hypot(1.0, np.asarray(t, dtype=float) / params.tau)


def _positions(x, dimension):
    x = np.asarray(x, dtype=float)
    if dimension == 1:
        return x[..., None]
    if x.shape[-1] != 2:
        raise ValueError("2D positions need a trailing axis of length 2")
    return x


def _axis_terms(sigma0, xc, v0, m, hbar, x, t):
    """psi, psi'/psi and psi''/psi for one 1D Gaussian factor."""
    p0 = m * v0
    r = hbar * t / (2.0 * m * sigma0**2)
    st = sigma0 * (1.0 + 1j * r)
    u = x - xc - v0 * t
    energy = p0**2 / (2.0 * m)
    norm = (2.0 * np.pi * sigma0**2) ** -0.25 / np.sqrt(1.0 + 1j * r)
    psi = norm * np.exp(-(u**2) / (4.0 * st * sigma0) + 1j * p0 * u / hbar + 1j * energy * t / hbar)
    a = -u / (2.0 * st * sigma0) + 1j * p0 / hbar
    b = a**2 - 1.0 / (2.0 * st * sigma0)
    return psi, a, b


def component_terms(params: GaussianParams, x, t):
    """Weighted component psi, grad(psi)/psi and lap(psi)/psi.

    ``x`` must already carry the trailing dimension axis. Returns arrays of
    shape (...), (..., d) and (...).
    """
    psi = np.full(x.shape[:-1], complex(params.weight))
    logd = np.empty(x.shape, dtype=complex)
    lap = np.zeros(x.shape[:-1], dtype=complex)
    sig, xc, v0 = params.sigmas, params.centers, params.velocities
    for k in range(x.shape[-1]):
        p, a, b = _axis_terms(sig[k], xc[k], v0[k], params.mass, params.hbar, x[..., k], t)
        psi = psi * p
        logd[..., k] = a
        lap = lap + b
    # cross terms of the separable Laplacian vanish: d2/dx2 only hits the x factor
    return psi, logd, lap


def psi_and_derivatives(spec: SuperpositionSpec, x, t):
    """Psi, grad Psi (trailing axis) and lap Psi for positions with a dimension axis."""
    X = _positions(x, spec.dimension)
    psi = np.zeros(X.shape[:-1], dtype=complex)
    grad = np.zeros(X.shape, dtype=complex)
    lap = np.zeros(X.shape[:-1], dtype=complex)
    for comp in spec.components:
        if comp.weight == 0:
            continue
        p, a, b = component_terms(comp, X, t)
        psi += p
        grad += p[..., None] * a
        lap += p * b
    return psi, grad, lap


def _squeeze(arr, dimension):
    return arr[..., 0] if dimension == 1 else arr


def evaluate_psi(spec: SuperpositionSpec, x, t):
    """Complex amplitude sum_i w_i psi_i(x, t)."""
    return psi_and_derivatives(spec, x, t)[0]


def field_sample(spec: SuperpositionSpec, x, t, floor: float = DENSITY_FLOOR,
                 strict: bool = False) -> FieldSample:
    """Density, phase gradient, current, velocity and quantum potential.

    All derivatives are analytic. With ``strict`` a DegenerateDensity is
    raised when any point sits at or below ``floor``.
    """
    m, hbar = spec.mass, spec.hbar
    psi, grad, lap = psi_and_derivatives(spec, x, t)
    rho = np.abs(psi) ** 2
    J = (hbar / m) * np.imag(np.conj(psi)[..., None] * grad)
    defined = rho > floor
    if strict and not np.all(defined):
        raise DegenerateDensity(f"density at or below floor {floor:g}")
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(defined[..., None], J / rho[..., None], np.nan)
        grad_rho = 2.0 * np.real(np.conj(psi)[..., None] * grad)
        lap_rho = 2.0 * np.real(np.conj(psi) * lap) + 2.0 * np.sum(np.abs(grad) ** 2, axis=-1)
        Q = (hbar**2 / (4.0 * m)) * (0.5 * np.sum(grad_rho**2, axis=-1) / rho**2 - lap_rho / rho)
    Q = np.where(defined, Q, np.nan)
    d = spec.dimension
    return FieldSample(rho=rho, grad_S=_squeeze(m * v, d), J=_squeeze(J, d),
                       v=_squeeze(v, d), Q=Q, defined=defined)


def closed_form_trajectory(params: GaussianParams, x_start, t):
    """Exact Bohmian path of a free Gaussian started at ``x_start``.

    Works per axis in 2D (trailing axis on ``x_start``).
    """
    xc = params.centers if params.dimension > 1 else float(params.centers[0])
    v0 = params.velocities if params.dimension > 1 else float(params.velocities[0])
    s0 = params.sigmas if params.dimension > 1 else float(params.sigmas[0])
    t = np.asarray(t, dtype=float)
    displacement = np.asarray(x_start, dtype=float) - xc
    return xc + v0 * t + sigma_t(params, t) / s0 * displacement


def asymptotic_trajectory(params: GaussianParams, x0, t, regime: str):
    """Fresnel (quadratic) or Fraunhofer (uniform) limit of the exact path.

    ``x0`` is the start position measured from the packet center.
    """
    v0 = np.asarray(params.v0, dtype=float)
    tau = params.tau
    t = np.asarray(t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if regime == "fresnel":
        return x0 + v0 * t + 0.5 * (x0 / tau**2) * t**2
    if regime == "fraunhofer":
        return (v0 + x0 / tau) * t
    raise ValueError(f"unknown regime {regime!r}")


def component_polar(spec: SuperpositionSpec, x, t):
    """Per-component polar data: rho_i, S_i, grad S_i and grad sqrt(rho_i).

    Returns a list of dicts, one per component, with weights folded in.
    """
    X = _positions(x, spec.dimension)
    out = []
    for comp in spec.components:
        p, a, _ = component_terms(comp, X, t)
        amp = np.abs(p)
        out.append({
            "psi": p,
            "rho": amp**2,
            "S": spec.hbar * np.angle(p),
            "grad_S": spec.hbar * np.imag(a),
            "grad_sqrt_rho": amp[..., None] * np.real(a),
        })
    return out


def assemble_two_packet(spec: SuperpositionSpec, x, t):
    """Density and current of psi_1 + psi_2 built from component moduli and phases.

    The relative phase is phi = (S_2 - S_1)/hbar, which is the sign that
    makes the sin-term of the cross current come out as
    hbar (sqrt(rho1) grad sqrt(rho2) - sqrt(rho2) grad sqrt(rho1)) sin phi.
    """
    if len(spec.components) != 2:
        raise ValueError("assembly needs exactly two components")
    c1, c2 = component_polar(spec, x, t)
    m, hbar = spec.mass, spec.hbar
    phi = np.angle(c2["psi"] * np.conj(c1["psi"]))
    cross = np.sqrt(c1["rho"] * c2["rho"])
    rho = c1["rho"] + c2["rho"] + 2.0 * cross * np.cos(phi)
    r1 = np.sqrt(c1["rho"])[..., None]
    r2 = np.sqrt(c2["rho"])[..., None]
    J = (c1["rho"][..., None] * c1["grad_S"] + c2["rho"][..., None] * c2["grad_S"]
         + cross[..., None] * (c1["grad_S"] + c2["grad_S"]) * np.cos(phi)[..., None]
         + hbar * (r1 * c2["grad_sqrt_rho"] - r2 * c1["grad_sqrt_rho"]) * np.sin(phi)[..., None]) / m
    return rho, _squeeze(J, spec.dimension)


def two_packet_velocity(spec: SuperpositionSpec, x, t, alpha: float | None = None):
    """Velocity of psi_1 + sqrt(alpha) psi_2 from unit-weight component data.

    Both denominators use the cos(phi) density. ``alpha`` defaults to the
    spec's |w2/w1|^2; the components are evaluated with unit modulus weights
    and the phase of each weight kept.
    """
    if len(spec.components) != 2:
        raise ValueError("needs exactly two components")
    if alpha is None:
        alpha = spec.alpha
    unit = SuperpositionSpec(tuple(
        GaussianParams(mass=c.mass, hbar=c.hbar, sigma0=c.sigma0, x0_center=c.x0_center,
                       v0=c.v0, weight=np.exp(1j * np.angle(c.weight)))
        for c in spec.components))
    c1, c2 = component_polar(unit, x, t)
    m, hbar = spec.mass, spec.hbar
    phi = np.angle(c2["psi"] * np.conj(c1["psi"]))
    sa = np.sqrt(alpha)
    cross = np.sqrt(c1["rho"] * c2["rho"])
    rho = c1["rho"] + alpha * c2["rho"] + 2.0 * sa * cross * np.cos(phi)
    r1 = np.sqrt(c1["rho"])[..., None]
    r2 = np.sqrt(c2["rho"])[..., None]
    num = (c1["rho"][..., None] * c1["grad_S"] + alpha * c2["rho"][..., None] * c2["grad_S"]
           + sa * cross[..., None] * (c1["grad_S"] + c2["grad_S"]) * np.cos(phi)[..., None]
           + sa * hbar * (r1 * c2["grad_sqrt_rho"] - r2 * c1["grad_sqrt_rho"]) * np.sin(phi)[..., None])
    with np.errstate(divide="ignore", invalid="ignore"):
        v = num / (m * rho[..., None])
    return _squeeze(v, spec.dimension)
