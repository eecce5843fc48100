"""Grid-based solution of the time-dependent Schroedinger equation.

Two steppers are provided: a Strang split-step Fourier scheme for periodic
grids and a Crank-Nicolson scheme with a compact fourth-order Laplacian for
1D grids with Dirichlet walls. Both return new immutable ``GridState``
objects.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .analytic import DENSITY_FLOOR, FieldSample, SuperpositionSpec, psi_and_derivatives
from .errors import ConfigError, GridTooSmall, SolverFailure, StabilityViolation

SNAPSHOT_MAGIC = b"BFSN"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class GridGeometry:
    """Uniform grid; node i sits at min + i * spacing, spacing = (max - min) / points."""

    extents: tuple[tuple[float, float], ...]
    points: tuple[int, ...]

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        pts = tuple(int(n) for n in self.points)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "points", pts)
        if len(ext) != len(pts) or len(pts) not in (1, 2):
            raise ConfigError("geometry must be 1D or 2D with one extent per axis")
        if any(n < 16 for n in pts):
            raise ConfigError("at least 16 points per axis are required")
        if any(b <= a for a, b in ext):
            raise ConfigError("extents must satisfy min < max")

    @classmethod
    def line(cls, xmin: float, xmax: float, n: int) -> "GridGeometry":
        return cls(((xmin, xmax),), (n,))

    @property
    def dimension(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / n for (a, b), n in zip(self.extents, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    def axis(self, k: int = 0) -> np.ndarray:
        (a, _), n, h = self.extents[k], self.points[k], self.spacing[k]
        return a + h * np.arange(n)

    def mesh(self) -> np.ndarray:
        """Node positions; plain array in 1D, trailing (x, y) axis in 2D."""
        if self.dimension == 1:
            return self.axis(0)
        X, Y = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.stack([X, Y], axis=-1)

    def wavenumbers(self) -> list[np.ndarray]:
        return [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.points, self.spacing)]

    def to_dict(self) -> dict:
        return {"extents": [list(e) for e in self.extents], "points": list(self.points)}


@dataclass(frozen=True, eq=False)
class GridState:
    geometry: GridGeometry
    psi: np.ndarray
    t: float = 0.0
    mass: float = 1.0
    hbar: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if self.psi.shape != self.geometry.shape:
            raise ValueError(f"psi shape {self.psi.shape} != grid {self.geometry.shape}")
        self.psi.setflags(write=False)

    @property
    def rho(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sum(self.rho) * self.geometry.cell_volume)

    def evolved(self, psi: np.ndarray, t: float, **kw) -> "GridState":
        return replace(self, psi=psi, t=float(t), **kw)


@dataclass
class PotentialSpec:
    """External potential on a grid.

    kinds: ``free``; ``custom_tabulated`` (``values`` array, optional ``wall``
    mask, or a ``function(geometry, t)``); ``model_pes_2d`` (saddle between
    two valleys, see ``model_pes_2d``); ``effective_well`` (``well``:
    EffectiveWellParams, ``include_well``: bool).
    """

    kind: str = "free"
    parameters: dict[str, Any] = field(default_factory=dict)

    KINDS = ("free", "effective_well", "model_pes_2d", "custom_tabulated")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown potential kind {self.kind!r}")

    @property
    def time_dependent(self) -> bool:
        return self.kind == "effective_well" or "function" in self.parameters

    def evaluate(self, geometry: GridGeometry, t: float = 0.0):
        """Node potentials and a boolean wall mask (or None)."""
        if self.kind == "free":
            return np.zeros(geometry.shape), None
        if self.kind == "custom_tabulated":
            if "function" in self.parameters:
                out = self.parameters["function"](geometry, t)
                return out if isinstance(out, tuple) else (np.asarray(out, float), None)
            values = np.broadcast_to(np.asarray(self.parameters["values"], float), geometry.shape)
            wall = self.parameters.get("wall")
            return values, (None if wall is None else np.asarray(wall, bool))
        if self.kind == "model_pes_2d":
            if geometry.dimension != 2:
                raise ConfigError("model_pes_2d needs a 2D grid")
            return model_pes_2d(geometry.mesh(), **self.parameters), None
        from .well import potential_on_grid

        if geometry.dimension != 1:
            raise ConfigError("effective_well needs a 1D grid")
        return potential_on_grid(self.parameters["well"], geometry, t,
                                 include_well=self.parameters.get("include_well", True))


def model_pes_2d(r, barrier_height=4.0, barrier_width=1.0, omega=1.0, bend=1.5,
                 bend_length=2.0, mass=1.0):
    """Stand-in reaction surface: Gaussian saddle across a curved harmonic valley.

    V = Vb exp(-x^2/w^2) + m omega^2 (y - f(x))^2 / 2, f(x) = bend tanh(x / L).
    Parameters are illustrative, not fitted to any published surface.
    """
    x, y = r[..., 0], r[..., 1]
    floor = bend * np.tanh(x / bend_length)
    return barrier_height * np.exp(-(x / barrier_width) ** 2) + 0.5 * mass * omega**2 * (y - floor) ** 2


def initialize_grid(spec: SuperpositionSpec, geometry: GridGeometry, normalize: bool = True,
                    min_sigmas: float = 8.0, edge_tolerance: float = 1e-12) -> GridState:
    """Sample the analytic packet on the nodes at t = 0."""
    if geometry.dimension != spec.dimension:
        raise ConfigError("geometry and spec disagree on dimension")
    for comp in spec.components:
        if comp.weight == 0:
            continue
        for k, (lo, hi) in enumerate(geometry.extents):
            c, s = comp.centers[k], comp.sigmas[k]
            if c - min_sigmas * s < lo or c + min_sigmas * s > hi:
                raise GridTooSmall(f"packet at {c:g} is closer than {min_sigmas:g} sigma0 to a grid edge")
    psi = psi_and_derivatives(spec, geometry.mesh(), 0.0)[0]
    rho = np.abs(psi) ** 2
    edge = max(np.max(np.abs(np.take(rho, idx, axis=k)))
               for k in range(geometry.dimension) for idx in (0, -1))
    if edge >= edge_tolerance * rho.max():
        raise GridTooSmall("initial density at the grid boundary is not negligible")
    if normalize:
        psi = psi / np.sqrt(np.sum(rho) * geometry.cell_volume)
    return GridState(geometry, psi, 0.0, spec.mass, spec.hbar)


class SpectralPropagator:
    """Strang split-step Fourier stepper: half potential, full kinetic, half potential."""

    def __init__(self, geometry: GridGeometry, potential: PotentialSpec, dt: float,
                 mass: float = 1.0, hbar: float = 1.0):
        if potential.kind == "effective_well":
            raise ConfigError("the hard wall of the effective well needs the implicit stepper")
        self.geometry, self.potential, self.dt = geometry, potential, float(dt)
        self.mass, self.hbar = mass, hbar
        ks = np.meshgrid(*geometry.wavenumbers(), indexing="ij")
        k2 = sum(k**2 for k in ks)
        self.kinetic = np.exp(-0.5j * hbar * k2 * self.dt / mass)
        self._half = None
        if not potential.time_dependent:
            self._half = self._half_factor(0.0)

    def _half_factor(self, t_mid):
        V, wall = self.potential.evaluate(self.geometry, t_mid)
        if self.dt * np.max(np.abs(V)) / self.hbar >= 0.5:
            raise StabilityViolation("dt * max|V| / hbar must stay below 0.5")
        half = np.exp(-0.5j * self.dt * V / self.hbar)
        if wall is not None:
            half = np.where(wall, 0.0, half)
        return half

    def step(self, state: GridState) -> GridState:
        half = self._half if self._half is not None else self._half_factor(state.t + 0.5 * self.dt)
        psi = half * state.psi
        psi = np.fft.ifftn(self.kinetic * np.fft.fftn(psi))
        psi = half * psi
        return state.evolved(psi, state.t + self.dt, boundary="periodic")


def step_spectral(state: GridState, potential: PotentialSpec, dt: float) -> GridState:
    return SpectralPropagator(state.geometry, potential, dt, state.mass, state.hbar).step(state)


class ImplicitPropagator:
    """Crank-Nicolson in 1D with psi = 0 at the first node, past the last node
    and on wall nodes.

    The Laplacian is the compact fourth-order (Numerov) operator
    (1 + d2/12)^-1 d2 / dx^2, so every step is one tridiagonal solve and the
    scheme is exactly unitary on the interior nodes.
    """

    def __init__(self, geometry: GridGeometry, potential: PotentialSpec, dt: float,
                 mass: float = 1.0, hbar: float = 1.0):
        if geometry.dimension != 1:
            raise ConfigError("the implicit stepper is 1D only")
        self.geometry, self.potential, self.dt = geometry, potential, float(dt)
        self.mass, self.hbar = mass, hbar
        self._cached = None

    def _matrices(self, t_mid):
        if self._cached is not None:
            return self._cached
        n = self.geometry.points[0]
        h = self.geometry.spacing[0]
        V, wall = self.potential.evaluate(self.geometry, t_mid)
        fixed = np.zeros(n, bool) if wall is None else np.array(wall, bool)
        fixed[0] = True
        c = self.hbar**2 / (2.0 * self.mass * h**2)
        d = 0.5j * self.dt / self.hbar
        # banded storage: row 0 super, row 1 main, row 2 sub; column j holds A[i, j]
        lhs = np.zeros((3, n), complex)
        rhs = np.zeros((3, n), complex)
        for sign, ab in ((1.0, lhs), (-1.0, rhs)):
            ab[1] = 10.0 / 12.0 * (1.0 + sign * d * V) + sign * d * 2.0 * c
            ab[0, 1:] = 1.0 / 12.0 * (1.0 + sign * d * V[1:]) - sign * d * c
            ab[2, :-1] = 1.0 / 12.0 * (1.0 + sign * d * V[:-1]) - sign * d * c
        # Dirichlet rows: identity on the left, zero on the right
        idx = np.flatnonzero(fixed)
        lhs[1, idx] = 1.0
        rhs[1, idx] = 0.0
        lhs[0, idx[idx + 1 < n] + 1] = 0.0
        lhs[2, idx[idx >= 1] - 1] = 0.0
        rhs[0, idx[idx + 1 < n] + 1] = 0.0
        rhs[2, idx[idx >= 1] - 1] = 0.0
        out = (lhs, rhs, fixed)
        if not self.potential.time_dependent:
            self._cached = out
        return out

    def step(self, state: GridState) -> GridState:
        lhs, rhs, fixed = self._matrices(state.t + 0.5 * self.dt)
        p = state.psi
        b = rhs[1] * p
        b[:-1] += rhs[0, 1:] * p[1:]
        b[1:] += rhs[2, :-1] * p[:-1]
        try:
            psi = solve_banded((1, 1), lhs, b, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverFailure(str(exc)) from exc
        if not np.all(np.isfinite(psi)):
            raise SolverFailure("non-finite values in the implicit solve")
        psi[fixed] = 0.0
        return state.evolved(psi, state.t + self.dt, boundary="dirichlet")


def step_implicit(state: GridState, potential: PotentialSpec, dt: float) -> GridState:
    return ImplicitPropagator(state.geometry, potential, dt, state.mass, state.hbar).step(state)


class AbsorbingLayer:
    """Smooth damping mask near the grid edges with absorbed-probability bookkeeping.

    Inside a layer of thickness ``width`` the amplitude is multiplied by
    exp(-strength * dt * sin^2(pi s / 2)), s in [0, 1] the depth into the layer.
    """

    def __init__(self, geometry: GridGeometry, width: float, strength: float, dt: float = 1.0):
        for (lo, hi) in geometry.extents:
            if width >= 0.25 * (hi - lo):
                raise ConfigError("absorbing layer must be thinner than 25% of the domain")
        profile = np.zeros(geometry.shape)
        for k, (lo, hi) in enumerate(geometry.extents):
            x = geometry.axis(k)
            depth = np.clip((width - np.minimum(x - lo, hi - x)) / width, 0.0, 1.0)
            shape = [1] * geometry.dimension
            shape[k] = -1
            profile = profile + np.sin(0.5 * np.pi * depth).reshape(shape) ** 2
        self.mask = np.exp(-strength * dt * profile)
        self.absorbed = 0.0

    def apply(self, state: GridState) -> GridState:
        before = state.norm()
        out = state.evolved(state.psi * self.mask, state.t)
        self.absorbed += before - out.norm()
        return out


def absorbing_boundary(state: GridState, width: float, strength: float, dt: float = 1.0):
    """Apply the damping mask once; returns (new state, probability removed)."""
    layer = AbsorbingLayer(state.geometry, width, strength, dt)
    out = layer.apply(state)
    return out, layer.absorbed


def propagate(state: GridState, potential: PotentialSpec, dt: float, n_steps: int,
              stride: int = 1, method: str = "spectral",
              absorber: AbsorbingLayer | None = None,
              callback: Callable[[GridState], None] | None = None) -> list[GridState]:
    """Run ``n_steps`` steps and return the snapshots taken every ``stride`` steps
    (the initial state included)."""
    cls = {"spectral": SpectralPropagator, "implicit": ImplicitPropagator}[method]
    stepper = cls(state.geometry, potential, dt, state.mass, state.hbar)
    snaps = [state]
    t0 = state.t
    for i in range(1, n_steps + 1):
        state = stepper.step(state)
        # restamp to avoid drift from repeated addition
        state = state.evolved(state.psi, t0 + i * dt)
        if absorber is not None:
            state = absorber.apply(state)
        if callback is not None:
            callback(state)
        if i % stride == 0 or i == n_steps:
            snaps.append(state)
    return snaps


def _fd4_first(psi, h):
    p = np.pad(psi, 2)
    return (-p[4:] + 8 * p[3:-1] - 8 * p[1:-3] + p[:-4]) / (12.0 * h)


def _fd4_second(psi, h):
    p = np.pad(psi, 2)
    return (-p[4:] + 16 * p[3:-1] - 30 * p[2:-2] + 16 * p[1:-3] - p[:-4]) / (12.0 * h**2)


def derivatives(state: GridState):
    """Gradient (trailing axis) and Laplacian of psi on the nodes."""
    g = state.geometry
    psi = state.psi
    grad = np.empty(psi.shape + (g.dimension,), complex)
    lap = np.zeros(psi.shape, complex)
    if state.boundary == "periodic":
        spec = np.fft.fftn(psi)
        ks = np.meshgrid(*g.wavenumbers(), indexing="ij")
        for k, kk in enumerate(ks):
            grad[..., k] = np.fft.ifftn(1j * kk * spec)
        lap = np.fft.ifftn(-sum(kk**2 for kk in ks) * spec)
    else:
        if g.dimension != 1:
            raise ConfigError("Dirichlet derivatives are 1D only")
        h = g.spacing[0]
        grad[..., 0] = _fd4_first(psi, h)
        lap = _fd4_second(psi, h)
    return grad, lap


def synthesize_fields(state: GridState, floor: float = DENSITY_FLOOR) -> FieldSample:
    """Bohmian fields on every node from the gridded wavefunction."""
    m, hbar = state.mass, state.hbar
    psi = state.psi
    grad, lap = derivatives(state)
    rho = np.abs(psi) ** 2
    J = (hbar / m) * np.imag(np.conj(psi)[..., None] * grad)
    defined = rho > floor
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(defined[..., None], J / rho[..., None], np.nan)
        grad_rho = 2.0 * np.real(np.conj(psi)[..., None] * grad)
        lap_rho = 2.0 * np.real(np.conj(psi) * lap) + 2.0 * np.sum(np.abs(grad) ** 2, axis=-1)
        Q = (hbar**2 / (4.0 * m)) * (0.5 * np.sum(grad_rho**2, axis=-1) / rho**2 - lap_rho / rho)
    Q = np.where(defined, Q, np.nan)
    sq = (lambda a: a[..., 0]) if state.geometry.dimension == 1 else (lambda a: a)
    return FieldSample(rho=rho, grad_S=sq(m * v), J=sq(J), v=sq(v), Q=Q, defined=defined)


def divergence(state: GridState, vec: np.ndarray) -> np.ndarray:
    """Divergence of a real vector field on the grid, same differentiation rule as the state."""
    g = state.geometry
    if g.dimension == 1 and vec.ndim == 1:
        vec = vec[..., None]
    if state.boundary == "periodic":
        out = np.zeros(g.shape)
        for k, kk in enumerate(g.wavenumbers()):
            shape = [1] * g.dimension
            shape[k] = -1
            out += np.real(np.fft.ifft(1j * kk.reshape(shape) * np.fft.fft(vec[..., k], axis=k), axis=k))
        return out
    return np.real(_fd4_first(vec[..., 0], g.spacing[0]))


# --- snapshot files -------------------------------------------------------

def write_snapshot(path, state: GridState, byteorder: str = "<") -> None:
    """Binary layout documented in docs/snapshot_format.md."""
    if byteorder not in "<>":
        raise ValueError("byteorder must be '<' or '>'")
    g = state.geometry
    head = struct.pack(byteorder + "4scBBB", SNAPSHOT_MAGIC, byteorder.encode(), SNAPSHOT_VERSION,
                       g.dimension, 0)
    for (lo, hi), n in zip(g.extents, g.points):
        head += struct.pack(byteorder + "Qdd", n, lo, hi)
    head += struct.pack(byteorder + "d", state.t)
    data = np.ascontiguousarray(state.psi, dtype=np.dtype(byteorder + "c16"))
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(data.tobytes(order="C"))


def read_snapshot(path, mass: float = 1.0, hbar: float = 1.0, boundary: str = "periodic") -> GridState:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a snapshot file")
    bo = raw[4:5].decode()
    if bo not in "<>":
        raise ValueError(f"{path}: bad endianness tag")
    version, dim, _ = struct.unpack(bo + "BBB", raw[5:8])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = 8
    extents, points = [], []
    for _ in range(dim):
        n, lo, hi = struct.unpack_from(bo + "Qdd", raw, off)
        off += 24
        extents.append((lo, hi))
        points.append(n)
    (t,) = struct.unpack_from(bo + "d", raw, off)
    off += 8
    psi = np.frombuffer(raw, dtype=np.dtype(bo + "c16"), offset=off).astype(complex).reshape(points)
    return GridState(GridGeometry(tuple(extents), tuple(points)), psi, t, mass, hbar, boundary)


def write_snapshot_series(directory, states: Sequence[GridState], stem: str = "snap") -> Path:
    """One file per snapshot plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(states):
        name = f"{stem}_{i:05d}.bin"
        write_snapshot(directory / name, s)
        entries.append({"index": i, "t": s.t, "file": name})
    first = states[0]
    manifest = {
        "format": "bohmflow-snapshot",
        "version": SNAPSHOT_VERSION,
        "geometry": first.geometry.to_dict(),
        "mass": first.mass,
        "hbar": first.hbar,
        "boundary": first.boundary,
        "snapshots": entries,
    }
    path = directory / f"{stem}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_snapshot_series(manifest_path) -> Iterator[GridState]:
    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    for entry in meta["snapshots"]:
        yield read_snapshot(manifest_path.parent / entry["file"], meta["mass"], meta["hbar"],
                            meta.get("boundary", "periodic"))
