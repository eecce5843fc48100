"""Scenario configuration: JSON file + namespaced command-line overrides.

A config has four sections::

    {
      "scenario": "free_gaussian",
      "physics":  {"mass": 1, "hbar": 1, "packets": [{"sigma0": 1, "x0_center": 0, "v0": 0.3}]},
      "numerics": {"dt": 0.001, "tol": 1e-8, ...},
      "outputs":  {"directory": "runs/free_gaussian", "formats": ["csv", "json", "svg"], "seed": 0}
    }

Missing keys take the per-scenario defaults in ``DEFAULTS``. Overrides use
dotted paths (``--numerics.dt 5e-4``, ``--physics.packets.1.v0 -2``); a
packet field given directly under physics (``--physics.sigma0 2``) applies
to every packet.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .analytic import GaussianParams, SuperpositionSpec
from .errors import ConfigError

SCENARIOS = ("free_gaussian", "superposition", "effective_well", "reaction_2d")
FORMATS = ("csv", "json", "svg")
PACKET_FIELDS = ("sigma0", "x0_center", "v0", "weight")

_OUTPUTS = {"formats": list(FORMATS), "seed": 0, "reproducible": True, "snapshots": False}

DEFAULTS = {
    "free_gaussian": {
        "physics": {"mass": 1.0, "hbar": 1.0,
                    "packets": [{"sigma0": 1.0, "x0_center": 0.0, "v0": 0.3}]},
        "numerics": {
            "tol": 1e-8, "n_trajectories": 20, "n_times": 201,
            "t_short": 2.0, "t_long": 100.0, "slope_window": [50.0, 100.0],   # in units of tau
            "regime_thresholds": [0.1, 10.0],
            "grid": {"extents": [[-40.0, 40.0]], "points": [1024]},
            "dt": 1e-3, "t_grid": 10.0, "snapshot_stride": 100,
        },
    },
    "superposition": {
        "physics": {"mass": 1.0, "hbar": 1.0,
                    "packets": [{"sigma0": 1.0, "x0_center": -10.0, "v0": 5.0},
                                {"sigma0": 1.0, "x0_center": 10.0, "v0": -5.0}]},
        "numerics": {"tol": 1e-8, "n_trajectories": 50, "n_times": 201, "t_final": 10.0,
                     "field_extent": [-60.0, 60.0], "field_points": 241, "fringe_points": 8001,
                     "min_prominence": 0.05},
    },
    "effective_well": {
        "physics": {"mass": 1.0, "hbar": 1.0,
                    "packets": [{"sigma0": 0.25, "x0_center": -5.0, "v0": 0.2}]},
        "numerics": {"grid": {"extents": [[-60.0, 60.0]], "points": [2048]},
                     "dt": 1e-3, "t_final": 5.0, "include_well": True, "min_prominence": 0.05,
                     "halfwidth_band": [0.4, 0.6]},
    },
    "reaction_2d": {
        "physics": {"mass": 1.0, "hbar": 1.0,
                    "packets": [{"sigma0": [1.0, 0.7071067811865476], "x0_center": [-6.0, 0.0],
                                 "v0": [3.0, 0.0]}],
                    "potential": {"barrier_height": 4.0, "barrier_width": 1.0, "omega": 1.0,
                                  "bend": 1.5, "bend_length": 2.0}},
        "numerics": {"grid": {"extents": [[-20.0, 20.0], [-10.0, 10.0]], "points": [256, 256]},
                     "dt": 0.005, "t_final": 4.0, "snapshot_stride": 50, "flux_stride": 5,
                     "absorber_width": 3.0, "absorber_strength": 2.0,
                     "vortex_threshold": 1e-6, "arrow_grid": [24, 12]},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _weight(w):
    if isinstance(w, (list, tuple)):
        if len(w) != 2:
            raise ConfigError("complex weight must be [re, im]")
        return complex(float(w[0]), float(w[1]))
    return complex(w)


@dataclass
class ScenarioConfig:
    scenario: str
    physics: dict = field(default_factory=dict)
    numerics: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        d = DEFAULTS[self.scenario]
        self.physics = _merge(d["physics"], self.physics)
        self.numerics = _merge(d["numerics"], self.numerics)
        self.outputs = _merge(dict(_OUTPUTS, directory=f"runs/{self.scenario}"), self.outputs)
        self.validate()

    # -- construction --------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict, scenario: str | None = None) -> "ScenarioConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - {"scenario", "physics", "numerics", "outputs"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        name = scenario or doc.get("scenario")
        if doc.get("scenario") and scenario and doc["scenario"] != scenario:
            raise ConfigError(f"config is for {doc['scenario']!r}, not {scenario!r}")
        return cls(name, doc.get("physics", {}), doc.get("numerics", {}), doc.get("outputs", {}))

    @classmethod
    def load(cls, path, scenario: str | None = None, overrides=()) -> "ScenarioConfig":
        doc = {}
        if path is not None:
            try:
                with open(path) as fh:
                    doc = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if scenario is None and "scenario" not in doc:
            raise ConfigError("no scenario given")
        base = cls.from_dict(doc, scenario).to_dict()
        for key, value in overrides:
            apply_override(base, key, value)
        return cls.from_dict(base)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "physics": copy.deepcopy(self.physics),
                "numerics": copy.deepcopy(self.numerics), "outputs": copy.deepcopy(self.outputs)}

    # -- validation and typed views -------------------------------------------
    def validate(self) -> None:
        p, n, o = self.physics, self.numerics, self.outputs
        d = DEFAULTS[self.scenario]
        for name, sec, ref in (("physics", p, d["physics"]), ("numerics", n, d["numerics"]),
                               ("outputs", o, dict(_OUTPUTS, directory=""))):
            extra = set(sec) - set(ref)
            if extra:
                raise ConfigError(f"unknown {name} keys for {self.scenario}: {sorted(extra)}")
        try:
            for key in ("mass", "hbar"):
                if not float(p[key]) > 0:
                    raise ConfigError(f"physics.{key} must be positive")
            if not isinstance(p.get("packets"), list) or not p["packets"]:
                raise ConfigError("physics.packets must be a non-empty list")
            for pk in p["packets"]:
                extra = set(pk) - set(PACKET_FIELDS)
                if extra:
                    raise ConfigError(f"unknown packet fields {sorted(extra)}")
            self.spec()  # runs the packet-level checks
            if "t_final" in n and not float(n["t_final"]) >= 0:
                raise ConfigError("numerics.t_final must be non-negative")
            for key in ("dt", "tol", "t_grid", "t_short", "t_long"):
                if key in n and not float(n[key]) > 0:
                    raise ConfigError(f"numerics.{key} must be positive")
            for key in ("n_trajectories", "snapshot_stride", "flux_stride", "n_times"):
                if key in n and (int(n[key]) != n[key] or int(n[key]) < 1):
                    raise ConfigError(f"numerics.{key} must be a positive integer")
            bad = set(o.get("formats", [])) - set(FORMATS)
            if bad:
                raise ConfigError(f"unknown output formats {sorted(bad)}")
            if int(o["seed"]) != o["seed"]:
                raise ConfigError("outputs.seed must be an integer")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc}") from exc
        if self.scenario == "superposition" and len(p["packets"]) < 2:
            raise ConfigError("superposition needs two or more packets")
        if self.scenario == "reaction_2d" and self.spec().dimension != 2:
            raise ConfigError("reaction_2d needs 2D packets")
        if self.scenario in ("free_gaussian", "superposition", "effective_well") and self.spec().dimension != 1:
            raise ConfigError(f"{self.scenario} is a 1D scenario")

    def packets(self) -> list[GaussianParams]:
        m, hbar = float(self.physics["mass"]), float(self.physics["hbar"])
        out = []
        for pk in self.physics["packets"]:
            out.append(GaussianParams(m, hbar, pk.get("sigma0", 1.0), pk.get("x0_center", 0.0),
                                      pk.get("v0", 0.0), _weight(pk.get("weight", 1.0))))
        return out

    def spec(self) -> SuperpositionSpec:
        return SuperpositionSpec(tuple(self.packets()))

    def well_params(self):
        """Incident packet of the effective-well scenario; it starts at
        x0_center < 0 and the wall sits at the origin."""
        from .well import EffectiveWellParams
        pk = self.packets()[0]
        if len(self.packets()) != 1 or not float(pk.x0_center) < 0:
            raise ConfigError("effective_well needs one packet with x0_center < 0")
        return EffectiveWellParams(pk, -float(pk.x0_center))

    def grid(self):
        from .grid import GridGeometry
        g = self.numerics.get("grid")
        if g is None:
            raise ConfigError("numerics.grid is required")
        try:
            return GridGeometry(tuple(tuple(map(float, e)) for e in g["extents"]),
                                tuple(int(k) for k in g["points"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"invalid numerics.grid: {exc}") from exc


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, key: str, value) -> None:
    """Set the dotted ``key`` in ``doc`` (in place)."""
    parts = key.split(".")
    if parts[0] not in ("physics", "numerics", "outputs") or len(parts) < 2:
        raise ConfigError(f"override {key!r} must start with physics., numerics. or outputs.")
    if parts[0] == "physics" and len(parts) == 2 and parts[1] in PACKET_FIELDS:
        for pk in doc["physics"]["packets"]:
            pk[parts[1]] = copy.deepcopy(value)
        return
    node = doc
    for part in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(part)]
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"bad index {part!r} in override {key!r}") from exc
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        try:
            node[int(last)] = value
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad index {last!r} in override {key!r}") from exc
    else:
        node[last] = value
