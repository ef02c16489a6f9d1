"""YAML configuration ingestion.

Example::

    domain: {lower: 0.0, upper: 1.0}
    potential: {kind: double_well, scale: 0.01, stiffness: 3.6, center: 0.5, offset: 0.1}
    sigma: 0.15
    d_int: 0.002
    n_types: 2
    rules:
      - {subject: 1, catalyst: 2, product: 2, rate: 0.1}
    initial:
      - {type: 1, count: 800, kind: normal, mean: 0.5, std: 0.2}
      - {type: 2, count: 200, kind: normal, mean: 0.7, std: 0.1}
    t_end: 5.5
    dt: 0.01
    master_seed: 1234
    spde: {n_cells: 128, n_modes: 128, deterministic: false, drift_mode: ibp, clip_state: false}
    observe: {adopter_type: 2, threshold: 0.75}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .model import (
    ConfigError,
    Domain1D,
    DoubleWell,
    ModelParams,
    PolynomialLandscape,
    SeedPolicy,
    SuitabilityLandscape,
    TypeInit,
    build_rule,
    split_counts,
)

DRIFT_MODES = ("ibp", "direct")


@dataclass(frozen=True)
class SimulationConfig:
    domain: Domain1D
    landscape: SuitabilityLandscape
    params: ModelParams
    initial: tuple[TypeInit, ...]
    master_seed: int = 0
    n_cells: int = 128
    n_modes: int | None = None  # None -> n_cells
    deterministic: bool = False
    drift_mode: str = "ibp"
    clip_state: bool = False
    adopter_type: int = 2
    threshold: float = 0.75
    experiment: dict = field(default_factory=dict, compare=False)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.drift_mode not in DRIFT_MODES:
            raise ConfigError(f"drift_mode must be one of {DRIFT_MODES}")
        if self.n_cells < 1 or self.modes < 1:
            raise ConfigError("n_cells and n_modes must be >= 1")
        if not 1 <= self.adopter_type <= self.params.n_types:
            raise ConfigError("adopter_type out of range")
        if not 0 < self.threshold <= 1:
            raise ConfigError("threshold must lie in (0, 1]")
        if sum(ti.count for ti in self.initial) != self.params.n_agents:
            raise ConfigError("initial counts must add up to n_agents")
        for ti in self.initial:
            if not 1 <= ti.type <= self.params.n_types:
                raise ConfigError(f"initial type {ti.type} out of range")

    @property
    def modes(self) -> int:
        return self.n_cells if self.n_modes is None else self.n_modes

    @property
    def seeds(self) -> SeedPolicy:
        return SeedPolicy(self.master_seed)

    def with_agents(self, n_agents: int) -> "SimulationConfig":
        """Same setup with ``n_agents`` agents, keeping the type proportions."""
        counts = split_counts([ti.count for ti in self.initial], n_agents)
        initial = tuple(replace(ti, count=c) for ti, c in zip(self.initial, counts))
        return replace(self, params=replace(self.params, n_agents=n_agents), initial=initial)

    def with_params(self, **changes) -> "SimulationConfig":
        return replace(self, params=replace(self.params, **changes))

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _landscape(spec: dict, domain: Domain1D) -> SuitabilityLandscape:
    spec = dict(spec or {"kind": "double_well"})
    kind = spec.pop("kind", "double_well")
    if kind == "double_well":
        return DoubleWell(domain=domain, **{k: float(v) for k, v in spec.items()})
    if kind == "polynomial":
        return PolynomialLandscape(coeffs=tuple(spec["coeffs"]), domain=domain)
    raise ConfigError(f"unknown potential kind {kind!r}")


def _require(raw: dict, key: str):
    if key not in raw:
        raise ConfigError(f"missing configuration key {key!r}")
    return raw[key]


def config_from_dict(raw: dict) -> SimulationConfig:
    raw = copy.deepcopy(raw)
    dom = raw.get("domain", {})
    domain = Domain1D(float(dom.get("lower", 0.0)), float(dom.get("upper", 1.0)))
    n_types = int(_require(raw, "n_types"))
    rules = tuple(
        build_rule(int(r["subject"]), int(r["catalyst"]), int(r["product"]), float(r["rate"]), n_types)
        for r in raw.get("rules", [])
    )
    initial = tuple(
        TypeInit(
            type=int(ti["type"]),
            count=int(ti["count"]),
            kind=ti.get("kind", "normal"),
            mean=float(ti.get("mean", 0.5)),
            std=float(ti.get("std", 0.1)),
        )
        for ti in _require(raw, "initial")
    )
    n_agents = int(raw.get("n_agents", sum(ti.count for ti in initial)))
    if n_agents != sum(ti.count for ti in initial):
        counts = split_counts([ti.count for ti in initial], n_agents)
        initial = tuple(replace(ti, count=c) for ti, c in zip(initial, counts))
    params = ModelParams(
        n_types=n_types,
        n_agents=n_agents,
        sigma=float(_require(raw, "sigma")),
        d_int=float(_require(raw, "d_int")),
        rules=rules,
        t_end=float(_require(raw, "t_end")),
        dt=float(_require(raw, "dt")),
    )
    spde = raw.get("spde", {})
    observe = raw.get("observe", {})
    return SimulationConfig(
        domain=domain,
        landscape=_landscape(raw.get("potential"), domain),
        params=params,
        initial=initial,
        master_seed=int(raw.get("master_seed", 0)),
        n_cells=int(spde.get("n_cells", 128)),
        n_modes=None if spde.get("n_modes") is None else int(spde["n_modes"]),
        deterministic=bool(spde.get("deterministic", False)),
        drift_mode=str(spde.get("drift_mode", "ibp")),
        clip_state=bool(spde.get("clip_state", False)),
        adopter_type=int(observe.get("adopter_type", n_types)),
        threshold=float(observe.get("threshold", 0.75)),
        experiment=dict(raw.get("experiment", {})),
        raw=raw,
    )


def load_config(path: str | Path) -> SimulationConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return config_from_dict(raw)


def preset_path(name: str) -> Path:
    """Path of a bundled preset, e.g. ``preset_path("compare")``."""
    ref = resources.files("abmspde") / "presets" / f"{name}.yaml"
    if not ref.is_file():
        raise ConfigError(f"no preset named {name!r}")
    return Path(str(ref))


def load_preset(name: str, **overrides: Any) -> SimulationConfig:
    with open(preset_path(name)) as fh:
        raw = yaml.safe_load(fh)
    raw.update(overrides)
    return config_from_dict(raw)
