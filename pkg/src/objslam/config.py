"""One config tree for every stage, JSON overrides and a stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from .association import AssociationConfig
from .errors import InvalidInput
from .exploration import ExploreConfig
from .io import dumps
from .mapping import MappingConfig
from .parameterization import ParamConfig
from .topomap import TopoConfig

SECTIONS = {
    "assoc": AssociationConfig,
    "param": ParamConfig,
    "mapping": MappingConfig,
    "topo": TopoConfig,
    "explore": ExploreConfig,
}
# sections whose own ``seed`` field is driven by the top-level seed
SEEDED = ("assoc", "param", "topo", "explore")


@dataclass
class Config:
    assoc: AssociationConfig = field(default_factory=AssociationConfig)
    param: ParamConfig = field(default_factory=ParamConfig)
    mapping: MappingConfig = field(default_factory=MappingConfig)
    topo: TopoConfig = field(default_factory=TopoConfig)
    explore: ExploreConfig = field(default_factory=ExploreConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(dumps(self.to_dict()).encode()).hexdigest()[:16]


def _coerce(value, default, where: str):
    """Accept a JSON value for a field whose default has the given type."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidInput(f"{where}: expected true/false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidInput(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidInput(f"{where}: expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidInput(f"{where}: expected a string")
        return value
    raise InvalidInput(f"{where}: not configurable")


def _section(cls, base, overrides: dict, name: str):
    if not isinstance(overrides, dict):
        raise InvalidInput(f"{name}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, v in overrides.items():
        if key not in known or key.startswith("_"):
            raise InvalidInput(f"unknown config key {name}.{key}")
        values[key] = _coerce(v, getattr(base, key), f"{name}.{key}")
    try:
        return dataclasses.replace(base, **values)
    except ValueError as e:
        raise InvalidInput(f"{name}: {e}") from None


def build_config(overrides: dict | None = None, seed: int | None = None) -> Config:
    """Defaults, then ``overrides`` ({section: {key: value}, "seed": n}), then ``seed``.

    The top-level seed is copied into every stochastic section.
    """
    overrides = dict(overrides or {})
    cfg = Config()
    for key, v in overrides.items():
        if key == "seed":
            cfg.seed = _coerce(v, 0, "seed")
        elif key in SECTIONS:
            setattr(cfg, key, _section(SECTIONS[key], getattr(cfg, key), v, key))
        else:
            raise InvalidInput(f"unknown config section {key!r}")
    if seed is not None:
        cfg.seed = int(seed)
    for name in SEEDED:
        setattr(cfg, name, dataclasses.replace(getattr(cfg, name), seed=cfg.seed))
    return cfg
