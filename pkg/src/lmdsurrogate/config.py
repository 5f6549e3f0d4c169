"""Pipeline configuration: one JSON document drives generate/train/rollout/bench."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass

from .fields import ParameterError, PhysicsParams
from .model import TrainConfig, UNetConfig
from .rollout import ExtensionPolicy
from .solver import SolverConfig


@dataclass(frozen=True)
class GridConfig:
    height: int = 64
    width: int = 64
    dx: float = 1.0
    interface_row: int = 16
    noise_amp: float = 0.1


@dataclass(frozen=True)
class DataConfig:
    concentrations: tuple[float, ...] = (0.2, 0.3, 0.4)
    seed: int = 0
    snapshots: int = 40
    warm_start_snapshots: int = 0


@dataclass(frozen=True)
class RolloutSettings:
    dtau: float = 4.0
    warm_start_time: float = 100.0
    margin_rows: int = 8
    grow_rows: int = 16
    max_height: int = 256
    active_margin: int | None = 32  # solid rows below the front seen by the surrogate; None = whole domain


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale defaults: 64 x 64 grid, snapshots every 500 steps, gaps 1..4.

    Training runs 30 epochs at learning rate 1e-3, which fits the desk budget.
    """

    grid: GridConfig = GridConfig()
    physics: dict = field(default_factory=dict)  # overrides on PhysicsParams.for_grid(dx)
    solver: SolverConfig = SolverConfig()
    data: DataConfig = DataConfig()
    model: UNetConfig = UNetConfig()
    train: TrainConfig = TrainConfig(learning_rate=1e-3, epochs=30)
    rollout: RolloutSettings = RolloutSettings()
    k_min: int = 1
    k_max: int = 4

    def physics_params(self) -> PhysicsParams:
        return PhysicsParams.for_grid(self.grid.dx, **self.physics)

    def extension(self) -> ExtensionPolicy:
        r = self.rollout
        return ExtensionPolicy(r.margin_rows, r.grow_rows, r.max_height)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ParameterError("configuration must be a JSON object")
        sections = {"grid": GridConfig, "solver": SolverConfig, "data": DataConfig,
                    "model": UNetConfig, "train": TrainConfig, "rollout": RolloutSettings}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown configuration keys: {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            if key in sections:
                kw[key] = _build(sections[key], value, key)
            else:
                kw[key] = value
        cfg = cls(**kw)
        cfg.physics_params()  # validate overrides
        if cfg.k_min < 1 or cfg.k_max < cfg.k_min:
            raise ParameterError("need 1 <= k_min <= k_max")
        return cfg

    @classmethod
    def loads(cls, text: str) -> "PipelineConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as err:
            raise ParameterError(f"invalid JSON: {err}") from err

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def _build(kind, value, name):
    if not isinstance(value, dict):
        raise ParameterError(f"section {name!r} must be an object")
    allowed = {f.name for f in fields(kind)}
    bad = set(value) - allowed
    if bad:
        raise ParameterError(f"unknown keys in {name!r}: {sorted(bad)}")
    value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return kind(**value)
    except (TypeError, ValueError) as err:
        raise ParameterError(f"invalid {name!r} section: {err}") from err


def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    return obj
