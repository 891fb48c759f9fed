"""Run configuration: one JSON file, sectioned, unknown keys rejected.

Example::

    {
      "seed": 7,
      "data": {"n_materials": 120, "P": 256},
      "train": {"K": 8, "batch_size": 128, "epochs": 200},
      "eval": {"n_samples": 200, "alpha": 0.05},
      "infer": {"grid_min": 0.0, "grid_max": 1.2}
    }

Every section and field is optional. Command-line flags override the file.
"""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InputError
from .inverse import GridSpec
from .model import TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DataSection(_Section):
    n_materials: int = Field(120, ge=4)
    P: int = Field(256, ge=16)
    noise_scale: float = Field(0.05, ge=0)
    replicates_per_material: int = Field(5, ge=1)
    baseline: float = Field(0.02, ge=0)
    fractions: tuple[float, float, float] = (0.75, 0.1, 0.15)
    extrap_train_cutoff: float = 0.8
    extrap_test_cutoff: float = 0.9

    @field_validator("fractions")
    @classmethod
    def _fractions_sum(cls, v):
        if any(f < 0 for f in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError("fractions must be three non-negative shares summing to 1")
        return v

    @model_validator(mode="after")
    def _cutoffs(self):
        if self.extrap_train_cutoff > self.extrap_test_cutoff:
            raise ValueError("extrap_train_cutoff must not exceed extrap_test_cutoff")
        return self


class TrainSection(_Section):
    K: int = Field(15, ge=1)
    batch_size: int = Field(512, ge=2)
    learning_rate: float = Field(5e-4, gt=0)
    epochs: int = Field(200, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    n_layers: int = Field(6, ge=0)
    hidden: int = Field(64, ge=1)
    s_max: float = Field(2.0, gt=0)
    freeze_noise: bool = False
    freeze_gp: bool = False
    freeze_flow: bool = False
    gp_warm_start: bool = True
    record_wall_time: bool = True

    def to_train_config(self, seed: int) -> TrainConfig:
        fields = self.model_dump(exclude={"record_wall_time"})
        return TrainConfig(seed=seed, **fields)


class EvalSection(_Section):
    n_samples: int = Field(200, ge=1)
    alpha: float = Field(0.05, gt=0, lt=1)


class InferSection(_Section):
    grid_min: float = 0.0
    grid_max: float = 1.0
    grid_points: int = Field(201, ge=50)
    confidence: float = Field(0.95, gt=0, lt=1)

    @model_validator(mode="after")
    def _range(self):
        if not self.grid_max > self.grid_min:
            raise ValueError("grid_max must exceed grid_min")
        return self

    def grid(self) -> GridSpec:
        return GridSpec(self.grid_min, self.grid_max, self.grid_points)


class RunConfig(_Section):
    seed: int | None = None
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    infer: InferSection = InferSection()


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(obj: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(obj)
    except ValidationError as exc:
        raise InputError(f"invalid config: {_describe(exc)}") from exc


def load_config(path=None) -> RunConfig:
    """Read a config file, or return defaults when ``path`` is None."""
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        obj = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {p}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {p}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InputError(f"config {p} must hold a JSON object")
    return parse_config(obj)


def apply_overrides(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Return a copy of ``cfg`` with non-None ``values`` set in ``section``."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    obj = cfg.model_dump()
    obj[section].update(values)
    return parse_config(obj)


def config_schema() -> dict:
    return RunConfig.model_json_schema()
