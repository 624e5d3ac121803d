"""Experiment configuration schema (JSON with a version field, unknown keys rejected)."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import InvalidInput

CONFIG_VERSION = 1
DEFAULT_SEED = 42


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class GraphSpec(_Strict):
    kind: Literal["ring", "path", "complete", "random_geometric", "edge_list"] = "ring"
    n_agents: int = Field(10, ge=1)
    radius: float = 0.4
    seed: int = 0
    path: Optional[str] = None
    delta: Optional[float] = None


class ModelSpec(_Strict):
    kind: Literal["trig", "pairwise", "scalar", "linear"] = "pairwise"
    sigma2: float = Field(3.0, gt=0)
    n_informative: int = 1
    h: float = 1.0
    H: Optional[list[list[list[float]]]] = None
    Sigma: Optional[Union[float, list[Union[float, list[list[float]]]]]] = None


class ScheduleSpec(_Strict):
    a: float = Field(9.1, gt=0)
    b: Optional[float] = Field(None, gt=0)
    tau2: float = 0.3
    delta2: float = 0.4


class TruthSpec(_Strict):
    hypothesis: Literal["H0", "H1"] = "H1"
    theta_star: list[float] = Field(default_factory=lambda: [1.0, 0.9, 1.2, 1.1, 1.5])


class ExperimentConfig(_Strict):
    version: int = CONFIG_VERSION
    algorithm: Literal["nl", "l", "central"] = "l"
    graph: GraphSpec = Field(default_factory=GraphSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    truth: TruthSpec = Field(default_factory=TruthSpec)
    eta: Union[float, Literal["auto"]] = "auto"
    eta_epsilon: float = 0.01
    horizon: int = Field(1000, ge=1)
    trials: int = Field(50, ge=1)
    stride: int = Field(10, ge=1)
    z_stride: int = Field(1, ge=1)
    seed: int = DEFAULT_SEED
    k: int = Field(20, ge=1)
    allow_small_k: bool = False
    project: bool = False
    central_gain: float = Field(1.0, gt=0)
    batch_size: int = Field(50, ge=1)
    record_components: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}; expected {CONFIG_VERSION}")
        if isinstance(self.eta, float) and not math.isfinite(self.eta):
            raise ValueError("eta must be finite")
        if self.algorithm == "central" and self.model.kind != "scalar":
            raise ValueError("the fusion-center baseline is defined for the scalar model only")
        return self


def _format_error(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}" if loc else err["msg"])
    return "; ".join(parts)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise InvalidInput(f"invalid config: {_format_error(e)}") from None


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise InvalidInput(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidInput(f"config is not valid JSON: {e}") from None
    return parse_config(data)


def _coerce(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    data = cfg.model_dump()
    for item in overrides or ():
        if "=" not in item:
            raise InvalidInput(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise InvalidInput(f"unknown config key: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise InvalidInput(f"unknown config key: {key}")
        node[parts[-1]] = _coerce(raw)
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.model_dump(), indent=2, sort_keys=True) + "\n"
