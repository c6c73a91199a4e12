# calibadv/simulation/config.py
from __future__ import annotations

import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..errors import ConfigError
from ..schemas import CalibrationConfig


class Pipeline(str, Enum):
    BASELINE = "baseline"
    CALIBADV = "calibadv"


class CostModel(BaseModel):
    """Synthetic token cost per action; counts include the think prefix."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    query_tokens: int = Field(default=8, ge=1)
    answer_tokens: int = Field(default=6, ge=1)
    garbage_tokens: int = Field(default=12, ge=1)
    fluent_logprob: float = Field(default=-0.05, le=0.0)
    garbage_logprob: float = Field(default=-4.5, le=0.0)


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 0
    pipeline: Pipeline = Pipeline.CALIBADV

    # environment
    n_questions: int = Field(default=20, ge=1)
    hops: int = Field(default=2, ge=1)
    distractors: int = Field(default=3, ge=0)
    distractors_per_query: int = Field(default=1, ge=0)  # extra distractor docs per non-empty lookup

    # training
    group_size: int = Field(default=5, ge=2)
    questions_per_batch: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=0.5, ge=0.0)
    updates: int = Field(default=400, ge=1)
    temperature: float = Field(default=1.0, gt=0.0)
    fluency_coupling: float = Field(default=1.0, ge=0.0)  # shared fluency step, in units of learning_rate

    # initial policy
    answer_bias_early: float = -4.0
    garbage_logit: float = 0.0
    opener_garble_logit: float = -2.0

    costs: CostModel = CostModel()
    calibration: CalibrationConfig = CalibrationConfig()

    # bookkeeping
    archive_every: int = Field(default=50, ge=1)
    collapse_window: int = Field(default=20, ge=1)
    collapse_drop: float = Field(default=0.5, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _costs_fit_prefix(self) -> "SimConfig":
        # every turn holds the think prefix plus at least the action token
        need = self.calibration.think_prefix_tokens + 1
        for name in ("query_tokens", "answer_tokens", "garbage_tokens"):
            if getattr(self.costs, name) < need:
                raise ValueError(f"costs.{name} must be >= think_prefix_tokens + 1 ({need})")
        return self

    @property
    def prefix_supplied(self) -> bool:
        return self.pipeline is Pipeline.CALIBADV and self.calibration.enable_decouple_think

    @property
    def max_turns(self) -> int:
        return self.hops + 1

    def with_overrides(self, **overrides: Any) -> "SimConfig":
        """Re-validated copy; None values are ignored, `calibration` merges key by key."""
        data = self.model_dump()
        cal = dict(overrides.pop("calibration", None) or {})
        if "lambda" in cal:
            cal["lambda_"] = cal.pop("lambda")
        for k, v in overrides.items():
            if v is not None:
                data[k] = v
        data["calibration"].update({k: v for k, v in cal.items() if v is not None})
        try:
            return SimConfig.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"invalid simulator config: {e}") from e


def load_sim_config(path: Union[str, Path], **overrides: Any) -> SimConfig:
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        try:
            if path.suffix.lower() == ".json":
                raw = json.load(f)
            else:
                raw = yaml.safe_load(f)
        except (json.JSONDecodeError, yaml.YAMLError) as e:
            raise ConfigError(f"{path}: cannot parse config ({e})") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        config = SimConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid simulator config: {e}") from e
    return config.with_overrides(**overrides) if overrides else config


def config_to_dict(config: SimConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json", by_alias=True)
