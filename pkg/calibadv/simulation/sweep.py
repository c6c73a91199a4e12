# calibadv/simulation/sweep.py
"""
Independent simulator runs executed side by side: a rebalance-coefficient
sweep and the stage ablation (baseline, +decouple, +soft penalty, +all).
"""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

from ..errors import ConfigError
from ..parallel import ordered_map
from ..schemas import CalibrationConfig
from .config import Pipeline, SimConfig
from .experiment import ExperimentResult, run_experiment

logger = logging.getLogger(__name__)

ABLATION_STAGES = {
    "baseline": None,
    "+decouple": dict(enable_decouple_think=True, enable_soft_penalty=False, enable_rebalance=False),
    "+soft_penalty": dict(enable_decouple_think=True, enable_soft_penalty=True, enable_rebalance=False),
    "+all": dict(enable_decouple_think=True, enable_soft_penalty=True, enable_rebalance=True),
}


def _variant(base: SimConfig, pipeline: Pipeline, **calibration) -> SimConfig:
    data = base.calibration.model_dump()
    data.update(calibration)
    try:
        cal = CalibrationConfig.model_validate(data)
    except ValueError as e:
        raise ConfigError(f"invalid calibration variant {calibration}: {e}") from e
    return base.model_copy(update={"pipeline": pipeline, "calibration": cal})


def lambda_sweep_configs(base: SimConfig, lambdas: Sequence[float]) -> List[SimConfig]:
    # soft penalty and decoupling are off so only the rebalance coefficient varies
    return [
        _variant(
            base, Pipeline.CALIBADV,
            lambda_=float(lam), enable_rebalance=True, enable_soft_penalty=False, enable_decouple_think=False,
        )
        for lam in lambdas
    ]


def ablation_configs(base: SimConfig) -> Dict[str, SimConfig]:
    out: Dict[str, SimConfig] = {}
    for name, stages in ABLATION_STAGES.items():
        if stages is None:
            out[name] = _variant(base, Pipeline.BASELINE)
        else:
            out[name] = _variant(base, Pipeline.CALIBADV, **stages)
    return out


def run_lambda_sweep(
    base: SimConfig,
    lambdas: Sequence[float],
    *,
    workers: Optional[int] = None,
) -> Dict[float, ExperimentResult]:
    configs = lambda_sweep_configs(base, lambdas)
    results = ordered_map(run_experiment, configs, workers=workers)
    logger.info("lambda sweep finished over %s", list(lambdas))
    return {c.calibration.lambda_: r for c, r in zip(configs, results)}


def run_ablation(base: SimConfig, *, workers: Optional[int] = None) -> Dict[str, ExperimentResult]:
    configs = ablation_configs(base)
    results = ordered_map(run_experiment, list(configs.values()), workers=workers)
    return dict(zip(configs.keys(), results))


def summary_rows(results: Dict[object, ExperimentResult], key_name: str) -> List[Dict[str, object]]:
    rows = []
    for key, r in results.items():
        rows.append({
            key_name: key,
            "final_success": r.final_success,
            "final_garbage_mass": r.final_garbage_mass,
            "cumulative_neg_pos_ratio": r.cumulative_neg_pos_ratio,
            "collapse_step": r.collapse_step,
        })
    return rows
