# calibadv/ledger.py
"""
Run ledger: finished simulator runs are stored with their configuration,
summary metrics and per-step telemetry so sweeps can be compared later.
"""

from __future__ import annotations

import json
from typing import Any, Dict, List

from sqlalchemy.orm import Session, selectinload, sessionmaker

from . import models
from .reporting import REPORT_COLUMNS
from .schemas import MispenaltyBucket, TelemetryRecord
from .simulation.config import config_to_dict
from .simulation.experiment import ExperimentResult

LEDGER_COLUMNS = [
    "run_id",
    "pipeline",
    "seed",
    "lambda",
    "final_success",
    "final_garbage_mass",
    "cumulative_neg_pos_ratio",
    "collapse_step",
]

_ROW_FIELDS = [c for c in REPORT_COLUMNS if c != "training_step"]


def record_run(SessionFactory: sessionmaker, result: ExperimentResult) -> int:
    sess: Session = SessionFactory()
    try:
        cfg = result.config
        run = models.ExperimentRun(
            pipeline=cfg.pipeline.value,
            seed=cfg.seed,
            lambda_=cfg.calibration.lambda_,
            updates=cfg.updates,
            config_json=json.dumps(config_to_dict(cfg), sort_keys=True),
            final_success=result.final_success,
            final_garbage_mass=result.final_garbage_mass,
            cumulative_neg_pos_ratio=result.cumulative_neg_pos_ratio,
            collapse_step=result.collapse_step,
        )
        for rec in result.telemetry:
            run.telemetry.append(
                models.TelemetryRow(
                    training_step=rec.training_step,
                    **{f: getattr(rec, f) for f in _ROW_FIELDS},
                    mispenalty_json=json.dumps([b.model_dump() for b in rec.mispenalty_by_step]),
                )
            )
        sess.add(run)
        sess.commit()
        return run.id
    finally:
        sess.close()


def list_runs(SessionFactory: sessionmaker) -> List[Dict[str, Any]]:
    sess: Session = SessionFactory()
    try:
        runs = sess.query(models.ExperimentRun).order_by(models.ExperimentRun.id).all()
        return [
            {
                "run_id": r.id,
                "pipeline": r.pipeline,
                "seed": r.seed,
                "lambda": r.lambda_,
                "final_success": r.final_success,
                "final_garbage_mass": r.final_garbage_mass,
                "cumulative_neg_pos_ratio": r.cumulative_neg_pos_ratio,
                "collapse_step": r.collapse_step,
            }
            for r in runs
        ]
    finally:
        sess.close()


def run_telemetry(SessionFactory: sessionmaker, run_id: int) -> List[TelemetryRecord]:
    sess: Session = SessionFactory()
    try:
        run = (
            sess.query(models.ExperimentRun)
            .options(selectinload(models.ExperimentRun.telemetry))
            .filter_by(id=run_id)
            .one_or_none()
        )
        if run is None:
            return []
        return [
            TelemetryRecord(
                training_step=row.training_step,
                **{f: getattr(row, f) for f in _ROW_FIELDS},
                mispenalty_by_step=tuple(
                    MispenaltyBucket(**b) for b in json.loads(row.mispenalty_json or "[]")
                ),
            )
            for row in run.telemetry
        ]
    finally:
        sess.close()
