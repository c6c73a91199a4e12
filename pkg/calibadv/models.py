# calibadv/models.py
from datetime import datetime, timezone

from sqlalchemy import (
    Column,
    DateTime,
    Float,
    ForeignKey,
    Integer,
    String,
    Text,
)
from sqlalchemy.orm import relationship
from .db import Base


class ExperimentRun(Base):
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, index=True)
    created_at = Column(DateTime, default=lambda: datetime.now(timezone.utc))
    pipeline = Column(String, index=True)  # baseline | calibadv
    seed = Column(Integer, index=True)
    lambda_ = Column("lambda", Float)
    updates = Column(Integer)
    config_json = Column(Text)  # full SimConfig, aliases applied

    # Final summary
    final_success = Column(Float, nullable=True)
    final_garbage_mass = Column(Float, nullable=True)
    cumulative_neg_pos_ratio = Column(Float, nullable=True)
    collapse_step = Column(Integer, nullable=True)

    telemetry = relationship(
        "TelemetryRow",
        back_populates="run",
        order_by="TelemetryRow.training_step",
        cascade="all, delete-orphan",
    )


class TelemetryRow(Base):
    __tablename__ = "telemetry_rows"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), index=True)
    training_step = Column(Integer, index=True)

    mean_token_nll = Column(Float)
    perplexity = Column(Float)
    neg_pos_ratio = Column(Float, nullable=True)
    high_ppl_ratio = Column(Float)
    policy_entropy = Column(Float, nullable=True)
    success_rate = Column(Float, nullable=True)
    garbage_mass = Column(Float, nullable=True)
    format_rate = Column(Float, nullable=True)
    valid_search_steps = Column(Float, nullable=True)
    final_neg_pos_ratio = Column(Float, nullable=True)
    mispenalty_json = Column(Text, nullable=True)  # [{"step_index":..,"proportion":..,"sample_count":..}]

    run = relationship("ExperimentRun", back_populates="telemetry")
