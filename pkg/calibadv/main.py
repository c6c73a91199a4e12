# calibadv/main.py
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .analysis import mispenalty_rate, summarize_batch
from .calibration import calibrate_group
from .db import database_url, make_session_factory
from .errors import AlignmentError, CalibAdvError, MissingLogprobsError
from .ingestion import (
    CalibratedGroup,
    parse_trace_file,
    read_calibrated_file,
    write_calibrated_file,
    write_trace_file,
)
from .ledger import LEDGER_COLUMNS, list_runs, record_run
from .parallel import ordered_map
from .reporting import emit_report, write_mispenalty_table
from .schemas import CalibrationConfig, RebalanceScope
from .simulation.config import Pipeline, load_sim_config
from .simulation.experiment import run_experiment

logger = logging.getLogger("calibadv")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ---------------------------
# Flags
# ---------------------------

def _calibration_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("calibration")
    g.add_argument("--lambda", dest="lambda_", type=float, default=None,
                   help="rebalance coefficient, > 0 (default 1.0)")
    g.add_argument("--correctness-threshold", type=float, default=None,
                   help="r_final at or above which a rollout counts as correct (default 0.5)")
    g.add_argument("--eps", type=float, default=None, help="GRPO std epsilon (default 1e-6)")
    g.add_argument("--ppl-threshold", type=float, default=None, help="high-PPL cutoff (default 50)")
    g.add_argument("--think-prefix-tokens", type=int, default=None,
                   help="tokens in the harness-supplied think tag (default 2)")
    g.add_argument("--rebalance-scope", choices=[s.value for s in RebalanceScope], default=None,
                   help="rebalance the final answer step only, or every step index (default final_answer)")
    g.add_argument("--no-std-normalization", action="store_true",
                   help="centre rewards without dividing by the group std")
    g.add_argument("--no-soft-penalty", action="store_true", help="disable silver-document soft penalization")
    g.add_argument("--no-rebalance", action="store_true", help="disable final-step rebalance")
    g.add_argument("--no-decouple", action="store_true", help="disable think-token decoupling")
    g.add_argument("--pipeline", choices=[p.value for p in Pipeline], default=None,
                   help="baseline disables every calibration stage (default calibadv)")
    return p


def _calibration_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    out: Dict[str, Any] = {
        "lambda_": args.lambda_,
        "correctness_threshold": args.correctness_threshold,
        "eps": args.eps,
        "ppl_threshold": args.ppl_threshold,
        "think_prefix_tokens": args.think_prefix_tokens,
        "rebalance_scope": args.rebalance_scope,
    }
    if args.no_std_normalization:
        out["normalize_std"] = False
    if args.no_soft_penalty:
        out["enable_soft_penalty"] = False
    if args.no_rebalance:
        out["enable_rebalance"] = False
    if args.no_decouple:
        out["enable_decouple_think"] = False
    return {k: v for k, v in out.items() if v is not None}


def _calibration_config(args: argparse.Namespace) -> CalibrationConfig:
    config = CalibrationConfig(**_calibration_overrides(args))
    if args.pipeline == Pipeline.BASELINE.value:
        config = config.without_stages()
    return config


# ---------------------------
# Subcommands
# ---------------------------

def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _calibration_config(args)
    groups = parse_trace_file(args.input)

    def run(group):
        assignment, silver, rewards = calibrate_group(group, config)
        return CalibratedGroup(group=group, assignment=assignment, silver=silver, rewards=tuple(rewards))

    results = ordered_map(run, groups)
    write_calibrated_file(results, args.out)
    for item in results:
        mean = float(np.mean([r.r_final for r in item.rewards]))
        print(
            f"{item.group.question_id}\tG={item.group.size}\treward_mean={mean:.4f}\t"
            f"silver_docs={len(item.silver.docs)}"
        )
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _calibration_config(args)
    groups = parse_trace_file(args.traces)
    calibrated = read_calibrated_file(args.assignments)
    if len(groups) != len(calibrated):
        raise AlignmentError(f"{len(calibrated)} assignment records for {len(groups)} trace groups")
    for g, c in zip(groups, calibrated):
        if g.question_id != c.group.question_id:
            raise AlignmentError(f"question {g.question_id!r} is paired with assignments for {c.group.question_id!r}")
    assignments = [c.assignment for c in calibrated]

    buckets = mispenalty_rate(groups, assignments, config)
    table_path = Path(args.mispenalty_out) if args.mispenalty_out else Path(args.out).with_name(
        f"{Path(args.out).stem}_mispenalty.csv"
    )
    write_mispenalty_table(buckets, table_path)

    try:
        record = summarize_batch(0, groups, assignments, config)
    except MissingLogprobsError as e:
        logger.warning("telemetry report skipped: %s", e)
    else:
        emit_report([record], args.out)

    print("step_index\tproportion\tcount")
    for b in buckets:
        print(f"{b.step_index}\t{b.proportion:.4f}\t{b.sample_count}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_sim_config(
        args.config,
        seed=args.seed,
        pipeline=args.pipeline,
        calibration=_calibration_overrides(args),
    )
    result = run_experiment(config, progress=args.progress)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(result.telemetry, out_dir / "telemetry.csv")
    archived = [item for _, item in result.archive]
    write_trace_file([item.group for item in archived], out_dir / "traces.jsonl")
    write_calibrated_file(archived, out_dir / "assignments.jsonl")
    summary = result.policy_summary()
    with (out_dir / "policy_summary.json").open("w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")

    if args.db:
        run_id = record_run(make_session_factory(args.db), result)
        logger.info("recorded run %d in %s", run_id, args.db)

    ratio = result.cumulative_neg_pos_ratio
    print(
        f"pipeline={config.pipeline.value} seed={config.seed} "
        f"success={summary['expected_success']:.4f} garbage_mass={summary['garbage_mass']:.4f} "
        f"neg_pos={'' if ratio is None else f'{ratio:.4f}'} collapse_step={result.collapse_step}"
    )
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = list_runs(make_session_factory(args.db))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="", encoding="utf-8") as f:
            _write_rows(f, rows)
    _write_rows(sys.stdout, rows)
    return EXIT_OK


def _write_rows(stream, rows: List[Dict[str, Any]]) -> None:
    w = csv.DictWriter(stream, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if v is None else v for k, v in r.items()})


# ---------------------------
# Entry point
# ---------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="calibadv", description="Advantage calibration for multi-turn search rollouts")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)
    shared = [_calibration_flags()]

    p = sub.add_parser("calibrate", parents=shared, help="calibrate advantages for a trace file")
    p.add_argument("input", help="trace file, one group per line")
    p.add_argument("--out", required=True, help="calibrated output file")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze", parents=shared, help="mis-penalization table and telemetry report")
    p.add_argument("traces", help="trace file")
    p.add_argument("assignments", help="calibrated file holding the uncalibrated GRPO assignments")
    p.add_argument("--out", required=True, help="telemetry report (CSV)")
    p.add_argument("--mispenalty-out", default=None, help="mis-penalization table (default <out>_mispenalty.csv)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", parents=shared, help="run the synthetic training simulator")
    p.add_argument("config", help="simulator config (YAML or JSON)")
    p.add_argument("--out-dir", required=True, help="directory for telemetry, traces and policy summary")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--db", default=None, help="record the run in this database URL")
    p.add_argument("--progress", action="store_true", help="show a progress bar")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="list runs recorded in the ledger")
    p.add_argument("--db", default=None, help=f"database URL (default ${{CALIBADV_DB_URL}} or {database_url()})")
    p.add_argument("--out", default=None, help="also write the table to this CSV file")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CalibAdvError, ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
