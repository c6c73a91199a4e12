"""
Script to compare simulator runs across rebalance coefficients, or across the
calibration stage ablation.

Usage (from project root):

    python sweep_lambda.py calibadv/sample_data/sim_config.yaml --lambdas 0.5 1 2
    python sweep_lambda.py calibadv/sample_data/sim_config.yaml --ablation --out ablation.csv

Optional environment variables:

    export CALIBADV_THREADS=4         # runs executed side by side
    export CALIBADV_DB_URL=sqlite:///./calibadv_runs.db

Pass --db to also record every run in the run ledger.
"""

import argparse
import csv
import sys

from calibadv.db import make_session_factory
from calibadv.ledger import record_run
from calibadv.simulation.config import load_sim_config
from calibadv.simulation.sweep import run_ablation, run_lambda_sweep, summary_rows


def main(argv=None):
    parser = argparse.ArgumentParser(description="Rebalance-coefficient sweep and stage ablation")
    parser.add_argument("config", help="simulator config (YAML or JSON)")
    parser.add_argument("--lambdas", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0])
    parser.add_argument("--ablation", action="store_true", help="run the stage ablation instead of the sweep")
    parser.add_argument("--out", default=None, help="CSV file for the summary table")
    parser.add_argument("--db", default=None, help="record every run in this database URL")
    args = parser.parse_args(argv)

    base = load_sim_config(args.config)
    if args.ablation:
        results = run_ablation(base)
        rows = summary_rows(results, "variant")
    else:
        results = run_lambda_sweep(base, args.lambdas)
        rows = summary_rows(results, "lambda")

    if args.db:
        factory = make_session_factory(args.db)
        for r in results.values():
            record_run(factory, r)

    fieldnames = list(rows[0].keys()) if rows else []
    streams = [sys.stdout]
    if args.out:
        streams.append(open(args.out, "w", newline="", encoding="utf-8"))
    try:
        for stream in streams:
            w = csv.DictWriter(stream, fieldnames=fieldnames, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: "" if v is None else v for k, v in row.items()})
    finally:
        for stream in streams[1:]:
            stream.close()


if __name__ == "__main__":
    main()
