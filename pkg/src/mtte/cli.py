"""Command-line entry points: generate / train / evaluate / preset / conflict-report."""

from __future__ import annotations

import os

# single-threaded BLAS keeps artifact bytes reproducible run to run
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from .datagen import generate_cohort, read_cohort_jsonl, write_cohort_jsonl
from .harness import (
    ExperimentConfig,
    desk_config,
    load_config,
    run_preset,
)
from .metrics import write_report_csv
from .model import load_params
from .surgery import read_conflict_csv


def moving_average(series, window: int) -> list[float]:
    """Centered moving average, truncated at the edges."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > len(series):
        raise ValueError(f"window {window} exceeds series length {len(series)}")
    vals = list(series)
    half = window // 2
    out = []
    for i in range(len(vals)):
        lo = max(0, i - half)
        hi = min(len(vals), lo + window)
        lo = max(0, hi - window)
        chunk = vals[lo:hi]
        out.append(sum(chunk) / len(chunk))
    return out


def _cmd_generate(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cohort = generate_cohort(cfg.generator)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_cohort_jsonl(cohort, out)
    print(f"wrote {len(cohort)} records to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cohort = read_cohort_jsonl(args.data)
    run_preset(cfg, args.out, cohort=cohort)
    print(f"trained preset {cfg.preset!r} on {args.data}; artifacts in {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .harness import evaluate_by_leadtime

    params, mcfg = load_params(args.checkpoint)
    cohort = read_cohort_jsonl(args.data)
    report = evaluate_by_leadtime(params, mcfg, cohort)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, out / "metrics.csv")
    print(f"time-averaged AUROC {report.time_averaged_auroc:.4f} AUPRC {report.time_averaged_auprc:.4f}")
    return 0


def _cmd_preset(args) -> int:
    if args.config:
        import dataclasses

        base = load_config(args.config)
        fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
        fields.update(
            preset=args.name,
            seeds=(args.seed,),
            generator=dataclasses.replace(base.generator, seed=args.seed),
            surgery="pcgrad" if args.name == "all" else base.surgery,
        )
        cfg = ExperimentConfig(**fields)
    else:
        cfg = desk_config(args.name, args.seed)
    run_preset(cfg, args.out)
    print(f"preset {args.name!r} seed {args.seed} complete; artifacts in {args.out}")
    return 0


def _cmd_conflict_report(args) -> int:
    run = Path(args.run)
    rows = read_conflict_csv(run / "conflict.csv")
    if not rows:
        print("no conflict telemetry in this run")
        return 1
    r = [row["r_t"] for row in rows]
    avg = moving_average(r, min(args.window, len(r)))
    with open(run / "conflict_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "r_t", "moving_avg"])
        for row, m in zip(rows, avg):
            writer.writerow([row["step"], repr(row["r_t"]), repr(m)])
    pair_means = {}
    for col in rows[0]:
        if col.startswith("cos_"):
            vals = [row[col] for row in rows if row[col] is not None]
            if vals:
                pair_means[col] = float(np.mean(vals))
    summary = {
        "steps": len(rows),
        "mean_conflict_rate": float(np.mean(r)),
        "final_moving_avg": avg[-1],
        "pair_mean_cosines": pair_means,
    }
    with open(run / "conflict_summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtte", description="Multi-task time-to-event learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic cohort JSONL")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train on a cohort file")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True, help="cohort JSONL")
    p.add_argument("--out", required=True, help="artifact directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a cohort file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("preset", help="end-to-end desk-scale preset run")
    p.add_argument("--name", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="optional base config to override")
    p.set_defaults(func=_cmd_preset)

    p = sub.add_parser("conflict-report", help="summarize a run's conflict telemetry")
    p.add_argument("--run", required=True, help="run directory containing conflict.csv")
    p.add_argument("--window", type=int, default=25, help="moving-average window")
    p.set_defaults(func=_cmd_conflict_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
