"""Sweep every objective preset on one cohort and print a summary table.

Each preset trains on the same split and reports time-averaged AUROC/AUPRC,
mirroring the ablation layout the toolkit is organized around.

    python scripts/run_table_presets.py --out runs/table --seed 0 [--epochs 6]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from mtte.harness import desk_config, run_preset
from mtte.losses import PRESETS
from mtte.metrics import read_report_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=6)
    parser.add_argument("--cases", type=int, default=80)
    parser.add_argument("--controls", type=int, default=320)
    args = parser.parse_args()

    out = Path(args.out)
    rows = []
    for preset in PRESETS:
        from mtte.datagen import GeneratorConfig

        cfg = desk_config(
            preset,
            args.seed,
            epochs=args.epochs,
            generator=GeneratorConfig(n_cases=args.cases, n_controls=args.controls, seed=args.seed),
        )
        paths = run_preset(cfg, out / preset)[args.seed]
        report = read_report_csv(paths["metrics"])
        rows.append((preset, report.time_averaged_auroc, report.time_averaged_auprc))
        print(f"{preset:14s} AUROC {rows[-1][1]:.3f}  AUPRC {rows[-1][2]:.3f}")

    print("\npreset,auroc,auprc")
    for preset, roc, prc in rows:
        print(f"{preset},{roc:.4f},{prc:.4f}")


if __name__ == "__main__":
    main()
