#!/usr/bin/env python3
# The full experiment on a 12-node graph with shrunken budgets, start to finish in about a minute.
# Same thing from the shell:  cascade-defense pipeline --nodes 12 --epochs 20 --out runs/demo

import csv
import sys
from pathlib import Path

from cascade_defense import ExperimentConfig, run_pipeline

out = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/demo")
cfg = ExperimentConfig.from_dict({
    "run_id": "demo", "cascade": "shortest-path", "seed": 7, "graph": {"n": 12}, "out": str(out),
    "data": {"trials": 40, "validation_trials": 500},
    "train": {"epochs": 20},
    "evaluation": {"pulls_budget": 3000, "eval_plays": 1000, "self_play": 1000, "baseline_samples": 500},
})
run_pipeline(cfg)

print()
with open(out / "metrics.csv") as fh:
    for row in csv.DictReader(fh):
        kl = f"{float(row['kl']):8.3f}" if row["kl"] else "       -"
        val = f"{float(row['val_err']):.4f}" if row["val_err"] else "     -"
        print(f"{row['method']:16s} kl {kl}   exploitability {float(row['exploitability']):.4f}   val_err {val}")
print("\nartifacts under", out)
