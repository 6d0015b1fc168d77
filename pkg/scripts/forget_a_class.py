"""Forget one class of a blobs dataset and compare against retraining.

    python scripts/forget_a_class.py [output_dir]
"""

import sys

from lfssd.config import ExperimentConfig
from lfssd.harness import run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "runs/forget_a_class"
config = ExperimentConfig.from_dict({"output_dir": out, "dampening": {"alpha": 3.0}})
report = run_experiment(config)

print(f"{'model':>10} {'D_r':>7} {'D_f':>7} {'test':>7} {'MIA':>7}")
for row in report.table_rows():
    print(f"{row['model']:>10} {row['D_r']:7.1f} {row['D_f']:7.1f} {row['test']:7.1f} {row['MIA']:7.1f}")
print(f"{report.selection['n_selected']} parameters dampened; report in {out}")
