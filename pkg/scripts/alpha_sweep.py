"""Sweep alpha on a 100-class blobs problem and show the plateau.

Importances are computed once; every grid point only re-dampens and
re-evaluates.

    python scripts/alpha_sweep.py
"""

import numpy as np

from lfssd.config import ExperimentConfig
from lfssd.harness import sweep_alpha

config = ExperimentConfig.from_file("configs/sweep.yaml")
result = sweep_alpha(config, np.geomspace(0.5, 50.0, 21).tolist(), write=False)

print(f"baseline: D_r {result.baseline['D_r']:.1f}  D_f {result.baseline['D_f']:.1f}")
for row in result.rows:
    mark = "*" if row["in_plateau"] else " "
    print(f"{mark} alpha {row['alpha']:7.3f}  D_r {row['D_r']:6.1f}  D_f {row['D_f']:6.1f}  "
          f"selected {row['n_selected']:5d}")
print(f"tuned alpha {result.tuned_alpha:.3f}; backward passes {result.backward_passes}")
