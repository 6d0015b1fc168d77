"""Compare Fisher and label-free importance on a trained blobs model.

The ratio forget/full is what dampening thresholds against alpha; the script
prints how many parameters each estimator would flag.

    python scripts/importance_maps.py
"""

import numpy as np

from lfssd.data import FullClass, make_split, synthesize_blobs
from lfssd.importance import fisher_diagonal, lfssd_sensitivity
from lfssd.model import ModelSpec, init_model
from lfssd.training import TrainConfig, train

data = synthesize_blobs(n_classes=5, n_per_class=40, n_features=8, separation=6.0, seed=0)
spec = ModelSpec((8, 32, 5), init_seed=0)
theta, _ = train(spec, init_model(spec), data, np.arange(len(data)), TrainConfig(epochs=20, learning_rate=0.02))
split = make_split(data, FullClass(2))

everything = np.arange(len(data))
for name, estimate in [
    ("fisher", lambda idx: fisher_diagonal(spec, theta, data, idx).values),
    ("label-free", lambda idx: lfssd_sensitivity(spec, theta, data.features, idx).values),
]:
    full, forget = estimate(everything), estimate(split.forget_indices)
    for alpha in (1.0, 3.0, 10.0):
        print(f"{name:>10}, alpha={alpha:>4}: {np.sum(forget > alpha * full):4d} of {spec.n_params} selected")
