"""Entropy-based membership inference before and after unlearning.

    python scripts/membership_attack.py
"""

from lfssd.config import ExperimentConfig
from lfssd.dampening import unlearn
from lfssd.evaluation import mia
from lfssd.harness import subset_rows, prepare, train_baseline

config = ExperimentConfig.from_dict({"dampening": {"alpha": 3.0}})
prep = prepare(config)
theta, _ = train_baseline(config, prep)
forgot, *_ = unlearn(prep.spec, theta, prep.dataset, prep.split, "lfssd", config.dampening_config())
held_out = subset_rows(prep.test_set, prep.test_indices)

for name, params in [("baseline", theta), ("unlearned", forgot)]:
    r = mia(prep.spec, params, prep.dataset, prep.split, held_out, config.mia_config())
    print(f"{name:>9}: {r.mia_score:5.1f}% of forgotten rows look like members "
          f"(entropy threshold {r.threshold_entropy:.3g}, attack train acc {r.attack_train_accuracy:.1f}%)")
