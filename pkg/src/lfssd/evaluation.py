"""Forgetting metrics: output entropy and an entropy-based membership inference attack."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DegenerateAttackError, EmptySelectionError
from .model import forward

# Attack training accuracy below this is reported as "no usable signal".
DEGENERATE_ACCURACY = 55.0


@dataclass(frozen=True)
class MiaConfig:
    attack_seed: int = 0
    members_per_class: int = 500
    lr: float = 1.0
    iterations: int = 2000

    def __post_init__(self):
        if self.members_per_class < 1:
            raise ConfigError("members_per_class must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")


@dataclass(frozen=True)
class MiaReport:
    mia_score: float
    attack_train_accuracy: float
    threshold_entropy: float | None
    degenerate: bool
    n_members: int
    weight: float
    bias: float

    def to_dict(self):
        return asdict(self)


def entropy_of_probs(p):
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -(p * logs).sum(axis=-1)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def output_entropy(spec, theta, x):
    """Shannon entropy (nats) of the softmax output; one value per row for a batch."""
    h = entropy_of_probs(_softmax(forward(spec, theta, x)))
    return float(h) if np.ndim(h) == 0 else h


def fit_logistic_1d(features, labels, cfg):
    """Full-batch gradient descent on the mean logistic loss of one feature.

    The feature is centred and scaled to unit variance before fitting so a
    fixed learning rate works whatever the entropy scale; the returned
    ``(weight, bias)`` are converted back to raw feature units.  The fit starts
    from ``w = b = 0``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("features and labels must be 1-D and equally long")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateAttackError("logistic fit needs both classes")
    mu = x.mean()
    sd = x.std()
    if sd == 0:
        sd = 1.0
    z = (x - mu) / sd
    w = b = 0.0
    for _ in range(cfg.iterations):
        r = expit(w * z + b) - y
        w -= cfg.lr * float(np.mean(r * z))
        b -= cfg.lr * float(np.mean(r))
    return w / sd, b - w * mu / sd


def predict_seen(weight, bias, features):
    """True where the attack probability is strictly above 0.5."""
    return expit(weight * np.asarray(features, dtype=np.float64) + bias) > 0.5


def mia(spec, theta, dataset, split, test_set, cfg):
    """Fraction (%) of forget rows the attack labels as training members.

    The attack is a logistic regression on output entropy, trained on a
    balanced sample of retain rows ("seen") and held-out rows ("unseen"), each
    drawn with ``numpy.random.default_rng(cfg.attack_seed)``.
    """
    forget = np.asarray(split.forget_indices)
    if forget.size == 0:
        raise EmptySelectionError("membership inference needs a non-empty forget set")
    retain = np.asarray(split.retain_indices)
    m = min(cfg.members_per_class, retain.size, len(test_set))
    if m == 0:
        raise DegenerateAttackError("attack needs both retain and held-out rows")
    rng = np.random.default_rng(cfg.attack_seed)
    seen = np.sort(rng.choice(retain, size=m, replace=False))
    unseen = np.sort(rng.choice(len(test_set), size=m, replace=False))

    feats = np.concatenate([
        output_entropy(spec, theta, dataset.features[seen]),
        output_entropy(spec, theta, test_set.features[unseen]),
    ])
    labels = np.concatenate([np.ones(m), np.zeros(m)])
    w, b = fit_logistic_1d(feats, labels, cfg)
    train_acc = 100.0 * float(np.mean(predict_seen(w, b, feats) == (labels == 1)))

    forget_h = np.atleast_1d(output_entropy(spec, theta, dataset.features[forget]))
    score = 100.0 * float(np.mean(predict_seen(w, b, forget_h)))
    return MiaReport(
        mia_score=score,
        attack_train_accuracy=train_acc,
        threshold_entropy=(-b / w) if w != 0 else None,
        degenerate=bool(w == 0 or train_acc < DEGENERATE_ACCURACY),
        n_members=int(m),
        weight=float(w),
        bias=float(b),
    )
