"""Mini-batch SGD with momentum, the retrain/finetune baselines, and accuracy."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DivergenceError, EmptySelectionError
from .model import ParameterVector, flat_grad, forward, forward_tensors, init_model, param_tensors


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    shuffle_seed: int = 0
    label_source: str = "fine"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0 or not np.isfinite(self.learning_rate):
            raise ConfigError("learning_rate must be a finite non-negative number")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.label_source not in ("fine", "coarse"):
            raise ConfigError(f"unknown label_source {self.label_source!r}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_labels(spec, dataset, source):
    if dataset.n_classes(source) > spec.n_classes:
        raise ConfigError(
            f"dataset has {dataset.n_classes(source)} {source} classes but the model "
            f"outputs {spec.n_classes}"
        )


def train(spec, theta_init, dataset, indices, config):
    """Train on ``dataset[indices]``; returns ``(theta, per-epoch mean losses)``.

    ``indices`` are sorted before use.  Each epoch visits them in an order
    drawn from ``numpy.random.default_rng(config.shuffle_seed)``, so the result
    depends only on the arguments.

    A zero learning rate is accepted and leaves the parameters bit-identical.
    """
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    if indices.size == 0:
        raise EmptySelectionError("cannot train on an empty index set")
    _check_labels(spec, dataset, config.label_source)
    X = dataset.features
    Y = dataset.labels(config.label_source)
    theta = np.array(theta_init.values if isinstance(theta_init, ParameterVector) else theta_init)
    velocity = np.zeros_like(theta)
    rng = np.random.default_rng(config.shuffle_seed)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(indices)
        total = 0.0
        for batch_no, start in enumerate(range(0, order.size, config.batch_size)):
            batch = order[start:start + config.batch_size]
            tensors = param_tensors(ParameterVector(spec, theta))
            with ad.Tape() as tape:
                loss = ad.cross_entropy(forward_tensors(spec, tensors, X[batch]), Y[batch])
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, batch_no, value)
            ad.backward(loss, tape)
            grad = flat_grad(spec, tensors)
            velocity = config.momentum * velocity + grad
            theta = theta - config.learning_rate * velocity
            total += value * batch.size
        losses.append(total / order.size)
    return ParameterVector(spec, theta), losses


def retrain_baseline(spec, dataset, split, config):
    """Fresh initialisation from ``spec.init_seed``, trained on the retain set only."""
    theta, _ = train(spec, init_model(spec), dataset, split.retain_indices, config)
    return theta


def finetune_baseline(spec, theta, dataset, split, config, epochs=2):
    """Continue training ``theta`` on the retain set for ``epochs`` epochs."""
    if epochs == 0:
        return theta.copy()
    tuned, _ = train(spec, theta, dataset, split.retain_indices, config.replace(epochs=epochs))
    return tuned


def predict(spec, theta, features):
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(forward(spec, theta, features), axis=1)


def accuracy(spec, theta, dataset, indices, label_source="fine"):
    """Percentage of ``dataset[indices]`` whose argmax logit matches the label."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptySelectionError("accuracy over an empty index set")
    pred = predict(spec, theta, dataset.features[indices])
    return 100.0 * float(np.mean(pred == dataset.labels(label_source)[indices]))
