"""Per-parameter importance: Fisher diagonal and label-free output sensitivity.

Both estimators take one forward and one backward pass per sample and average
a per-sample, per-parameter quantity:

* ``fisher_diagonal``: the squared gradient of the training loss.
* ``lfssd_sensitivity``: the absolute gradient of the squared l2 norm of the
  network output.  No labels are involved.

Samples are processed in sorted index order and reduced with a fixed
pairwise tree, so the result does not depend on how the caller ordered the
indices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointIOError,
    CheckpointMismatchError,
    ConfigError,
    EmptySelectionError,
    LengthMismatchError,
    MalformedFileError,
)
from .model import ParameterVector, checkpoint_digest, flat_grad, forward_tensors, param_tensors

SOURCES = ("fisher", "lfssd")
OVER = ("full", "forget")
OUTPUT_SPACES = ("logits", "softmax")
IMPORTANCE_MAGIC = b"DAMPIMPT"
IMPORTANCE_VERSION = 1


@dataclass(frozen=True)
class ImportanceVector:
    values: np.ndarray
    source: str
    sample_count: int
    over: str
    output_space: str = "logits"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1:
            raise ValueError("importance values must be a 1-D vector")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("importance values must be finite and non-negative")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown importance source {self.source!r}")
        if self.over not in OVER:
            raise ConfigError(f"unknown importance set {self.over!r}")
        if self.output_space not in OUTPUT_SPACES:
            raise ConfigError(f"unknown output space {self.output_space!r}")

    def __len__(self):
        return self.values.size


class PairwiseSum:
    """Streaming pairwise summation of equally shaped arrays.

    Partial sums are merged like a binary counter, so the reduction tree is a
    function of the number of terms only.
    """

    def __init__(self):
        self._stack = []  # (n_terms, partial)
        self.count = 0

    def add(self, x):
        size, acc = 1, np.array(x, dtype=np.float64)
        while self._stack and self._stack[-1][0] == size:
            prev_size, prev = self._stack.pop()
            acc = prev + acc
            size += prev_size
        self._stack.append((size, acc))
        self.count += 1

    def total(self):
        if not self._stack:
            raise EmptySelectionError("sum of zero terms")
        acc = self._stack[-1][1]
        for _, partial in reversed(self._stack[:-1]):
            acc = partial + acc
        return acc


def _values(theta):
    return theta.values if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=np.float64)


def sample_gradient(spec, theta, x, objective):
    """Gradient of ``objective(logits_tensor)`` w.r.t. the flat parameters for one row."""
    tensors = param_tensors(ParameterVector(spec, _values(theta)))
    with ad.Tape() as tape:
        out = objective(forward_tensors(spec, tensors, x))
    ad.backward(out, tape)
    return flat_grad(spec, tensors)


def _sorted(indices):
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    if idx.size == 0:
        raise EmptySelectionError("importance over an empty index set")
    return idx


def _mean_of(spec, theta, features, indices, objective, transform):
    acc = PairwiseSum()
    for k in indices:
        acc.add(transform(sample_gradient(spec, theta, features[k], objective)))
    return acc.total() / acc.count


def fisher_diagonal(spec, theta, dataset, indices, label_source="fine", loss="cross_entropy", over="full"):
    """Mean over samples of the squared per-sample loss gradient.

    ``loss="squared_error"`` swaps cross-entropy for ``sum((f(x) - t)^2)`` with
    ``t`` the one-hot label, or the raw label value for a single-output model.
    It exists for analytic checks.
    """
    indices = _sorted(indices)
    X = dataset.features
    Y = dataset.labels(label_source)

    def values_for(k):
        y = Y[k]
        if loss == "cross_entropy":
            return lambda logits: ad.cross_entropy(logits, int(y))
        if loss == "squared_error":
            target = np.full(spec.n_classes, float(y)) if spec.n_classes == 1 else np.eye(spec.n_classes)[y]
            return lambda logits: ad.l2_squared_norm(ad.add(logits, ad.Tensor(-target)))
        raise ConfigError(f"unknown loss {loss!r}")

    acc = PairwiseSum()
    for k in indices:
        g = sample_gradient(spec, theta, X[k], values_for(k))
        acc.add(g * g)
    return ImportanceVector(acc.total() / acc.count, "fisher", int(indices.size), over)


def lfssd_sensitivity(spec, theta, features, indices, output_space="logits", over="full"):
    """Mean over samples of ``|d ||f(x)||^2 / d theta_i|``.

    ``features`` is a feature matrix; a :class:`~lfssd.data.Dataset` is also
    accepted, in which case only its ``features`` attribute is read.
    ``output_space`` picks whether ``f`` is the raw logits or their softmax.
    """
    X = getattr(features, "features", features)
    indices = _sorted(indices)
    if output_space == "logits":
        objective = ad.l2_squared_norm
    elif output_space == "softmax":
        def objective(logits):
            return ad.l2_squared_norm(ad.softmax(logits))
    else:
        raise ConfigError(f"unknown output space {output_space!r}")
    mean = _mean_of(spec, theta, X, indices, objective, np.abs)
    return ImportanceVector(mean, "lfssd", int(indices.size), over, output_space)


def compute_importance(method, spec, theta, dataset, indices, over, label_source="fine", output_space="logits"):
    """Dispatch to the estimator matching an unlearning method (``ssd`` or ``lfssd``)."""
    if method == "ssd":
        return fisher_diagonal(spec, theta, dataset, indices, label_source=label_source, over=over)
    if method == "lfssd":
        return lfssd_sensitivity(spec, theta, dataset.features, indices, output_space, over=over)
    raise ConfigError(f"unknown method {method!r}")


def save_importance(imp, path, spec, theta):
    """Write ``imp`` with the SHA-256 of the checkpoint it was computed from."""
    digest = bytes.fromhex(checkpoint_digest(spec, theta))
    head = IMPORTANCE_MAGIC + struct.pack(
        "<IIIIQQ",
        IMPORTANCE_VERSION,
        SOURCES.index(imp.source),
        OVER.index(imp.over),
        OUTPUT_SPACES.index(imp.output_space),
        imp.sample_count,
        imp.values.size,
    )
    try:
        Path(path).write_bytes(head + digest + imp.values.astype("<f8").tobytes())
    except OSError as exc:
        raise CheckpointIOError(f"cannot write importance file {path}: {exc}") from exc


def load_importance(path, spec=None, theta=None):
    """Read an importance file.

    When ``spec`` and ``theta`` are given, the stored checkpoint hash must
    match them, otherwise :class:`CheckpointMismatchError` is raised.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read importance file {path}: {exc}") from exc
    fixed = struct.calcsize("<IIIIQQ")
    if buf[:8] != IMPORTANCE_MAGIC:
        raise MalformedFileError(f"{path}: not an importance file (bad magic)")
    if len(buf) < 8 + fixed + 32:
        raise MalformedFileError(f"{path}: truncated header")
    version, src, over, space, count, n = struct.unpack_from("<IIIIQQ", buf, 8)
    if version != IMPORTANCE_VERSION:
        raise MalformedFileError(f"{path}: unsupported version {version}")
    if src >= len(SOURCES) or over >= len(OVER) or space >= len(OUTPUT_SPACES):
        raise MalformedFileError(f"{path}: bad enum value in header")
    digest = buf[8 + fixed:8 + fixed + 32].hex()
    payload = buf[8 + fixed + 32:]
    if len(payload) != 8 * n:
        raise MalformedFileError(f"{path}: header declares {n} values, payload has {len(payload) / 8:g}")
    if spec is not None:
        if n != spec.n_params:
            raise LengthMismatchError(f"{path}: {n} values for a model with {spec.n_params} parameters")
        if theta is not None and digest != checkpoint_digest(spec, theta):
            raise CheckpointMismatchError(f"{path}: computed from a different checkpoint")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return ImportanceVector(values, SOURCES[src], count, OVER[over], OUTPUT_SPACES[space])
