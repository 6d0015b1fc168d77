"""ReLU multilayer perceptrons over a flat parameter vector.

Parameters live in one float64 vector.  Layer ``l`` contributes its weight
matrix (``fan_in x fan_out``, row-major) followed by its bias, so the index of
any parameter depends only on the layer sizes.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointIOError,
    ConfigError,
    LengthMismatchError,
    MalformedFileError,
    ShapeError,
)

CHECKPOINT_MAGIC = b"DAMPCKPT"
CHECKPOINT_VERSION = 1
ACTIVATIONS = {"relu": 0}


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise ConfigError("init_seed must fit in an unsigned 64-bit integer")

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_classes(self):
        return self.layer_sizes[-1]

    @cached_property
    def n_params(self):
        return sum(e.length for e in self.layout)

    @cached_property
    def layout(self):
        return tuple(parameter_layout(self))


@dataclass(frozen=True)
class LayoutEntry:
    layer: int
    kind: str  # "weight" | "bias"
    offset: int
    length: int
    shape: tuple


def parameter_layout(spec):
    entries = []
    offset = 0
    for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        entries.append(LayoutEntry(layer, "weight", offset, fan_in * fan_out, (fan_in, fan_out)))
        offset += fan_in * fan_out
        entries.append(LayoutEntry(layer, "bias", offset, fan_out, (fan_out,)))
        offset += fan_out
    return entries


@dataclass
class ParameterVector:
    """Flat view of all trainable parameters of a model built from ``spec``."""

    spec: ModelSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise LengthMismatchError(
                f"spec {self.spec.layer_sizes} needs {self.spec.n_params} parameters, "
                f"got shape {self.values.shape}"
            )

    @property
    def layout(self):
        return self.spec.layout

    def __len__(self):
        return self.values.size

    def copy(self):
        return ParameterVector(self.spec, self.values.copy())

    def with_values(self, values):
        return ParameterVector(self.spec, values)

    def arrays(self):
        """Per-entry reshaped views in layout order: W0, b0, W1, b1, ..."""
        return [self.values[e.offset:e.offset + e.length].reshape(e.shape) for e in self.layout]

    def describe(self, index):
        """``(layer, kind, position-within-entry)`` for a flat index."""
        for e in self.layout:
            if e.offset <= index < e.offset + e.length:
                return e.layer, e.kind, index - e.offset
        raise IndexError(index)


def init_model(spec):
    """Glorot-uniform weights and zero biases.

    Uses numpy's PCG64 generator (``numpy.random.default_rng``) seeded with
    ``spec.init_seed``; layers are drawn in layout order.
    """
    rng = np.random.default_rng(spec.init_seed)
    values = np.zeros(spec.n_params)
    for e in spec.layout:
        if e.kind == "weight":
            fan_in, fan_out = e.shape
            s = np.sqrt(6.0 / (fan_in + fan_out))
            values[e.offset:e.offset + e.length] = rng.uniform(-s, s, size=e.length)
    return ParameterVector(spec, values)


def param_tensors(theta, requires_grad=True):
    return [ad.Tensor(a, requires_grad=requires_grad) for a in theta.arrays()]


def flat_grad(spec, tensors):
    """Concatenate the gradients of ``tensors`` back into layout order."""
    out = np.zeros(spec.n_params)
    for e, t in zip(spec.layout, tensors):
        if t.grad is not None:
            out[e.offset:e.offset + e.length] = t.grad.ravel()
    return out


def forward_tensors(spec, tensors, x):
    """Logits as a :class:`~lfssd.autodiff.Tensor`, recorded on any active tape."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    if x.data.ndim not in (1, 2) or x.shape[-1] != spec.n_inputs:
        raise ShapeError("forward", x.shape, (spec.n_inputs,))
    h = x
    n_layers = len(spec.layer_sizes) - 1
    for layer in range(n_layers):
        w, b = tensors[2 * layer], tensors[2 * layer + 1]
        h = ad.add_bias(ad.matmul(h, w), b)
        if layer < n_layers - 1:
            h = ad.relu(h)
    return h


def forward(spec, theta, x):
    """Logits for one feature vector or a batch of rows."""
    if isinstance(theta, ParameterVector):
        theta = theta.values
    tensors = param_tensors(ParameterVector(spec, theta), requires_grad=False)
    return forward_tensors(spec, tensors, np.asarray(x, dtype=np.float64)).data


def _encode(spec, theta):
    values = np.asarray(theta.values if isinstance(theta, ParameterVector) else theta, dtype="<f8")
    if values.shape != (spec.n_params,):
        raise LengthMismatchError(f"spec needs {spec.n_params} parameters, got {values.size}")
    sizes = spec.layer_sizes
    header = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    header += struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}Q", *sizes)
    header += struct.pack("<IQQ", ACTIVATIONS[spec.activation], spec.init_seed, values.size)
    return header + values.tobytes()


def checkpoint_digest(spec, theta):
    """SHA-256 hex digest of the checkpoint bytes for ``(spec, theta)``."""
    return hashlib.sha256(_encode(spec, theta)).hexdigest()


def save_checkpoint(spec, theta, path):
    payload = _encode(spec, theta)
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise MalformedFileError(f"{self.path}: truncated at byte {self.pos}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def rest(self):
        return self.buf[self.pos:]


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`; returns ``(spec, theta)``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf, path)
    if buf[:8] != CHECKPOINT_MAGIC:
        raise MalformedFileError(f"{path}: not a checkpoint (bad magic)")
    r.pos = 8
    (version,) = r.take("<I")
    if version != CHECKPOINT_VERSION:
        raise MalformedFileError(f"{path}: unsupported checkpoint version {version}")
    (n_sizes,) = r.take("<I")
    if n_sizes > 1024:
        raise MalformedFileError(f"{path}: implausible layer count {n_sizes}")
    sizes = r.take(f"<{n_sizes}Q")
    act_id, seed, n_params = r.take("<IQQ")
    names = {v: k for k, v in ACTIVATIONS.items()}
    if act_id not in names:
        raise MalformedFileError(f"{path}: unknown activation id {act_id}")
    try:
        spec = ModelSpec(tuple(sizes), names[act_id], seed)
    except ConfigError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    payload = r.rest()
    if len(payload) != 8 * n_params:
        raise MalformedFileError(
            f"{path}: header declares {n_params} values but payload holds {len(payload) / 8:g}"
        )
    if n_params != spec.n_params:
        raise LengthMismatchError(
            f"{path}: spec {spec.layer_sizes} needs {spec.n_params} parameters, file has {n_params}"
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return spec, ParameterVector(spec, values)
