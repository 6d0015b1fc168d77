"""Datasets, synthetic Gaussian blobs, CSV I/O and forget/retain splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyFileError, ParseError, SchemaError, SplitError


@dataclass
class Dataset:
    features: np.ndarray
    fine_labels: np.ndarray
    coarse_labels: np.ndarray | None = None
    n_fine: int | None = None
    n_coarse: int | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        self.fine_labels = np.asarray(self.fine_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.fine_labels.shape != (n,):
            raise ValueError("fine_labels length differs from the number of rows")
        if self.n_fine is None:
            self.n_fine = int(self.fine_labels.max()) + 1 if n else 0
        _check_range(self.fine_labels, self.n_fine, "fine")
        if self.coarse_labels is not None:
            self.coarse_labels = np.asarray(self.coarse_labels, dtype=np.int64)
            if self.coarse_labels.shape != (n,):
                raise ValueError("coarse_labels length differs from the number of rows")
            if self.n_coarse is None:
                self.n_coarse = int(self.coarse_labels.max()) + 1 if n else 0
            _check_range(self.coarse_labels, self.n_coarse, "coarse")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def labels(self, source="fine"):
        if source == "fine":
            return self.fine_labels
        if source == "coarse":
            if self.coarse_labels is None:
                raise SchemaError("coarse_label")
            return self.coarse_labels
        raise ConfigError(f"unknown label source {source!r}")

    def n_classes(self, source="fine"):
        self.labels(source)
        return self.n_fine if source == "fine" else self.n_coarse


def _check_range(labels, n_classes, name):
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"{name} labels must lie in [0, {n_classes})")


def _spread_means(rng, n_means, n_features, separation):
    if n_means == 1:
        return np.zeros((1, n_features))
    means = rng.normal(size=(n_means, n_features))
    # Equal norms: no class gets systematically larger activations.
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    nearest = dist[np.triu_indices(n_means, k=1)].min()
    return means * (separation / nearest)


def synthesize_blobs(n_classes, n_per_class, n_features, separation, seed, subclasses_per_class=None):
    """Unit-variance Gaussian clusters whose centres are pairwise >= ``separation`` apart.

    Centres are random directions on a common sphere, scaled so the closest
    pair sits exactly ``separation`` apart.

    Without ``subclasses_per_class`` there is one cluster per class.  With it,
    there are ``n_classes * subclasses_per_class`` fine clusters, the fine label
    is the cluster id and the coarse label is ``fine // subclasses_per_class``.
    Every cluster has ``n_per_class`` rows; rows are ordered cluster by cluster.
    Randomness comes from ``numpy.random.default_rng(seed)``.
    """
    if min(n_classes, n_per_class, n_features) < 1:
        raise ConfigError("class, sample and feature counts must be >= 1")
    if not separation > 0:
        raise ConfigError("separation must be positive")
    subs = 1 if subclasses_per_class is None else int(subclasses_per_class)
    if subs < 1:
        raise ConfigError("subclasses_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    n_clusters = n_classes * subs
    means = _spread_means(rng, n_clusters, n_features, separation)
    fine = np.repeat(np.arange(n_clusters), n_per_class)
    features = means[fine] + rng.normal(size=(fine.size, n_features))
    if subclasses_per_class is None:
        return Dataset(features, fine, n_fine=n_classes)
    return Dataset(features, fine, fine // subs, n_fine=n_clusters, n_coarse=n_classes)


def sample_blobs_like(dataset_args, n_per_class, seed):
    """Fresh draws from the same cluster centres as ``synthesize_blobs(**dataset_args)``.

    Used for held-out test sets: the centres depend only on the generator
    arguments, the noise on ``seed``.
    """
    args = dict(dataset_args)
    subs = args.get("subclasses_per_class") or 1
    rng = np.random.default_rng(args["seed"])
    n_clusters = args["n_classes"] * subs
    means = _spread_means(rng, n_clusters, args["n_features"], args["separation"])
    noise = np.random.default_rng(seed)
    fine = np.repeat(np.arange(n_clusters), n_per_class)
    features = means[fine] + noise.normal(size=(fine.size, args["n_features"]))
    if args.get("subclasses_per_class") is None:
        return Dataset(features, fine, n_fine=n_clusters)
    return Dataset(features, fine, fine // subs, n_fine=n_clusters, n_coarse=args["n_classes"])


@dataclass(frozen=True)
class CsvSchema:
    feature_columns: tuple
    label_column: str
    coarse_label_column: str | None = None


def load_csv(path, schema):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFileError(f"{path}: empty file")
        header = [h.strip() for h in header]
        wanted = list(schema.feature_columns) + [schema.label_column]
        if schema.coarse_label_column:
            wanted.append(schema.coarse_label_column)
        for name in wanted:
            if name not in header:
                raise SchemaError(name, path)
        col = {name: header.index(name) for name in wanted}

        feats, fine, coarse = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            feats.append([_cell(row, col[c], c, line_no, float) for c in schema.feature_columns])
            fine.append(_cell(row, col[schema.label_column], schema.label_column, line_no, _label))
            if schema.coarse_label_column:
                c = schema.coarse_label_column
                coarse.append(_cell(row, col[c], c, line_no, _label))
    if not feats:
        raise EmptyFileError(f"{path}: no data rows")
    return Dataset(
        np.array(feats, dtype=np.float64).reshape(len(feats), len(schema.feature_columns)),
        np.array(fine),
        np.array(coarse) if schema.coarse_label_column else None,
    )


def _label(text):
    value = int(text)
    if value < 0:
        raise ValueError(text)
    return value


def _cell(row, index, column, line_no, convert):
    if index >= len(row):
        raise ParseError(line_no, column, "")
    text = row[index].strip()
    try:
        value = convert(text)
    except ValueError:
        raise ParseError(line_no, column, text) from None
    if isinstance(value, float) and not np.isfinite(value):
        raise ParseError(line_no, column, text)
    return value


def save_csv(dataset, path, feature_prefix="x"):
    """Write ``dataset`` in the layout :func:`load_csv` reads; returns the schema."""
    names = [f"{feature_prefix}{j}" for j in range(dataset.n_features)]
    schema = CsvSchema(tuple(names), "label", "coarse_label" if dataset.coarse_labels is not None else None)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["label"] + (["coarse_label"] if schema.coarse_label_column else []))
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.features[i]] + [int(dataset.fine_labels[i])]
            if schema.coarse_label_column:
                row.append(int(dataset.coarse_labels[i]))
            w.writerow(row)
    return schema


@dataclass(frozen=True)
class FullClass:
    class_id: int


@dataclass(frozen=True)
class SubClass:
    class_id: int


@dataclass(frozen=True)
class RandomFraction:
    fraction: float
    seed: int = 0


@dataclass
class ForgetSplit:
    forget_indices: np.ndarray
    retain_indices: np.ndarray
    rule: object = field(default=None)

    @classmethod
    def from_forget(cls, n_rows, forget, rule=None):
        forget = np.unique(np.asarray(forget, dtype=np.int64))
        if forget.size and (forget[0] < 0 or forget[-1] >= n_rows):
            raise SplitError("forget index out of range")
        mask = np.ones(n_rows, dtype=bool)
        mask[forget] = False
        return cls(forget, np.flatnonzero(mask), rule)

    @property
    def n_rows(self):
        return self.forget_indices.size + self.retain_indices.size


def make_split(dataset, rule):
    n = len(dataset)
    if isinstance(rule, FullClass):
        if not 0 <= rule.class_id < dataset.n_fine:
            raise SplitError(f"unknown class id {rule.class_id}")
        forget = np.flatnonzero(dataset.fine_labels == rule.class_id)
    elif isinstance(rule, SubClass):
        if dataset.coarse_labels is None:
            raise SplitError("subclass forgetting needs coarse labels")
        if not 0 <= rule.class_id < dataset.n_fine:
            raise SplitError(f"unknown class id {rule.class_id}")
        forget = np.flatnonzero(dataset.fine_labels == rule.class_id)
    elif isinstance(rule, RandomFraction):
        if not 0 < rule.fraction < 1:
            raise SplitError(f"fraction must lie in (0, 1), got {rule.fraction}")
        size = int(np.floor(rule.fraction * n + 0.5))
        rng = np.random.default_rng(rule.seed)
        forget = rng.choice(n, size=size, replace=False)
    else:
        raise SplitError(f"unknown split rule {rule!r}")
    return ForgetSplit.from_forget(n, forget, rule)
