"""Selective synaptic dampening.

A parameter is *selected* when its importance on the forget set exceeds
``alpha`` times its importance on the full training set.  Selected
parameters are multiplied by ``beta = min(lambda * full / forget, 1)``;
everything else is left untouched.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LengthMismatchError, SourceMismatchError
from .importance import compute_importance, load_importance
from .model import ParameterVector


@dataclass(frozen=True)
class DampeningConfig:
    alpha: float = 10.0
    lam: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "lam"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and positive, got {v}")


@dataclass
class SelectionReport:
    selected_indices: np.ndarray
    betas: np.ndarray
    counts: dict = field(default_factory=dict)  # (layer, kind) -> n selected

    @property
    def n_selected(self):
        return int(self.selected_indices.size)

    def summary(self):
        return {
            "n_selected": self.n_selected,
            "mean_beta": float(self.betas.mean()) if self.betas.size else None,
            "min_beta": float(self.betas.min()) if self.betas.size else None,
            "counts": {f"layer{layer}.{kind}": n for (layer, kind), n in sorted(self.counts.items())},
        }


def _count_by_entry(layout, selected):
    counts = Counter()
    for e in layout:
        lo = np.searchsorted(selected, e.offset)
        hi = np.searchsorted(selected, e.offset + e.length)
        if hi > lo:
            counts[(e.layer, e.kind)] = int(hi - lo)
    return dict(counts)


def select_and_scale(theta_values, full, forget, alpha, lam):
    """Array-level core: ``(new_values, selected_indices, betas)``.

    Strict ``>`` in the test: equality keeps the parameter, and 0/0 is never
    selected.  The division only runs on selected entries, where
    ``forget > alpha * full >= 0``.
    """
    selected = np.flatnonzero(forget > alpha * full)
    betas = np.minimum(lam * full[selected] / forget[selected], 1.0)
    out = np.array(theta_values, dtype=np.float64, copy=True)
    out[selected] = betas * out[selected]
    return out, selected, betas


def apply_dampening(theta, imp_full, imp_forget, cfg):
    """Return ``(dampened ParameterVector, SelectionReport)``; ``theta`` is not modified."""
    n = len(theta)
    if len(imp_full) != n or len(imp_forget) != n:
        raise LengthMismatchError(
            f"parameter vector has {n} entries, importances have {len(imp_full)} and {len(imp_forget)}"
        )
    if imp_full.over != "full" or imp_forget.over != "forget":
        raise SourceMismatchError(
            f"expected (full, forget) importances, got ({imp_full.over}, {imp_forget.over})"
        )
    if imp_full.source != imp_forget.source or imp_full.output_space != imp_forget.output_space:
        raise SourceMismatchError(
            f"importance sources differ: {imp_full.source}/{imp_full.output_space} vs "
            f"{imp_forget.source}/{imp_forget.output_space}"
        )
    values, selected, betas = select_and_scale(
        theta.values, imp_full.values, imp_forget.values, cfg.alpha, cfg.lam
    )
    report = SelectionReport(selected, betas, _count_by_entry(theta.layout, selected))
    return theta.with_values(values), report


def method_source(method):
    if method == "ssd":
        return "fisher"
    if method == "lfssd":
        return "lfssd"
    raise ConfigError(f"unknown method {method!r}")


def unlearn(spec, theta, dataset, split, method, cfg, imp_full=None, label_source="fine", output_space="logits"):
    """Forget ``split.forget_indices`` from ``theta`` with SSD or LFSSD.

    ``imp_full`` may be an :class:`~lfssd.importance.ImportanceVector` or a
    path to an importance file written for this checkpoint; when omitted it is
    computed over every row of ``dataset``.  Returns ``(theta', report,
    imp_full, imp_forget)`` so callers can persist and reuse the importances.
    """
    if split.n_rows != len(dataset):
        raise LengthMismatchError(f"split covers {split.n_rows} rows, dataset has {len(dataset)}")
    if not isinstance(theta, ParameterVector):
        theta = ParameterVector(spec, theta)
    source = method_source(method)
    if split.forget_indices.size == 0:
        empty = SelectionReport(np.zeros(0, dtype=np.int64), np.zeros(0))
        return theta.copy(), empty, imp_full, None

    if imp_full is None:
        imp_full = compute_importance(
            method, spec, theta, dataset, np.arange(len(dataset)), "full", label_source, output_space
        )
    elif not hasattr(imp_full, "values"):
        imp_full = load_importance(imp_full, spec, theta)
    if imp_full.source != source:
        raise SourceMismatchError(f"method {method} cannot use {imp_full.source} importances")
    imp_forget = compute_importance(
        method, spec, theta, dataset, split.forget_indices, "forget", label_source, output_space
    )
    new_theta, report = apply_dampening(theta, imp_full, imp_forget, cfg)
    return new_theta, report, imp_full, imp_forget
