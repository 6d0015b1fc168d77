"""End-to-end experiments: baseline, unlearning, baselines, evaluation, reports.

Reports have two sections.  ``canonical`` holds everything that must be
reproducible from the configuration (config echo, accuracies, attack scores,
selection statistics) and is hashed; ``info`` holds wall-clock timings,
backward-pass counts and file locations.
"""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .dampening import DampeningConfig, apply_dampening, unlearn
from .data import CsvSchema, Dataset, load_csv, make_split, sample_blobs_like, synthesize_blobs
from .errors import ConfigError, LfssdError
from .evaluation import mia
from .importance import compute_importance, load_importance, save_importance
from .model import ModelSpec, checkpoint_digest, init_model, save_checkpoint
from .training import accuracy, finetune_baseline, retrain_baseline, train

MODELS = ("baseline", "retrain", "finetune", "unlearned")
SUBSETS = ("D_r", "D_f", "test")
FILES = {
    "baseline": "baseline.ckpt",
    "unlearned": "unlearned.ckpt",
    "imp_full": "importance_full.dampimp",
    "imp_forget": "importance_forget.dampimp",
    "report": "report.json",
    "table": "accuracy.csv",
    "sweep": "sweep.csv",
    "config": "config.yaml",
    "partial": "PARTIAL",
}


class BackwardPassCounter:
    """Backward passes per named stage."""

    def __init__(self):
        self.counts = {}

    @contextlib.contextmanager
    def stage(self, name):
        with ad.count_backward() as c:
            yield
        self.counts[name] = self.counts.get(name, 0) + c[0]


def backward_pass_counter():
    return BackwardPassCounter()


class StageLog:
    """Times stages, counts their backward passes and labels failures."""

    def __init__(self, out_dir=None):
        self.timings = {}
        self.passes = BackwardPassCounter()
        self.done = []
        self.out_dir = out_dir

    @contextlib.contextmanager
    def __call__(self, name):
        start = time.perf_counter()
        try:
            with self.passes.stage(name):
                yield
        except Exception as exc:
            exc.stage = name
            if self.out_dir is not None and self.out_dir.exists():
                (self.out_dir / FILES["partial"]).write_text(
                    json.dumps({"failed_stage": name, "completed": self.done, "error": str(exc)}, indent=2)
                )
            raise
        self.timings[name] = time.perf_counter() - start
        self.done.append(name)


@dataclass
class Prepared:
    dataset: object
    test_set: object
    split: object
    spec: ModelSpec
    label_source: str
    test_indices: np.ndarray  # held-out rows used for "test" accuracy and as attack non-members


def load_data(config):
    d = config.tree["data"]
    if d["kind"] == "blobs":
        args = {k: d[k] for k in ("n_classes", "n_per_class", "n_features", "separation", "seed")}
        args["subclasses_per_class"] = d["subclasses_per_class"]
        return synthesize_blobs(**args), sample_blobs_like(args, d["test_per_class"], d["test_seed"])
    schema = CsvSchema(tuple(d["feature_columns"]), d["label_column"], d["coarse_label_column"])
    return load_csv(d["path"], schema), load_csv(d["test_path"], schema)


def prepare(config):
    """Data, split and model spec, with pre-flight checks."""
    dataset, test_set = load_data(config)
    if test_set.n_features != dataset.n_features:
        raise ConfigError("train and test sets have different feature counts")
    split = make_split(dataset, config.rule())
    if split.forget_indices.size == 0:
        raise ConfigError("the scenario selects no rows to forget")
    if split.retain_indices.size == 0:
        raise ConfigError("the scenario leaves no rows to retain")
    label_source = config.label_source
    n_classes = dataset.n_classes(label_source)
    spec = ModelSpec(
        (dataset.n_features, *config.tree["model"]["hidden"], n_classes),
        init_seed=config.tree["model"]["init_seed"],
    )
    rule = config.tree["scenario"]["rule"]
    if rule == "random":
        test_idx = np.arange(len(test_set))
    else:
        # forgotten class excluded: the retrained reference never saw it
        test_idx = np.flatnonzero(test_set.fine_labels != config.tree["scenario"]["class_id"])
    if test_idx.size == 0:
        raise ConfigError("no held-out rows outside the forgotten class")
    return Prepared(dataset, test_set, split, spec, label_source, test_idx)


def evaluate_model(prep, theta, mia_cfg):
    """``({"D_r", "D_f", "test"} -> accuracy %, MiaReport)`` for one model."""
    spec, ds, src = prep.spec, prep.dataset, prep.label_source
    accs = {
        "D_r": accuracy(spec, theta, ds, prep.split.retain_indices, src),
        "D_f": accuracy(spec, theta, ds, prep.split.forget_indices, src),
        "test": accuracy(spec, theta, prep.test_set, prep.test_indices, src),
    }
    attack = mia(spec, theta, ds, prep.split, subset_rows(prep.test_set, prep.test_indices), mia_cfg)
    return accs, attack


def subset_rows(dataset, idx):
    """Rows ``idx`` of ``dataset`` as a new dataset with the same class counts."""
    return Dataset(
        dataset.features[idx],
        dataset.fine_labels[idx],
        None if dataset.coarse_labels is None else dataset.coarse_labels[idx],
        n_fine=dataset.n_fine,
        n_coarse=dataset.n_coarse,
    )


def _to_builtin(x):
    if isinstance(x, dict):
        return {k: _to_builtin(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_builtin(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def canonical_json(obj):
    return json.dumps(_to_builtin(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class UnlearnReport:
    config: dict
    accuracies: dict  # model -> subset -> %
    mia: dict  # model -> MiaReport fields
    selection: dict
    sizes: dict
    info: dict = field(default_factory=dict)

    def canonical(self):
        return _to_builtin({
            "config": self.config,
            "accuracies": self.accuracies,
            "mia": self.mia,
            "selection": self.selection,
            "sizes": self.sizes,
        })

    def canonical_bytes(self):
        return canonical_json(self.canonical()).encode("utf-8")

    def digest(self):
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def to_dict(self):
        return {"canonical": self.canonical(), "canonical_sha256": self.digest(), "info": _to_builtin(self.info)}

    @classmethod
    def from_dict(cls, d):
        c = d["canonical"]
        report = cls(c["config"], c["accuracies"], c["mia"], c["selection"], c["sizes"], d.get("info", {}))
        if "canonical_sha256" in d and report.digest() != d["canonical_sha256"]:
            raise ValueError("report payload does not match its canonical hash")
        return report

    def table_rows(self):
        return [
            {"model": m, **{s: self.accuracies[m][s] for s in SUBSETS}, "MIA": self.mia[m]["mia_score"]}
            for m in MODELS
            if m in self.accuracies
        ]

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / FILES["report"]).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        write_table(out_dir / FILES["table"], self.table_rows(), ["model", *SUBSETS, "MIA"])


def write_table(path, rows, columns):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in row.items()})


def read_table(path):
    """Rows of a CSV table written by the harness, numeric cells parsed back exactly."""
    def cell(v):
        if v in ("", "None"):
            return None
        for conv in (int, float):
            try:
                return conv(v)
            except ValueError:
                pass
        if v in ("True", "False"):
            return v == "True"
        return v

    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_report(path):
    return UnlearnReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def obtain_full_importance(config, prep, theta, path):
    """Load the full-set importance for this checkpoint from ``path`` or compute and save it."""
    method, space = config.method, config.output_space
    if path.exists():
        try:
            imp = load_importance(path, prep.spec, theta)
        except LfssdError:
            imp = None
        if imp is not None and imp.over == "full" and imp.output_space == space and (
            imp.source == ("fisher" if method == "ssd" else "lfssd")
        ):
            return imp, False
    imp = compute_importance(
        method, prep.spec, theta, prep.dataset, np.arange(len(prep.dataset)), "full",
        prep.label_source, space,
    )
    save_importance(imp, path, prep.spec, theta)
    return imp, True


def train_baseline(config, prep):
    theta, losses = train(
        prep.spec, init_model(prep.spec), prep.dataset, np.arange(len(prep.dataset)), config.train_config()
    )
    return theta, losses


def run_experiment(config, write=True):
    """Full pipeline for one configuration; returns an :class:`UnlearnReport`."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    out = config.output_dir
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / FILES["partial"]).unlink(missing_ok=True)
        config.dump(out / FILES["config"])
    log = StageLog(out if write else None)
    mia_cfg = config.mia_config()
    tcfg = config.train_config()

    with log("data"):
        prep = prepare(config)
    with log("train_baseline"):
        theta, losses = train_baseline(config, prep)
        if write:
            save_checkpoint(prep.spec, theta, out / FILES["baseline"])
    with log("importance_full"):
        if write:
            imp_full, computed = obtain_full_importance(config, prep, theta, out / FILES["imp_full"])
        else:
            imp_full = compute_importance(
                config.method, prep.spec, theta, prep.dataset, np.arange(len(prep.dataset)), "full",
                prep.label_source, config.output_space,
            )
            computed = True
    with log("unlearn"):
        unlearned, selection, _, imp_forget = unlearn(
            prep.spec, theta, prep.dataset, prep.split, config.method, config.dampening_config(),
            imp_full=imp_full, label_source=prep.label_source, output_space=config.output_space,
        )
        if write:
            save_checkpoint(prep.spec, unlearned, out / FILES["unlearned"])
            save_importance(imp_forget, out / FILES["imp_forget"], prep.spec, theta)
    with log("retrain"):
        retrained = retrain_baseline(prep.spec, prep.dataset, prep.split, tcfg)
    with log("finetune"):
        finetuned = finetune_baseline(
            prep.spec, theta, prep.dataset, prep.split, tcfg, epochs=config.tree["finetune_epochs"]
        )
    accs, attacks = {}, {}
    with log("evaluate"):
        for name, th in zip(MODELS, (theta, retrained, finetuned, unlearned)):
            accs[name], attack = evaluate_model(prep, th, mia_cfg)
            attacks[name] = attack.to_dict()

    report = UnlearnReport(
        config=config.to_dict(),
        accuracies=accs,
        mia=attacks,
        selection=selection.summary(),
        sizes={
            "D": len(prep.dataset),
            "D_f": int(prep.split.forget_indices.size),
            "D_r": int(prep.split.retain_indices.size),
            "test": int(prep.test_indices.size),
            "n_params": prep.spec.n_params,
            "layer_sizes": list(prep.spec.layer_sizes),
            "label_source": prep.label_source,
            "baseline_checkpoint_sha256": checkpoint_digest(prep.spec, theta),
            "baseline_final_loss": losses[-1],
        },
        info={
            "timings_s": log.timings,
            "backward_passes": log.passes.counts,
            "importance_full_computed": computed,
            "output_dir": str(out),
        },
    )
    if write:
        report.write(out)
    return report


@dataclass
class SweepResult:
    rows: list  # dicts: alpha, D_r, D_f, MIA, n_selected, in_plateau
    baseline: dict  # subset -> accuracy of the undampened model
    tuned_alpha: float | None
    backward_passes: dict

    def plateau_runs(self):
        runs, current = [], []
        for row in self.rows:
            if row["in_plateau"]:
                current.append(row["alpha"])
            elif current:
                runs.append(current)
                current = []
        if current:
            runs.append(current)
        return runs


def pick_plateau_alpha(rows):
    """Middle alpha of the longest run of consecutive plateau rows (first one on ties)."""
    best = []
    current = []
    for row in rows:
        if row["in_plateau"]:
            current.append(row["alpha"])
            if len(current) > len(best):
                best = list(current)
        else:
            current = []
    return best[(len(best) - 1) // 2] if best else None


def sweep_alpha(config, alpha_grid=None, write=True):
    """One dampening + evaluation per alpha, sharing one checkpoint and one importance pair."""
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    sw = config.tree["sweep"]
    grid = [float(a) for a in (alpha_grid if alpha_grid is not None else sw["alpha_grid"])]
    if not grid:
        raise ConfigError("alpha grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("alpha grid must be strictly ascending")
    if any(not a > 0 for a in grid):
        raise ConfigError("alpha values must be positive")
    lam = config.tree["dampening"]["lambda"]
    out = config.output_dir
    if write:
        out.mkdir(parents=True, exist_ok=True)
    log = StageLog(out if write else None)
    mia_cfg = config.mia_config()

    with log("data"):
        prep = prepare(config)
    with log("train_baseline"):
        theta, _ = train_baseline(config, prep)
    with log("importance_full"):
        if write:
            save_checkpoint(prep.spec, theta, out / FILES["baseline"])
            imp_full, _ = obtain_full_importance(config, prep, theta, out / FILES["imp_full"])
        else:
            imp_full = compute_importance(
                config.method, prep.spec, theta, prep.dataset, np.arange(len(prep.dataset)), "full",
                prep.label_source, config.output_space,
            )
    with log("importance_forget"):
        imp_forget = compute_importance(
            config.method, prep.spec, theta, prep.dataset, prep.split.forget_indices, "forget",
            prep.label_source, config.output_space,
        )
    baseline, _ = evaluate_model(prep, theta, mia_cfg)
    rows = []
    with log("grid"):
        for alpha in grid:
            damp, sel = apply_dampening(theta, imp_full, imp_forget, DampeningConfig(alpha, lam))
            accs, attack = evaluate_model(prep, damp, mia_cfg)
            rows.append({
                "alpha": alpha,
                "D_r": accs["D_r"],
                "D_f": accs["D_f"],
                "test": accs["test"],
                "MIA": attack.mia_score,
                "n_selected": sel.n_selected,
                "in_plateau": bool(
                    accs["D_f"] <= sw["max_forget_accuracy"]
                    and accs["D_r"] >= baseline["D_r"] - sw["max_retain_drop"]
                ),
            })
    result = SweepResult(rows, baseline, pick_plateau_alpha(rows), log.passes.counts)
    if write:
        write_table(out / FILES["sweep"], rows, ["alpha", "D_r", "D_f", "test", "MIA", "n_selected", "in_plateau"])
    return result
