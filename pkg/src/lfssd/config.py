"""Experiment configuration: YAML files validated against ``config_schema.json``.

Every value has a default, so an empty file is a valid configuration.  Seeds
left unset are derived from the master ``seed`` and written back into the
resolved configuration, which is what reports echo.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .dampening import DampeningConfig
from .data import FullClass, RandomFraction, SubClass
from .errors import ConfigError
from .evaluation import MiaConfig
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "method": "lfssd",
    "output_space": "logits",
    "output_dir": "runs/default",
    "finetune_epochs": 2,
    "model": {"hidden": [64, 64], "init_seed": None},
    "data": {
        "kind": "blobs",
        "n_classes": 10,
        "n_per_class": 60,
        "n_features": 16,
        "separation": 6.0,
        "subclasses_per_class": None,
        "seed": None,
        "test_per_class": 60,
        "test_seed": None,
        "path": None,
        "test_path": None,
        "feature_columns": None,
        "label_column": "label",
        "coarse_label_column": None,
    },
    "scenario": {"rule": "full_class", "class_id": 0, "fraction": 0.02, "seed": None},
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "learning_rate": 0.02,
        "momentum": 0.9,
        "shuffle_seed": None,
    },
    "dampening": {"alpha": 3.0, "lambda": 1.0},
    "mia": {"attack_seed": None, "members_per_class": 500, "lr": 1.0, "iterations": 2000},
    "sweep": {
        "alpha_grid": [1.0, 5.0, 10.0, 25.0, 50.0],
        "max_forget_accuracy": 5.0,
        "max_retain_drop": 5.0,
    },
}

# role -> (section, key); order fixes the derivation below
SEED_SLOTS = {
    "data": ("data", "seed"),
    "test": ("data", "test_seed"),
    "init": ("model", "init_seed"),
    "shuffle": ("train", "shuffle_seed"),
    "split": ("scenario", "seed"),
    "attack": ("mia", "attack_seed"),
}


def schema():
    text = resources.files("lfssd").joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def derive_seed(master, role):
    """Deterministic child seed for ``role`` from the master seed (numpy SeedSequence)."""
    index = list(SEED_SLOTS).index(role)
    ss = np.random.SeedSequence(entropy=master, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def set_path(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def parse_override(text):
    """``"a.b=value"`` -> ``("a.b", parsed value)``; the value is read as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override {text!r}: {exc}") from exc
    return key.strip(), value


def resolve(raw=None, overrides=()):
    """Defaults + ``raw`` + overrides, validated, with every seed made explicit."""
    tree = _merge(DEFAULTS, raw or {})
    for key, value in overrides:
        set_path(tree, key, value)
    try:
        jsonschema.validate(tree, schema())
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    for role, (section, key) in SEED_SLOTS.items():
        if tree[section][key] is None:
            tree[section][key] = derive_seed(tree["seed"], role)
    return tree


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment configuration; ``tree`` is the full nested mapping."""

    tree: dict

    @classmethod
    def from_dict(cls, raw=None, overrides=()):
        return cls(resolve(raw, overrides))

    @classmethod
    def from_file(cls, path, overrides=()):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(raw, overrides)

    def to_dict(self):
        return copy.deepcopy(self.tree)

    def with_overrides(self, **dotted):
        return ExperimentConfig.from_dict(self.tree, [(k.replace("__", "."), v) for k, v in dotted.items()])

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.tree, sort_keys=True), encoding="utf-8")

    # typed views -------------------------------------------------------

    @property
    def method(self):
        return self.tree["method"]

    @property
    def output_space(self):
        return self.tree["output_space"]

    @property
    def output_dir(self):
        return Path(self.tree["output_dir"])

    @property
    def label_source(self):
        return "coarse" if self.tree["scenario"]["rule"] == "sub_class" else "fine"

    def rule(self):
        s = self.tree["scenario"]
        if s["rule"] == "full_class":
            return FullClass(s["class_id"])
        if s["rule"] == "sub_class":
            return SubClass(s["class_id"])
        return RandomFraction(s["fraction"], s["seed"])

    def train_config(self):
        t = self.tree["train"]
        try:
            return TrainConfig(
                epochs=t["epochs"],
                batch_size=t["batch_size"],
                learning_rate=t["learning_rate"],
                momentum=t["momentum"],
                shuffle_seed=t["shuffle_seed"],
                label_source=self.label_source,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def dampening_config(self):
        d = self.tree["dampening"]
        return DampeningConfig(d["alpha"], d["lambda"])

    def mia_config(self):
        m = self.tree["mia"]
        return MiaConfig(m["attack_seed"], m["members_per_class"], m["lr"], m["iterations"])
