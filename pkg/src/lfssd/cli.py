"""Command-line entry point: ``lfssd <subcommand> [options]``.

Every subcommand reads the same YAML configuration (``--config``), accepts
``--set key.path=value`` overrides and works inside the configured output
directory, so the stages can be chained::

    lfssd train --config exp.yaml
    lfssd importance --over full
    lfssd unlearn --alpha 3
    lfssd evaluate --checkpoint unlearned

Exit status: 0 on success, 1 for configuration errors, 2 for runtime and
numeric errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_override
from .dampening import unlearn
from .errors import ConfigError, LfssdError
from .harness import (
    FILES,
    canonical_json,
    evaluate_model,
    obtain_full_importance,
    prepare,
    run_experiment,
    sweep_alpha,
    train_baseline,
)
from .importance import compute_importance, save_importance
from .model import load_checkpoint, save_checkpoint


def _common(p):
    p.add_argument("--config", type=Path, help="YAML experiment configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.epochs=10 (repeatable)")
    p.add_argument("--output-dir", type=Path, help="directory for checkpoints, importances and reports")
    p.add_argument("--seed", type=int, help="master seed; unset sub-seeds are derived from it")


def build_parser():
    parser = argparse.ArgumentParser(prog="lfssd", description="Unlearning by selective synaptic dampening.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the baseline model and save its checkpoint")
    _common(p)

    p = sub.add_parser("importance", help="compute and save an importance vector")
    _common(p)
    p.add_argument("--method", choices=("ssd", "lfssd"))
    p.add_argument("--over", choices=("full", "forget"), default="full")
    p.add_argument("--output-space", choices=("logits", "softmax"))

    p = sub.add_parser("unlearn", help="dampen the baseline checkpoint to forget the scenario's rows")
    _common(p)
    p.add_argument("--method", choices=("ssd", "lfssd"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)

    for name, text in (("evaluate", "accuracy on D_r, D_f and held-out rows"),
                       ("mia", "membership inference score on D_f")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--checkpoint", default="unlearned",
                       help="'baseline', 'unlearned' or a path to a checkpoint file")

    p = sub.add_parser("run", help="full pipeline with baselines and reports")
    _common(p)
    p.add_argument("--method", choices=("ssd", "lfssd"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)

    p = sub.add_parser("sweep", help="alpha sensitivity sweep from one checkpoint and importance pair")
    _common(p)
    p.add_argument("--method", choices=("ssd", "lfssd"))
    p.add_argument("--alpha-grid", help="comma-separated ascending alpha values")
    p.add_argument("--lambda", dest="lam", type=float)
    return parser


def load_config(args):
    overrides = [parse_override(s) for s in args.overrides]
    flag_map = {
        "output_dir": "output_dir",
        "seed": "seed",
        "method": "method",
        "alpha": "dampening.alpha",
        "lam": "dampening.lambda",
        "output_space": "output_space",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append((key, str(value) if isinstance(value, Path) else value))
    if args.config is not None:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_dict({}, overrides)


def parse_grid(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse alpha grid {text!r}") from None


def _baseline(config):
    path = config.output_dir / FILES["baseline"]
    if not path.exists():
        raise ConfigError(f"{path} not found; run 'lfssd train' first")
    return load_checkpoint(path)


def _check_spec(prep, spec):
    if tuple(spec.layer_sizes) != tuple(prep.spec.layer_sizes):
        raise ConfigError(
            f"checkpoint layer sizes {spec.layer_sizes} do not match the configured {prep.spec.layer_sizes}"
        )


def _emit(obj):
    print(json.dumps(json.loads(canonical_json(obj)), indent=2, sort_keys=True))


def cmd_train(config):
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    prep = prepare(config)
    theta, losses = train_baseline(config, prep)
    save_checkpoint(prep.spec, theta, out / FILES["baseline"])
    config.dump(out / FILES["config"])
    _emit({"checkpoint": str(out / FILES["baseline"]), "final_loss": losses[-1],
           "layer_sizes": list(prep.spec.layer_sizes)})


def cmd_importance(config, over):
    prep = prepare(config)
    spec, theta = _baseline(config)
    _check_spec(prep, spec)
    idx = np.arange(len(prep.dataset)) if over == "full" else prep.split.forget_indices
    imp = compute_importance(config.method, spec, theta, prep.dataset, idx, over,
                             prep.label_source, config.output_space)
    path = config.output_dir / FILES["imp_full" if over == "full" else "imp_forget"]
    save_importance(imp, path, spec, theta)
    _emit({"path": str(path), "source": imp.source, "over": over, "sample_count": imp.sample_count,
           "output_space": imp.output_space, "max": float(imp.values.max()), "mean": float(imp.values.mean())})


def cmd_unlearn(config):
    prep = prepare(config)
    spec, theta = _baseline(config)
    _check_spec(prep, spec)
    # reuses a matching persisted full-set importance, else computes and saves it
    imp_full, _ = obtain_full_importance(config, prep, theta, config.output_dir / FILES["imp_full"])
    new_theta, report, _, imp_forget = unlearn(
        spec, theta, prep.dataset, prep.split, config.method, config.dampening_config(),
        imp_full=imp_full, label_source=prep.label_source, output_space=config.output_space,
    )
    save_importance(imp_forget, config.output_dir / FILES["imp_forget"], spec, theta)
    save_checkpoint(spec, new_theta, config.output_dir / FILES["unlearned"])
    _emit({"checkpoint": str(config.output_dir / FILES["unlearned"]), "selection": report.summary()})


def _resolve_checkpoint(config, which):
    if which in ("baseline", "unlearned"):
        path = config.output_dir / FILES[which]
    else:
        path = Path(which)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} not found")
    return load_checkpoint(path)


def cmd_evaluate(config, which, attack_only=False):
    prep = prepare(config)
    spec, theta = _resolve_checkpoint(config, which)
    _check_spec(prep, spec)
    accs, attack = evaluate_model(prep, theta, config.mia_config())
    if attack_only:
        _emit(attack.to_dict())
    else:
        _emit({"accuracy": accs, "mia": attack.mia_score})


def cmd_run(config):
    report = run_experiment(config)
    for row in report.table_rows():
        print(",".join(f"{v:.2f}" if isinstance(v, float) else str(v) for v in row.values()))
    print(f"report: {config.output_dir / FILES['report']} sha256={report.digest()}")


def cmd_sweep(config, grid_text):
    grid = parse_grid(grid_text) if grid_text else None
    result = sweep_alpha(config, grid)
    print("alpha,D_r,D_f,test,MIA,n_selected,in_plateau")
    for r in result.rows:
        print(f"{r['alpha']:g},{r['D_r']:.2f},{r['D_f']:.2f},{r['test']:.2f},{r['MIA']:.2f},"
              f"{r['n_selected']},{r['in_plateau']}")
    print(f"tuned alpha: {result.tuned_alpha}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "train":
            cmd_train(config)
        elif args.command == "importance":
            cmd_importance(config, args.over)
        elif args.command == "unlearn":
            cmd_unlearn(config)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.checkpoint)
        elif args.command == "mia":
            cmd_evaluate(config, args.checkpoint, attack_only=True)
        elif args.command == "run":
            cmd_run(config)
        elif args.command == "sweep":
            cmd_sweep(config, args.alpha_grid)
    except LfssdError as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"lfssd {args.command}: error in stage '{stage}': {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ArithmeticError, ValueError, OSError) as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"lfssd {args.command}: error in stage '{stage}': {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
