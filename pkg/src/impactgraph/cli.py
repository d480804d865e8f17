"""Command-line entry point.

Subcommands: generate, train, evaluate, surface, predict. Exit codes are
0 on success, 2 on usage or validation errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import FEATURES, RANGES, TARGETS, SplitMasks, load_csv, records_to_arrays, save_json, split_masks
from .estimator import GraphRegressor
from .exceptions import MaskMismatch, NumericalError, UnknownParameter, ValidationError
from .models import FAMILIES
from .oracle import OracleConfig, generate
from .report import MetricsReport, evaluate_suite, target_masks
from .training import regression_metrics, write_history

log = logging.getLogger("impactgraph")

PARAM_ALIASES = {
    "velocity": "velocity_ms",
    "velocity_ms": "velocity_ms",
    "temp": "particle_temp_K",
    "temperature": "particle_temp_K",
    "particle_temp": "particle_temp_K",
    "particle_temp_K": "particle_temp_K",
    "friction": "friction",
    "mu": "friction",
}


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, command, args, inputs=(), outputs=(), seeds=None):
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config", "command", "verbose")}
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds or {},
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    save_json(manifest, path)
    return manifest


def _positive_int(name):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if value < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {value}")
        return value

    return parse


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# generate


def cmd_generate(args) -> int:
    if args.noise < 0:
        raise ValidationError(f"--noise must be >= 0, got {args.noise}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    config = OracleConfig(n_samples=args.n, seed=args.seed, noise_std=args.noise)
    generate(config, out)
    sidecar = Path(str(out) + ".json")
    write_manifest(Path(str(out) + ".manifest.json"), "generate", args, outputs=[out, sidecar], seeds={"oracle": args.seed})
    log.info("wrote %d samples to %s", args.n, out)
    return 0


# train


def _estimator_kwargs(args) -> dict:
    return {
        "k": args.k,
        "hidden_dims": tuple(args.hidden),
        "cheb_order": args.cheb_order,
        "gat_heads": args.heads,
        "max_epochs": args.epochs,
        "learning_rate": args.lr,
        "patience": args.patience,
        "random_state": args.seed,
    }


def cmd_train(args) -> int:
    records = load_csv(args.data)
    X, Y = records_to_arrays(records)
    families = list(FAMILIES) if args.family == "all" else [args.family]
    targets = list(TARGETS) if args.target == "all" else [args.target]
    for t in targets:
        if not np.isfinite(Y[t]).any():
            raise ValidationError(f"target column {t!r} is empty in {args.data}")
    masks = split_masks(len(records), args.test_frac, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split_path = out / "split.json"
    save_json({**masks.to_dict(), "test_fraction": args.test_frac, "seed": args.seed}, split_path)
    outputs = [split_path]
    graph_written = []

    def on_fit(family, target, est):
        stem = out / f"{family}__{target}"
        if not graph_written:
            gpath = out / "graph.json"
            est.graph_.save(gpath)
            save_json(est.norm_stats_.to_dict(), out / "norm_stats.json")
            graph_written.append(gpath)
            outputs.extend([gpath, out / "norm_stats.json"])
        ckpt = Path(f"{stem}.ckpt.json")
        est.save(ckpt, extra={"graph_file": "graph.json", "split": masks.to_dict()})
        hist = Path(f"{stem}.history.csv")
        write_history(est.history_, hist)
        outputs.extend([ckpt, hist])
        log.info("trained %s on %s: %d epochs", family, target, len(est.history_))

    report, _ = evaluate_suite(X, Y, masks, families, targets, {"*": _estimator_kwargs(args)}, callback=on_fit)
    report.save(out / "metrics.json", out / "metrics.txt")
    outputs.extend([out / "metrics.json", out / "metrics.txt"])
    write_manifest(out / "manifest.json", "train", args, inputs=[args.data], outputs=outputs, seeds={"split": args.seed, "init": args.seed})
    print(report.format_table())
    return 0


# evaluate


def _load_checked(path, X):
    ckpt = json.loads(Path(path).read_text(encoding="utf-8"))
    n = len(ckpt["features"])
    if n != X.shape[0]:
        raise MaskMismatch(f"{path}: checkpoint split covers {n} rows but the dataset has {X.shape[0]}")
    if not np.array_equal(np.asarray(ckpt["features"], dtype=np.float64), X):
        raise ValidationError(f"{path}: dataset features differ from those the checkpoint was trained on")
    return ckpt, GraphRegressor.from_checkpoint(ckpt)


def cmd_evaluate(args) -> int:
    X, Y = records_to_arrays(load_csv(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = MetricsReport()
    outputs = []
    for path in args.checkpoints:
        ckpt, est = _load_checked(path, X)
        target, family = ckpt["target"], ckpt["config"]["family"]
        masks = SplitMasks.from_dict(ckpt["split"]) if "split" in ckpt else SplitMasks(est.train_mask_, ~est.train_mask_)
        y = Y[target]
        train, test = target_masks(y, masks)
        pred = est.predict_nodes()
        report.add(family, target, "test", regression_metrics(y, pred, test), test.sum())
        report.add(family, target, "train", regression_metrics(y, pred, train), train.sum())
        pred_path = out / f"{family}__{target}.predictions.csv"
        with pred_path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual", "predicted"])
            for a, p in zip(y[test], pred[test]):
                w.writerow([repr(float(a)), repr(float(p))])
        outputs.append(pred_path)
    report.save(out / "metrics.json", out / "metrics.txt")
    outputs.extend([out / "metrics.json", out / "metrics.txt"])
    write_manifest(out / "manifest.json", "evaluate", args, inputs=[args.data, *args.checkpoints], outputs=outputs)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_table())
    return 0


# surface


def parse_fix(text: str, X: np.ndarray):
    if "=" not in text:
        raise UnknownParameter(f"--fix expects <param>=<value|median>, got {text!r}")
    name, value = (s.strip() for s in text.split("=", 1))
    if name not in PARAM_ALIASES:
        raise UnknownParameter(f"unknown parameter {name!r}; choose from velocity, temperature, friction")
    col = FEATURES.index(PARAM_ALIASES[name])
    if value == "median":
        return col, float(np.median(X[:, col]))
    try:
        return col, float(value)
    except ValueError:
        raise ValidationError(f"--fix value must be a number or 'median', got {value!r}") from None


def surface_grid(est: GraphRegressor, fixed_col: int, fixed_value: float, grid: int):
    free = [c for c in range(3) if c != fixed_col]
    axes = [np.linspace(*RANGES[FEATURES[c]], grid) for c in free]
    a, b = np.meshgrid(axes[0], axes[1], indexing="ij")
    Q = np.empty((a.size, 3))
    Q[:, free[0]] = a.ravel()
    Q[:, free[1]] = b.ravel()
    Q[:, fixed_col] = fixed_value
    return [FEATURES[c] for c in free], Q[:, free], est.predict(Q)


def cmd_surface(args) -> int:
    if args.grid < 2:
        raise ValidationError(f"--grid must be >= 2, got {args.grid}")
    est = GraphRegressor.load(args.checkpoint)
    col, value = parse_fix(args.fix, est.X_fit_)
    names, P, pred = surface_grid(est, col, value, args.grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "prediction"])
        for (p1, p2), y in zip(P, pred):
            w.writerow([repr(float(p1)), repr(float(p2)), repr(float(y))])
    write_manifest(Path(str(out) + ".manifest.json"), "surface", args, inputs=[args.checkpoint], outputs=[out])
    log.info("fixed %s=%s; wrote %d grid points to %s", FEATURES[col], value, len(pred), out)
    return 0


# predict


def cmd_predict(args) -> int:
    est = GraphRegressor.load(args.checkpoint)
    value = est.predict(np.array([[args.velocity, args.temp, args.friction]]))[0]
    print(f"{est.target_name} {float(value)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impactgraph", description="Graph surrogate models for particle impact responses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON file of flag values (or a run manifest) to use as defaults")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic dataset")
    p.add_argument("--n", type=_positive_int("--n"), default=100)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise", type=float, default=0.02, help="relative noise std for every target")
    p.add_argument("--out", default="dataset.csv")

    p = add("train", cmd_train, "train models and write checkpoints")
    p.add_argument("--data", required=True)
    p.add_argument("--family", choices=[*FAMILIES, "all"], default="graphsage")
    p.add_argument("--target", choices=[*TARGETS, "all"], default="max_peeq")
    p.add_argument("--k", type=_positive_int("--k"), default=8)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=_positive_int("--epochs"), default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--patience", type=_positive_int("--patience"), default=200)
    p.add_argument("--hidden", type=_int_list, default=[32, 32], help="comma-separated hidden widths")
    p.add_argument("--cheb-order", type=_positive_int("--cheb-order"), default=3)
    p.add_argument("--heads", type=_positive_int("--heads"), default=1)
    p.add_argument("--out", default="runs")

    p = add("evaluate", cmd_evaluate, "score checkpoints on their stored test split")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="evaluation")
    p.add_argument("--json", action="store_true", help="print the report as JSON")

    p = add("surface", cmd_surface, "export a prediction grid over two inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fix", required=True, help="<param>=<value|median>, param in velocity|temperature|friction")
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--out", default="surface.csv")

    p = add("predict", cmd_predict, "predict one process condition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--velocity", type=float, required=True)
    p.add_argument("--temp", type=float, required=True)
    p.add_argument("--friction", type=float, required=True)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv``; values from ``--config`` act as defaults and explicit flags win."""
    subparsers = parser._subparsers._group_actions[0].choices
    required = {name: [a for a in sp._actions if a.required] for name, sp in subparsers.items()}
    for actions in required.values():
        for a in actions:
            a.required = False
    try:
        args = parser.parse_args(argv)
        sub = subparsers[args.command]
        if getattr(args, "config", None):
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if "command" in data and "config" in data:
                data = data["config"]
            known = {a.dest for a in sub._actions}
            unknown = set(data) - known
            if unknown:
                raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
            sub.set_defaults(**data)
            args = parser.parse_args(argv)
        missing = [a.option_strings[0] for a in required[args.command] if getattr(args, a.dest) is None]
        if missing:
            sub.error(f"the following arguments are required: {', '.join(missing)}")
        return args
    finally:
        for actions in required.values():
            for a in actions:
                a.required = True


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
