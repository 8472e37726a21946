"""Command-line entry point: ``quickselection <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import commands
from .commands import RunConfig, UsageError
from .dae import NonFiniteLossError
from .data import DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--config", help="JSON RunConfig; explicit flags override it")
    g.add_argument("--data", help="CSV file (features, label in the last column)")
    g.add_argument("--test-data", help="separate CSV for the held-out split")
    g.add_argument("--no-labels", action="store_true", help="CSV has no label column")
    g.add_argument("--header", action="store_true", help="CSV has a header row")
    g.add_argument("--synthetic", action="store_true",
                   help="use the Madelon-like generator instead of a CSV")
    g.add_argument("--n-samples", type=int)
    g.add_argument("--n-informative", type=int)
    g.add_argument("--n-redundant", type=int)
    g.add_argument("--n-noise", type=int)
    g.add_argument("--preprocessing", choices=("zscore", "minmax"))
    g.add_argument("--test-fraction", type=float)
    g.add_argument("--seeds", type=_ints, help="comma-separated seeds")
    g.add_argument("--output-dir", help=f"defaults to ${commands.OUTPUT_ENV} or ./qs_runs")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--hidden", type=_ints, help="comma-separated hidden sizes")
    g.add_argument("--hidden-activation", choices=("sigmoid", "tanh", "linear"))
    g.add_argument("--output-activation", choices=("sigmoid", "tanh", "linear"))
    g.add_argument("--epsilon", type=float)
    g.add_argument("--zeta", type=float)
    g.add_argument("--nf", dest="noise_factor", type=float)
    g.add_argument("--lr", dest="learning_rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--qs10", action="store_true", help="shorthand for --epochs 10")
    g.add_argument("--snapshot-epochs", type=_ints)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--image-shape", type=_ints, help="H,W to emit strength maps")


def _add_eval_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--k", type=_ints, help="comma-separated feature counts")
    g.add_argument("--repeats", type=int)
    g.add_argument("--n-trees", type=int)
    g.add_argument("--device-watts", type=float)


_CONFIG_KEYS = ("data", "test_data", "preprocessing", "test_fraction", "seeds", "output_dir",
                "hidden", "hidden_activation", "output_activation", "epsilon", "zeta",
                "noise_factor", "learning_rate", "epochs", "snapshot_epochs", "batch_size",
                "image_shape", "k", "repeats", "n_trees", "device_watts")
_SYNTH_KEYS = ("n_samples", "n_informative", "n_redundant", "n_noise")


def config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "no_labels", False):
        base["has_labels"] = False
    if getattr(args, "header", False):
        base["header"] = True
    synth = {k: getattr(args, k) for k in _SYNTH_KEYS if getattr(args, k, None) is not None}
    if getattr(args, "synthetic", False) or synth:
        base["synthetic"] = {**(base.get("synthetic") or {}), **synth}
        if "rng_seed" not in base["synthetic"]:
            base["synthetic"]["rng_seed"] = (base.get("seeds") or [0])[0]
        if getattr(args, "data", None) is None:
            base["data"] = None
    if getattr(args, "qs10", False):
        base["epochs"] = 10
    cfg = RunConfig.from_dict(base)
    if cfg.data is None and cfg.synthetic is None:
        raise UsageError("give --data, --synthetic or a --config naming a dataset")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quickselection",
                     description="Sparse denoising autoencoder feature selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic Madelon-like CSV")
    _add_data_args(p)

    p = sub.add_parser("train", help="train a sparse DAE and write a checkpoint")
    _add_data_args(p)
    _add_model_args(p)
    _add_eval_args(p)

    p = sub.add_parser("select", help="rank features of a checkpoint and cut top-k subsets")
    p.add_argument("checkpoint")
    p.add_argument("--k", type=_ints, required=True)
    p.add_argument("--output-dir")

    p = sub.add_parser("eval", help="evaluate a feature subset")
    _add_data_args(p)
    _add_eval_args(p)
    p.add_argument("--selected", help="JSON file with selected indices (default: all features)")

    p = sub.add_parser("grid", help="grid search over zeta, epsilon and nf")
    _add_data_args(p)
    _add_model_args(p)
    _add_eval_args(p)
    p.add_argument("--zeta-list", type=_floats, default=[0.2])
    p.add_argument("--epsilon-list", type=_floats, default=[13.0])
    p.add_argument("--nf-list", type=_floats, default=[0.2])

    p = sub.add_parser("bench", help="timing on standard-normal data")
    p.add_argument("--n-features", type=_ints, required=True)
    p.add_argument("--hidden", type=_ints, required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--n-samples", type=int, default=5000)
    p.add_argument("--epsilon", type=float, default=13.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output-dir")
    return parser


def _summary(name: str, out: dict) -> str:
    if name == "train":
        return f"trained {out['epochs']} epochs, final loss {out['losses'][-1]:.6g}, " \
               f"{out['parameter_count']} parameters"
    if name == "select":
        return "subsets: " + ", ".join(f"k={k}" for k in out["subsets"])
    if name == "eval":
        return (f"clustering {out['clustering_accuracy']}, "
                f"classification {out['classification_accuracy']}, flags {out['flags']}")
    if name == "grid":
        return f"{len(out['rows'])} rows, {sum(r['error'] is not None for r in out['rows'])} failed"
    if name == "bench":
        return f"{len(out['rows'])} rows" + (f", aborted: {out['aborted']}" if out["aborted"] else "")
    return json.dumps(out)[:200]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "select":
            out_dir = args.output_dir or commands.default_output_dir()
            out = commands.cmd_select(args.checkpoint, args.k, out_dir)
        elif args.command == "bench":
            out = commands.cmd_bench(args.n_features, args.hidden, args.epochs,
                                     n_samples=args.n_samples, epsilon=args.epsilon,
                                     seed=args.seed,
                                     output_dir=args.output_dir or commands.default_output_dir())
        else:
            cfg = config_from_args(args)
            if args.command == "generate":
                out = commands.cmd_generate(cfg)
            elif args.command == "train":
                out = commands.cmd_train(cfg)
            elif args.command == "eval":
                sel = commands.read_selection(args.selected) if args.selected else None
                out = commands.cmd_eval(cfg, sel)
            else:
                out = commands.cmd_grid(cfg, args.zeta_list, args.epsilon_list, args.nf_list)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.command != "generate":
        print(_summary(args.command, out))
    else:
        print(f"wrote {out['shape'][0]} samples x {out['shape'][1]} features")
    return EXIT_OK


def main() -> None:
    sys.exit(run())
