"""Command-line entry point: ``vihsd {stats,train,predict,eval,compare}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .corpus import DataError
from .pipeline import (
    MODEL_KINDS,
    BASELINE_MODELS,
    ConfigError,
    StageError,
    load_config,
    run_compare,
    run_eval,
    run_predict,
    run_stats,
    run_train,
)
from .train_eval import compare

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
EXPECTED_RANKING = ("bilstm", "gru", "svm_cascade", "lr")

log = logging.getLogger("vihsd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="pipeline config file (INI)")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--out", type=Path, default=default, help="output directory")
    parser.add_argument("--precision", choices=("double", "single"), default=default)
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vihsd", description="Three-class hate speech detection pipeline.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", parents=[common], help="class distribution of a labeled csv")
    p.add_argument("csv", nargs="?", type=Path, help="defaults to [paths] train")

    p = sub.add_parser("train", parents=[common], help="train one model and write its artifacts")
    p.add_argument("--model", choices=MODEL_KINDS, help="override [model] kind")

    p = sub.add_parser("predict", parents=[common], help="label an unlabeled csv with a trained model")
    p.add_argument("model_dir", type=Path)
    p.add_argument("input", type=Path)
    p.add_argument("-o", "--output", type=Path, help="defaults to <out or model_dir>/predictions.csv")

    p = sub.add_parser("eval", parents=[common], help="score a predictions csv against gold labels")
    p.add_argument("gold", type=Path)
    p.add_argument("predictions", type=Path)

    p = sub.add_parser("compare", parents=[common], help="train several models on one split and rank them")
    p.add_argument("configs", nargs="*", type=Path, help="one config per model (default: --config per --models)")
    p.add_argument("--models", nargs="+", choices=MODEL_KINDS, help=f"default: {' '.join(BASELINE_MODELS)}")
    p.add_argument("--rank-by", choices=("macro_f1", "weighted_f1"), default="macro_f1")
    return parser


def _cmd_stats(args) -> int:
    path = args.csv
    if path is None:
        cfg = load_config(args.config)
        if cfg.train_path is None:
            raise ConfigError("stats needs a csv argument or [paths] train")
        path = cfg.train_path
    dist = run_stats(path)
    print(dist.table())
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config, kind=args.model, seed=args.seed, precision=args.precision, out=args.out)
    _, record = run_train(cfg)
    print(f"model: {record.model_name}   epochs: {len(record.losses)}   output: {cfg.out_dir}")
    if record.metrics is not None:
        print("held-out evaluation")
        print(record.metrics.render())
    return EXIT_OK


def _cmd_predict(args) -> int:
    output = args.output or (args.out or args.model_dir) / "predictions.csv"
    output.parent.mkdir(parents=True, exist_ok=True)
    n = run_predict(args.model_dir, args.input, output)
    print(f"wrote {n} predictions to {output}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    print(run_eval(args.gold, args.predictions).render())
    return EXIT_OK


def _cmd_compare(args) -> int:
    if args.configs:
        configs = [load_config(p, seed=args.seed, precision=args.precision) for p in args.configs]
    else:
        kinds = args.models or list(BASELINE_MODELS)
        configs = [load_config(args.config, kind=k, seed=args.seed, precision=args.precision) for k in kinds]
    out_root = args.out or configs[0].out_dir.parent / "compare"
    _, records = run_compare(configs, out_root)
    table = compare(records, args.rank_by)
    text = table.render()
    print(text)
    names = table.names()
    if set(EXPECTED_RANKING) <= set(names):
        order = [n for n in names if n in EXPECTED_RANKING]
        held = order == list(EXPECTED_RANKING)
        print(f"ranking {' > '.join(EXPECTED_RANKING)}: {'holds' if held else 'does not hold'}")
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "comparison.txt").write_text(text + "\n", encoding="utf-8")
    if all(r.failed for r in records):
        return EXIT_DATA
    return EXIT_OK


COMMANDS = {
    "stats": _cmd_stats,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
}


def _is_numeric(exc: BaseException) -> bool:
    while exc is not None:
        if isinstance(exc, FloatingPointError):
            return True
        exc = exc.__cause__
    return False


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"vihsd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"vihsd: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        if _is_numeric(exc):
            print(f"vihsd: numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        if isinstance(exc, (DataError, StageError, ValueError, OSError)):
            print(f"vihsd: error: {exc}", file=sys.stderr)
            return EXIT_DATA
        raise


if __name__ == "__main__":
    sys.exit(main())
