"""Command-line surface: fit, apply, eval, compare, experiment.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .core import Predictions
from .errors import DataFormatError, NumericalError
from .io_files import (
    _fmt,
    load_model,
    model_kind,
    read_logits,
    save_model,
    write_json,
    write_text_atomic,
)
from .scaling import PtsTrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

EXPERIMENTS = ("capacity", "bins", "data_efficiency", "loss_ablation")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _fraction_list(text: str) -> list[float]:
    """Either a comma list (0.1,0.5,1.0) or a start:stop:step range (0.1:1.0:0.1)."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            n = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 12) for i in range(n)]
        return [float(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"could not parse fractions {text!r}") from exc


def _str_list(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def build_parser() -> _Parser:
    parser = _Parser(prog="calibkit", description="Post-hoc uncertainty calibration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_train_flags(p, default_steps):
        p.add_argument("--seed", type=int, default=experiments.DEFAULT_SEED)
        p.add_argument("--bins", type=_int_list, default=[10], help="comma list of bin counts")
        p.add_argument("--steps", type=int, default=default_steps)
        p.add_argument("--batch-size", type=int, default=1000)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--topk", type=int, default=10)

    p_fit = sub.add_parser("fit", help="fit one calibrator and write a model file")
    p_fit.add_argument("--method", required=True)
    p_fit.add_argument("--val", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--losses", type=_str_list, default=None, help="training loss (single value)")
    add_train_flags(p_fit, 100_000)

    p_apply = sub.add_parser("apply", help="apply a model file, write calibrated confidences CSV")
    p_apply.add_argument("--model", required=True)
    p_apply.add_argument("--test", required=True)
    p_apply.add_argument("--out", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a model file on a test set, write a report")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--test", required=True)
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--bins", type=_int_list, default=[10])

    p_cmp = sub.add_parser("compare", help="fit many calibrators on val, evaluate all on test")
    p_cmp.add_argument("--methods", type=_str_list, required=True)
    p_cmp.add_argument("--val", required=True)
    p_cmp.add_argument("--test", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--timings", action="store_true", help="include fit wall times in the report")
    add_train_flags(p_cmp, 100_000)

    p_exp = sub.add_parser("experiment", help="run a synthetic-oracle experiment")
    p_exp.add_argument("name", choices=EXPERIMENTS)
    p_exp.add_argument("--out", required=True, help="output directory for CSV + JSON tables")
    p_exp.add_argument("--widths", type=_int_list, default=[1, 2, 5, 10, 20])
    p_exp.add_argument("--fractions", type=_fraction_list, default="0.1:1.0:0.1")
    p_exp.add_argument("--losses", type=_str_list, default=["mse", "ece"])
    p_exp.add_argument("--methods", type=_str_list, default=None)
    add_train_flags(p_exp, 20_000)

    return parser


def _pts_config(args, loss: str = "ece") -> PtsTrainConfig:
    return PtsTrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        steps=args.steps,
        num_bins=args.bins[0],
        loss=loss,
        seed=args.seed,
        topk=args.topk,
    )


def _emit_report(report: dict, out: str | None) -> None:
    if out:
        write_json(report, out)
    else:
        from .io_files import canonical_json

        sys.stdout.write(canonical_json(report) + "\n")


def _write_rows_csv(rows: list[dict], path: Path) -> None:
    header = list(rows[0].keys())
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in (row[h] for h in header)))
    write_text_atomic("\n".join(lines) + "\n", path)


def cmd_fit(args) -> int:
    if args.method not in experiments.METHODS:
        raise UsageError(f"unknown calibrator kind {args.method!r}")
    loss = args.losses[0] if args.losses else None
    val = read_logits(args.val)
    pts_cfg = _pts_config(args, loss=loss or "ece") if args.method == "pts" else None
    model = experiments.fit_method(
        args.method, val, seed=args.seed, num_bins=args.bins[0], pts_config=pts_cfg, loss=loss
    )
    save_model(model, args.out, num_classes=val.num_classes)
    return EXIT_OK


def cmd_apply(args) -> int:
    model = load_model(args.model)
    test = read_logits(args.test)
    probs = model.apply_probs(test.logits)
    preds = Predictions.from_probs(probs, test.labels)
    lines = ["predicted_class,confidence"]
    for p, c in zip(preds.predicted_class, preds.confidence):
        lines.append(f"{int(p)},{_fmt(c)}")
    write_text_atomic("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    test = read_logits(args.test)
    report = {
        "schema_version": 1,
        "num_classes": test.num_classes,
        "bins": list(args.bins),
        "methods": {model_kind(model): experiments.evaluate_model(model, test, args.bins)},
    }
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    unknown = [m for m in args.methods if m not in experiments.METHODS]
    if unknown:
        raise UsageError(f"unknown calibrator kind(s): {', '.join(unknown)}")
    val = read_logits(args.val)
    test = read_logits(args.test)
    report, _ = experiments.run_compare(
        args.methods,
        val,
        test,
        bins=args.bins,
        seed=args.seed,
        pts_config=_pts_config(args),
        timings=args.timings,
    )
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    fractions = args.fractions if isinstance(args.fractions, list) else _fraction_list(args.fractions)
    cfg = _pts_config(args)
    if args.name == "capacity":
        rows = experiments.run_capacity(args.widths, cfg, seed=args.seed)
    elif args.name == "bins":
        bins = args.bins if args.bins != [10] else list(range(5, 21, 2))
        rows = experiments.run_bins_sweep(bins, cfg, seed=args.seed)
    elif args.name == "data_efficiency":
        methods = args.methods or ["ts", "ets", "pts", "irova"]
        rows = experiments.run_data_efficiency(fractions, cfg, methods=methods, seed=args.seed)
    else:
        methods = args.methods or ["ets", "pts"]
        rows = experiments.run_loss_ablation(methods, args.losses, cfg, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows_csv(rows, out_dir / f"{args.name}.csv")
    write_json({"experiment": args.name, "seed": args.seed, "rows": rows}, out_dir / f"{args.name}.json")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "apply": cmd_apply,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "experiment": cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
