"""Command-line interface: ``fairreg {fit,predict,evaluate,simulate,cv}``.

Exit codes: 0 success, 1 input/schema/config error, 2 fitting or
prediction error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .base_learners import ConvergenceError, GroupSizeError
from .data import SchemaError, read_csv, read_csv_table
from .isotonic import FitError
from .losses import LossSpec
from .metrics import evaluate
from .pipeline import CVError, FairModel, QClassConfig, SplitMode, fit_fair, select_cv
from .serialize import atomic_write_text, canonical_dumps
from .simulation import RobustSimConfig, run_experiment
from .splines import ConfigurationError

log = logging.getLogger("fairreg")

EXIT_OK, EXIT_INPUT, EXIT_FIT = 0, 1, 2
RUN_KEYS = {"loss", "qclass", "split", "seed"}


class InputError(Exception):
    pass


class FitFailure(Exception):
    pass


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise InputError(f"{path}: expected a JSON object")
    return obj


def _load_run_config(path, seed_override):
    cfg = _load_json(path)
    unknown = set(cfg) - RUN_KEYS
    if unknown:
        raise InputError(f"{path}: unknown config keys {sorted(unknown)}")
    try:
        spec = LossSpec.from_dict(cfg.get("loss", {"kind": "squared"}))
        seed = seed_override if seed_override is not None else cfg.get("seed")
        split_d = dict(cfg.get("split") or {})
        qclass_d = dict(cfg.get("qclass") or {"solver": "isotonic"})
        if seed is not None:
            # a top-level seed drives every random choice
            split_d["seed"] = int(seed)
            if qclass_d.get("cv") is not None:
                qclass_d["cv"] = {**qclass_d["cv"], "seed": int(seed)}
        split = SplitMode.from_dict(split_d)
        qcfg = QClassConfig.from_dict(qclass_d)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid config: {exc}") from None
    return spec, qcfg, split


def _load_model(path) -> FairModel:
    try:
        return FairModel.from_dict(_load_json(path))
    except InputError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: invalid model: {exc}") from None


def _read_data(path, require_target=True):
    if not Path(path).is_file():
        raise InputError(f"{path}: no such file")
    try:
        return read_csv(path, require_target=require_target)
    except SchemaError as exc:
        raise InputError(str(exc)) from None


def cmd_fit(args) -> int:
    spec, qcfg, split = _load_run_config(args.config, args.seed)
    data = _read_data(args.data)
    if len(data.group_labels) < 2:
        raise InputError(f"{args.data}: need at least two groups")
    try:
        model = fit_fair(data, spec, qcfg, split)
    except GroupSizeError as exc:
        raise FitFailure(str(exc)) from None
    report = evaluate(model, data, spec)
    atomic_write_text(args.out, canonical_dumps(model.to_dict()))
    sys.stdout.write(canonical_dumps(report.to_dict()))
    return EXIT_OK


def cmd_predict(args) -> int:
    model = _load_model(args.model)
    data = _read_data(args.data, require_target=False)
    header, rows = read_csv_table(args.data)
    try:
        preds = model.predict(data.features, data.groups)
    except KeyError as exc:
        raise FitFailure(exc.args[0]) from None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header + ["prediction"])
    for row, p in zip(rows, preds):
        writer.writerow(row + ["%.17g" % p])
    atomic_write_text(args.out, buf.getvalue())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = _load_model(args.model)
    data = _read_data(args.data)
    try:
        report = evaluate(model, data, model.loss)
    except KeyError as exc:
        raise FitFailure(exc.args[0]) from None
    sys.stdout.write(canonical_dumps(report.to_dict()))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        config = RobustSimConfig.from_dict(cfg)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{args.config}: invalid simulation config: {exc}") from None
    result = run_experiment(config)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, ["method", "metric", "mean", "stderr", "n_reps"], lineterminator="\n")
    writer.writeheader()
    for row in result.rows:
        writer.writerow({**row, "mean": "%.17g" % row["mean"], "stderr": "%.17g" % row["stderr"]})
    atomic_write_text(args.out, buf.getvalue())
    summary = {"config": config.to_dict(), "rows": result.rows, "failures": result.failures}
    sys.stdout.write(canonical_dumps(summary))
    return EXIT_OK


def cmd_cv(args) -> int:
    spec, qcfg, split = _load_run_config(args.config, args.seed)
    if qcfg.cv is None:
        raise InputError(f"{args.config}: qclass.cv is required for the cv command")
    data = _read_data(args.data)
    try:
        best, table = select_cv(data, spec, qcfg.cv, split)
    except (CVError, GroupSizeError) as exc:
        raise FitFailure(str(exc)) from None
    out = {
        "chosen": {"degree": best.degree, "interior_knots": best.n_interior_knots},
        "candidates": [
            {**r, "ks": r["ks"] if r["feasible"] else None, "risk": r["risk"] if r["feasible"] else None}
            for r in table
        ],
    }
    sys.stdout.write(canonical_dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a fair model and print training metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="append fair predictions to a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="print risk and KS parity of a model on a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="run the robust-regression simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cv", help="select the I-spline degree and knot count")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FitFailure, ConvergenceError, FitError, ConfigurationError, CVError) as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except ValueError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
