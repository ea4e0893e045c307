"""flowsentry command line: extract, prepare, train, evaluate, predict.

Exit codes: 0 success, 1 usage error, 2 data or format error.
"""
import argparse
import csv
import hashlib
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from .dataset import (
    EmptyDatasetError,
    SchemaError,
    _resolve_columns,
    balance,
    load_csv,
    split,
    write_csv,
    write_manifest,
)
from .ensembles import BoostedTreesClassifier, RandomForestClassifier
from .flowmeter import PcapFormatError, extract_flows, iter_pcap, CaptureStats, write_flow_csv
from .metrics import (
    classification_report,
    confusion_matrix,
    format_report,
    macro_auc,
    report_json,
    roc_csv,
    roc_curves,
    roc_svg,
)
from .model_store import ModelFileError, load, save
from .schema import IP_FEATURES, LABELS, N_FEATURES, encode_ip
from .scoring import batch_scores, row_scorer
from .svm import LinearSVMClassifier
from .tree import DecisionTreeClassifier

logger = logging.getLogger("flowsentry")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _u64(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _optional_int(text):
    return None if text.lower() in ("none", "null", "") else int(text)


# per-algorithm flags: (flag, type, default)
TRAIN_PARAMS = {
    "dt": [("max-depth", _optional_int, 20), ("min-samples-split", int, 2),
           ("min-impurity-decrease", float, 0.0)],
    "rf": [("n-trees", int, 100), ("mtry", int, None), ("max-depth", _optional_int, 20),
           ("min-samples-split", int, 2), ("bootstrap", _optional_int, 1)],
    "gbt": [("n-rounds", int, 100), ("learning-rate", float, 0.1), ("max-depth", _optional_int, 6),
            ("reg-lambda", float, 1.0), ("gamma", float, 0.0), ("min-samples-split", int, 2)],
    "svm": [("alpha", float, 1e-4), ("epochs", int, 20)],
}
_ALL_TRAIN_FLAGS = {}
for _algo, _specs in TRAIN_PARAMS.items():
    for _flag, _type, _default in _specs:
        _ALL_TRAIN_FLAGS[_flag] = _type


def build_parser():
    parser = _Parser(prog="flowsentry", description="Flow-based DDoS detection toolkit.")
    parser.add_argument("--version", action="version", version=f"flowsentry {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("extract", help="pcap -> flow feature CSV")
    p.add_argument("--pcap")
    p.add_argument("--out")
    p.add_argument("--idle-timeout-s", type=_positive_float)
    p.add_argument("--activity-timeout-s", type=_positive_float)
    p.add_argument("--label", help="append a label column with this value to every row")

    p = sub.add_parser("prepare", help="clean, balance and split labelled CSVs")
    p.add_argument("--in", dest="inputs", nargs="+")
    p.add_argument("--out")
    p.add_argument("--per-class", type=int)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--label", help="label for input files without a label column")

    p = sub.add_parser("train", help="fit a model")
    p.add_argument("--algo", choices=sorted(TRAIN_PARAMS))
    p.add_argument("--train")
    p.add_argument("--model")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--jobs", type=int)
    for flag, typ in _ALL_TRAIN_FLAGS.items():
        p.add_argument(f"--{flag}", type=typ)

    p = sub.add_parser("evaluate", help="score a model on a labelled test CSV")
    p.add_argument("--model")
    p.add_argument("--test")
    p.add_argument("--report")
    p.add_argument("--roc-dir")

    p = sub.add_parser("predict", help="stream predictions row by row")
    p.add_argument("--model")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")

    for name, sp in sub.choices.items():
        sp.add_argument("--config", help="key = value file; command-line flags take precedence")
    return parser


DEFAULTS = {
    "extract": {"idle_timeout_s": 120.0, "activity_timeout_s": 1.0},
    "prepare": {"per_class": None, "seed": 0, "train_fraction": 0.8},
    "train": {"seed": 0, "jobs": 1},
}
REQUIRED = {
    "train": ("algo", "train", "model"),
    "evaluate": ("model", "test", "report", "roc_dir"),
    "predict": ("model", "input", "out"),
    "extract": ("pcap", "out"),
    "prepare": ("inputs", "out", "per_class"),
}


def read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise UsageError(f"{path}: line {n}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(parser, args):
    """Fill unset flags from --config, then from defaults."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    if args.config:
        for key, raw in read_config(args.config).items():
            if key == "in":
                key = "inputs" if args.command == "prepare" else "input"
            if key not in actions or key == "config":
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
            if getattr(args, key) is not None:
                continue
            action = actions[key]
            try:
                if action.nargs == "+":
                    value = [action.type(v) if action.type else v for v in raw.split()]
                else:
                    value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from None
            setattr(args, key, value)
    for key, value in DEFAULTS.get(args.command, {}).items():
        if getattr(args, key) is None:
            setattr(args, key, value)
    for key in REQUIRED.get(args.command, ()):
        if getattr(args, key) is None:
            flag = "in" if key in ("inputs", "input") else key.replace("_", "-")
            raise UsageError(f"{args.command}: --{flag} is required")
    return args


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(path, command, params, inputs, counters, started):
    items = {
        "tool": "flowsentry",
        "version": __version__,
        "command": command,
        "params": {k: v for k, v in sorted(params.items())},
        "input": {str(i): f"{p} sha256={file_digest(p)}" for i, p in enumerate(inputs)},
        "counters": counters,
        "wall_clock_s": f"{time.monotonic() - started:.3f}",
    }
    write_manifest(path, items)


def _params_of(args, skip=("command", "config")):
    return {k: v for k, v in vars(args).items() if k not in skip}


def cmd_extract(args, started):
    stats = CaptureStats()
    try:
        with open(args.pcap, "rb") as fh:
            events = iter_pcap(fh, stats)
            records = extract_flows(
                events,
                activity_timeout_us=round(args.activity_timeout_s * 1_000_000),
                idle_timeout_us=round(args.idle_timeout_s * 1_000_000),
            )
            with open(args.out, "w", encoding="utf-8", newline="\n") as out:
                n = write_flow_csv(records, out, label=args.label)
    except PcapFormatError as exc:
        raise DataError(f"{args.pcap}: {exc}") from None
    counters = {"packets": stats.packets, "skipped": stats.skipped, "flows": n,
                "truncated": stats.truncated}
    counters.update({f"skipped_{k}": v for k, v in sorted(stats.skip_reasons.items())})
    _manifest(args.out + ".manifest", "extract", _params_of(args), [args.pcap], counters, started)
    logger.info("extracted %d flows from %d packets", n, stats.packets)
    return EXIT_OK


def cmd_prepare(args, started):
    if not 0 < args.train_fraction < 1:
        raise UsageError("--train-fraction must lie strictly between 0 and 1")
    if args.per_class < 1:
        raise UsageError("--per-class must be at least 1")
    ds = load_csv(args.inputs, default_label=args.label)
    balanced = balance(ds, args.per_class, args.seed)
    train, test = split(balanced, args.train_fraction, args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(train, os.path.join(args.out, "train.csv"))
    write_csv(test, os.path.join(args.out, "test.csv"))
    counters = {"loaded_rows": len(ds), "selected_rows": len(balanced),
                "train_rows": len(train), "test_rows": len(test)}
    counters.update({f"dropped_{k}": v for k, v in sorted(ds.drops.items())})
    counters.update({f"class_{k}": v for k, v in balanced.class_counts().items()})
    _manifest(os.path.join(args.out, "manifest.txt"), "prepare", _params_of(args),
              args.inputs, counters, started)
    return EXIT_OK


def make_estimator(args):
    given = {flag.replace("-", "_"): getattr(args, flag.replace("-", "_")) for flag in _ALL_TRAIN_FLAGS}
    allowed = {flag.replace("-", "_") for flag, _, _ in TRAIN_PARAMS[args.algo]}
    stray = sorted(k for k, v in given.items() if v is not None and k not in allowed)
    if stray:
        raise UsageError(f"--algo {args.algo} does not accept: " + ", ".join("--" + s.replace("_", "-") for s in stray))
    kw = {}
    for flag, _, default in TRAIN_PARAMS[args.algo]:
        key = flag.replace("-", "_")
        value = given[key] if given[key] is not None else default
        kw[key] = value
    if args.algo == "dt":
        return DecisionTreeClassifier(**kw)
    if args.algo == "rf":
        kw["bootstrap"] = bool(kw["bootstrap"])
        return RandomForestClassifier(seed=args.seed, n_jobs=args.jobs, **kw)
    if args.algo == "gbt":
        return BoostedTreesClassifier(seed=args.seed, n_jobs=args.jobs, **kw)
    return LinearSVMClassifier(seed=args.seed, **kw)


def cmd_train(args, started):
    model = make_estimator(args)
    ds = load_csv([args.train])
    try:
        model.fit(ds.features, ds.labels)
    except ValueError as exc:
        raise DataError(f"{args.train}: {exc}") from None
    save(model, args.model)
    params = _params_of(args)
    params.update({f"model.{k}": v for k, v in model.get_params().items()})
    counters = {"train_rows": len(ds)}
    if hasattr(model, "train_loss_") and model.train_loss_:
        counters["final_train_log_loss"] = repr(model.train_loss_[-1])
    _manifest(args.model + ".manifest", "train", params, [args.train], counters, started)
    return EXIT_OK


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _report_stem(path):
    stem, ext = os.path.splitext(path)
    return stem if ext else path


def cmd_evaluate(args, started):
    model = load(args.model)
    ds = load_csv([args.test])
    labels = getattr(model, "labels_", LABELS)
    predicted, scores = batch_scores(model, ds.features)
    cm = confusion_matrix(ds.labels.tolist(), predicted.tolist(), labels)
    report = classification_report(cm)
    curves = roc_curves(scores, ds.labels, model.classes_)
    named = {labels[c]: curve for c, curve in curves.items()}
    auc = {name: curve.auc for name, curve in named.items()}
    auc["macro"] = macro_auc(curves)
    kind = type(model).__name__
    _write_text(args.report, format_report(report, f"Classification report ({kind})"))
    stem = _report_stem(args.report)
    _write_text(stem + ".json", report_json(report, auc))
    with open(stem + ".predictions.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row,actual,predicted\n")
        for i, (a, p) in enumerate(zip(ds.labels.tolist(), predicted.tolist())):
            fh.write(f"{i},{labels[a]},{labels[p]}\n")
    os.makedirs(args.roc_dir, exist_ok=True)
    for name, curve in named.items():
        _write_text(os.path.join(args.roc_dir, f"roc_{name}.csv"), roc_csv(curve))
    _write_text(os.path.join(args.roc_dir, "roc.svg"), roc_svg(named, title=f"ROC ({kind})"))
    counters = {"test_rows": len(ds), "accuracy": repr(report.accuracy), "macro_auc": repr(auc["macro"])}
    _manifest(stem + ".manifest", "evaluate", _params_of(args), [args.model, args.test], counters, started)
    return EXIT_OK


def _open_in(path):
    if path == "-":
        return sys.stdin
    return open(path, newline="", encoding="utf-8")


def _open_out(path):
    if path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="\n")


def cmd_predict(args, started):
    model = load(args.model)
    labels = getattr(model, "labels_", LABELS)
    score = row_scorer(model)
    src = _open_in(args.input)
    dst = _open_out(args.out)
    name = "<stdin>" if args.input == "-" else args.input
    n = 0
    try:
        reader = csv.reader(src)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{name}: empty input, expected a header row")
        try:
            positions, _ = _resolve_columns(header, name)
        except SchemaError as exc:
            raise DataError(str(exc)) from None
        dst.write(",".join(["label"] + [f"score_{labels[c]}" for c in model.classes_]) + "\n")
        x = np.empty(N_FEATURES)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                for j, pos in enumerate(positions):
                    cell = row[pos]
                    x[j] = encode_ip(cell) if j in IP_FEATURES and cell.count(".") == 3 else float(cell)
            except (ValueError, IndexError):
                raise DataError(f"{name}: row {row_no}: unparseable feature values") from None
            if not np.isfinite(x).all():
                raise DataError(f"{name}: row {row_no}: non-finite feature value")
            cls, scores = score(x)
            dst.write(labels[cls] + "," + ",".join(repr(float(s)) for s in scores) + "\n")
            if args.out == "-":
                dst.flush()
            n += 1
    finally:
        if src is not sys.stdin:
            src.close()
        if dst is not sys.stdout:
            dst.close()
    if args.out != "-":
        inputs = [args.model] + ([args.input] if args.input != "-" else [])
        _manifest(args.out + ".manifest", "predict", _params_of(args), inputs, {"rows": n}, started)
    return EXIT_OK


COMMANDS = {
    "extract": cmd_extract,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
}


LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def configure_logging():
    """Route the package logger to stderr at the level named by FLOWSENTRY_LOG."""
    name = os.environ.get("FLOWSENTRY_LOG", "warn").strip().lower()
    level = LOG_LEVELS.get(name, logging.WARNING)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    if name not in LOG_LEVELS:
        logger.warning("unknown FLOWSENTRY_LOG value %r, using warn", name)


def _log_warning(message, category, filename, lineno, file=None, line=None):
    logger.warning("%s", message)


def main(argv=None):
    configure_logging()
    parser = build_parser()
    started = time.monotonic()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("flowsentry: a subcommand is required (extract, prepare, train, evaluate, predict)")
        args = resolve(parser, args)
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _log_warning
            return COMMANDS[args.command](args, started)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, EmptyDatasetError, ModelFileError, PcapFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
