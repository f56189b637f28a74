"""Command-line entry point.

Every hyperparameter can come from a flag or from a ``--config`` file of flat
``key=value`` lines whose keys are the long flag names; flags win. Each run
writes ``manifest.txt`` in the same format beside its outputs, so

    activedc <command> --config out/manifest.txt

replays it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path


from . import __version__
from ._parallel import set_threads
from .baselines import SELECTORS
from .calibration import (
    ALPHA_PRESETS,
    CalibrationConfig,
    calibrate_selection,
)
from .clustering import dump_assignments
from .evaluation import SyntheticSpec, benchmark, budget_for_ratio, gen_synthetic
from .features import FeatureFormatError, LabelFile, load_features, load_labels, l2_normalize, save_features, save_labels
from .selection import SelectionConfig, SelectionResult, select_parametric

log = logging.getLogger("activedc")


class CLIError(Exception):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _alpha(text):
    key = str(text).strip().lower()
    if key in ALPHA_PRESETS:
        return ALPHA_PRESETS[key]
    return float(text)


def _float_list(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _str_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


# name -> (type, default, help)
PARAMS = {
    "features": (str, None, "feature pool (.adcf binary or .csv)"),
    "labels": (str, None, "label CSV 'index,label' used as the oracle"),
    "selection": (str, None, "selection JSON from the select command"),
    "method": (str, "parametric", "selector: parametric, random, kcenter, kmeans"),
    "budget": (int, None, "annotation budget B"),
    "ratio": (float, None, "sampling ratio r in percent; B = round(r*N/100)"),
    "classes": (int, None, "number of classes K"),
    "seed": (int, 0, "random seed"),
    "tau": (float, 0.07, "selection temperature"),
    "balance": (float, 1.0, "weight of the diversity term"),
    "lr": (float, 1e-3, "Adam learning rate"),
    "iters": (int, 300, "maximum optimizer iterations"),
    "tukey-lambda": (float, 0.5, "power of the Tukey transform (1 disables it)"),
    "alpha": (_alpha, 0.7, "beta schedule rate, or preset cifar10/cifar100/imagenet"),
    "xi": (float, 0.2, "covariance inflation"),
    "xi-mode": (str, "all", "add xi to 'all' covariance entries or the 'diagonal'"),
    "trim": (float, 0.9, "fraction of members kept for the trimmed mean"),
    "n-gen": (int, 2, "generated features per labeled feature"),
    "kmeans-restarts": (int, 10, "k-means restarts for pseudo-categories"),
    "no-calibrate": (_bool, False, "skip statistics calibration (ablation)"),
    "no-filter": (_bool, False, "skip EMD filtering (ablation)"),
    "dump-clusters": (_bool, False, "also write clusters.csv"),
    "threads": (int, 1, "worker threads; 1 is bitwise deterministic"),
    "output-dir": (str, ".", "directory for outputs"),
    "per-class": (int, 1250, "synthetic samples per class"),
    "dim": (int, 64, "synthetic feature dimension"),
    "concentration": (float, 5.0, "synthetic intra-class concentration"),
    "test-fraction": (float, 0.2, "synthetic held-out fraction"),
    "test-features": (str, None, "held-out feature pool for benchmark"),
    "test-labels": (str, None, "held-out labels for benchmark"),
    "methods": (_str_list, "random,random+dc,kmeans,kmeans+dc,parametric,parametric+dc", "benchmark methods"),
    "ratios": (_float_list, "0.5,1,2", "benchmark ratios (percent)"),
    "seeds": (_int_list, "0,1,2,3,4", "benchmark seeds"),
    "epochs": (int, 200, "probe epochs"),
    "probe-lr": (float, 0.5, "probe learning rate"),
    "weight-decay": (float, 1e-4, "probe weight decay"),
}

SELECT_KEYS = ["features", "method", "budget", "ratio", "seed", "tau", "balance", "lr", "iters"]
CALIB_KEYS = [
    "classes", "tukey-lambda", "alpha", "xi", "xi-mode", "trim", "n-gen",
    "kmeans-restarts", "no-calibrate", "no-filter", "dump-clusters",
]
SYNTH_KEYS = ["classes", "dim", "per-class", "concentration", "test-fraction", "seed"]
COMMANDS = {
    "gen-synth": SYNTH_KEYS,
    "select": SELECT_KEYS,
    "calibrate": ["features", "labels", "selection", "ratio", "seed"] + CALIB_KEYS,
    "pipeline": SELECT_KEYS + ["labels"] + CALIB_KEYS,
    "benchmark": [
        "features", "labels", "test-features", "test-labels", "methods", "ratios", "seeds",
        "tau", "balance", "lr", "iters", "epochs", "probe-lr", "weight-decay",
    ] + SYNTH_KEYS + [k for k in CALIB_KEYS if k != "dump-clusters"],
}
COMMANDS = {name: list(dict.fromkeys(keys)) for name, keys in COMMANDS.items()}
COMMON = ["threads", "output-dir"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activedc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value file; flags override it")
        for key in keys + COMMON:
            _, default, help_text = PARAMS[key]
            if PARAMS[key][0] is _bool:
                p.add_argument(f"--{key}", nargs="?", const="true", default=None, help=help_text)
            else:
                p.add_argument(f"--{key}", default=None, help=f"{help_text} (default: {default})")
    return parser


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CLIError(f"{path}:{lineno}: expected key=value")
            key, value = (t.strip() for t in line.split("=", 1))
            out[key] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Effective parameters: defaults < config file < flags."""
    keys = COMMANDS[command] + COMMON
    raw = {k: PARAMS[k][1] for k in keys}
    if args.config:
        cfg = read_config(args.config)
        if cfg.pop("command", command) != command:
            raise CLIError(f"config {args.config} was written for another command")
        cfg.pop("version", None)
        unknown = sorted(set(cfg) - set(keys))
        if unknown:
            raise CLIError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        raw.update(cfg)
    for k in keys:
        value = getattr(args, k.replace("-", "_"))
        if value is not None:
            raw[k] = value
    params = {}
    for k, value in raw.items():
        if value is None or (isinstance(value, str) and value == "" and PARAMS[k][1] is None):
            params[k] = None
            continue
        try:
            params[k] = PARAMS[k][0](value) if isinstance(value, str) else value
        except ValueError as exc:
            raise CLIError(f"--{k}: {exc}") from None
    for k in ("ratios", "seeds", "methods"):
        if k in params and isinstance(params[k], str):
            params[k] = PARAMS[k][0](params[k])
    return params


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def manifest_text(command: str, params: dict, extra: dict | None = None) -> str:
    lines = [f"command={command}"]
    for k in sorted(params):
        lines.append(f"{k}={_fmt(params[k])}")
    for k, v in sorted((extra or {}).items()):
        lines.append(f"# {k}={_fmt(v)}")
    return "\n".join(lines) + "\n"


def commit(out_dir: Path, files: dict[str, bytes | str]) -> None:
    """Write all outputs via temp files, renaming only once all are written."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, payload in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.")
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload.encode() if isinstance(payload, str) else payload)
            staged.append((tmp, out_dir / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dest in staged:
        os.replace(tmp, dest)


def _require(params, *keys):
    for k in keys:
        if params.get(k) is None:
            raise CLIError(f"--{k} is required")


def _load_pool(path):
    if not Path(path).exists():
        raise CLIError(f"features file not found: {path}")
    try:
        pool = load_features(path)
    except FeatureFormatError as exc:
        raise CLIError(f"{path}: {exc}") from None
    return pool if pool.normalized else l2_normalize(pool)


def _load_label_file(path, pool=None) -> LabelFile:
    if not Path(path).exists():
        raise CLIError(f"labels file not found: {path}")
    try:
        labels = load_labels(path)
        if pool is not None:
            labels.check_against(pool)
    except (FeatureFormatError, ValueError) as exc:
        raise CLIError(f"{path}: {exc}") from None
    return labels


def _check_ratio(r):
    if r is not None and not 0 <= r <= 100:
        raise CLIError("ratio_r must be in [0,100]")


def _budget_and_ratio(params, n):
    budget, ratio = params.get("budget"), params.get("ratio")
    _check_ratio(ratio)
    if budget is None and ratio is None:
        raise CLIError("one of --budget or --ratio is required")
    if budget is None:
        budget = budget_for_ratio(ratio, n)
    if not 1 <= budget <= n:
        raise CLIError(f"budget must be in [1, {n}], got {budget}")
    if ratio is None:
        ratio = 100.0 * budget / n
    return budget, ratio


def _selection_config(params, budget):
    try:
        return SelectionConfig(
            budget=budget,
            temperature=params["tau"],
            balance=params["balance"],
            learning_rate=params["lr"],
            max_iters=params["iters"],
            seed=params["seed"],
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def _calibration_kwargs(params) -> dict:
    return dict(
        tukey_lambda=params["tukey-lambda"],
        alpha=params["alpha"],
        xi=params["xi"],
        xi_mode=params["xi-mode"],
        trim_fraction=params["trim"],
        n_fold=params["n-gen"],
        n_classes=params["classes"],
        kmeans_restarts=params["kmeans-restarts"],
        calibrate=not params["no-calibrate"],
        filter=not params["no-filter"],
    )


def _calibration_config(params, ratio):
    try:
        return CalibrationConfig(ratio_r=ratio, seed=params["seed"], **_calibration_kwargs(params))
    except ValueError as exc:
        raise CLIError(str(exc)) from None


def _run_selection(pool, params, budget):
    method = params["method"]
    if method == "parametric":
        return select_parametric(pool, _selection_config(params, budget))
    if method not in SELECTORS:
        raise CLIError(f"unknown method {method!r}")
    return SELECTORS[method](pool, budget, params["seed"])


def _calibrate_outputs(pool, truth: LabelFile, selection: SelectionResult, params, ratio) -> dict:
    config = _calibration_config(params, ratio)
    try:
        labeled = selection.with_labels(truth.lookup(selection.indices))
    except KeyError as exc:
        raise CLIError(f"oracle has no label for selected {exc.args[0]}") from None
    extended, model = calibrate_selection(pool, labeled, config, keep_model=True)
    summary = dict(extended.summary)
    summary["selection"] = selection.to_dict() | {"method": selection.method}
    gen = extended.provenance == "generated"
    if gen.any() and len(truth.indices) == pool.count:
        # diagnostic only: the full truth is never consulted by the pipeline
        dense = truth.dense(pool.count)
        summary["pseudo_label_agreement"] = float((dense[extended.indices[gen]] == extended.labels[gen]).mean())
    files = {
        "extended_pool.csv": extended.to_csv(),
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
    }
    if params.get("dump-clusters"):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "clusters.csv"
            dump_assignments(model, path)
            files["clusters.csv"] = path.read_text()
    return files


def cmd_gen_synth(params) -> dict:
    try:
        spec = SyntheticSpec(
            classes=params["classes"] or 10,
            dim=params["dim"],
            per_class=params["per-class"],
            concentration=params["concentration"],
            seed=params["seed"],
            test_fraction=params["test-fraction"],
        )
        train, truth, test, test_truth = gen_synthetic(spec)
    except (ValueError, RuntimeError) as exc:
        raise CLIError(str(exc)) from None
    files = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        save_features(train, tmp / "train.adcf")
        save_labels(truth, tmp / "train_labels.csv")
        if test is not None:
            save_features(test, tmp / "test.adcf")
            save_labels(test_truth, tmp / "test_labels.csv")
        for path in sorted(tmp.iterdir()):
            files[path.name] = path.read_bytes()
    return files


def cmd_select(params) -> dict:
    _require(params, "features")
    pool = _load_pool(params["features"])
    budget, _ = _budget_and_ratio(params, pool.count)
    selection = _run_selection(pool, params, budget)
    return {"selection.json": selection.to_json() + "\n"}


def cmd_calibrate(params) -> dict:
    _require(params, "features", "labels", "selection")
    pool = _load_pool(params["features"])
    truth = _load_label_file(params["labels"], pool)
    if not Path(params["selection"]).exists():
        raise CLIError(f"selection file not found: {params['selection']}")
    try:
        selection = SelectionResult.from_dict(json.loads(Path(params["selection"]).read_text()))
    except (ValueError, KeyError) as exc:
        raise CLIError(f"{params['selection']}: {exc}") from None
    if selection.budget and selection.indices.max() >= pool.count:
        raise CLIError("selection refers to rows outside the pool")
    ratio = params["ratio"]
    _check_ratio(ratio)
    if ratio is None:
        ratio = 100.0 * selection.budget / pool.count
    return _calibrate_outputs(pool, truth, selection, params, ratio)


def cmd_pipeline(params) -> dict:
    _require(params, "features", "labels")
    pool = _load_pool(params["features"])
    truth = _load_label_file(params["labels"], pool)
    budget, ratio = _budget_and_ratio(params, pool.count)
    _calibration_config(params, ratio)  # validate before the expensive part
    selection = _run_selection(pool, params, budget)
    files = {"selection.json": selection.to_json() + "\n"}
    files.update(_calibrate_outputs(pool, truth, selection, params, ratio))
    return files


def cmd_benchmark(params) -> dict:
    from .evaluation import ProbeConfig

    for r in params["ratios"]:
        _check_ratio(r)
    if params["features"]:
        _require(params, "labels", "test-features", "test-labels")
        train = _load_pool(params["features"])
        test = _load_pool(params["test-features"])
        data = (
            train,
            _load_label_file(params["labels"], train),
            test,
            _load_label_file(params["test-labels"], test),
        )
        spec = None
    else:
        data = None
        spec = SyntheticSpec(
            classes=params["classes"] or 10,
            dim=params["dim"],
            per_class=params["per-class"],
            concentration=params["concentration"],
            seed=params["seed"],
            test_fraction=params["test-fraction"],
        )
    n_classes = params["classes"] or (int(data[1].labels.max()) + 1 if data else spec.classes)
    cal_kw = _calibration_kwargs(params)
    cal_kw["n_classes"] = n_classes
    try:
        report = benchmark(
            params["methods"],
            params["ratios"],
            params["seeds"],
            spec=spec,
            data=data,
            selection_kw=dict(
                temperature=params["tau"], balance=params["balance"],
                learning_rate=params["lr"], max_iters=params["iters"],
            ),
            calibration_kw=cal_kw,
            probe=ProbeConfig(
                epochs=params["epochs"], learning_rate=params["probe-lr"],
                weight_decay=params["weight-decay"], n_classes=n_classes,
            ),
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    return {"benchmark.csv": report.rows_csv(), "benchmark_summary.csv": report.summary_csv()}


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "select": cmd_select,
    "calibrate": cmd_calibrate,
    "pipeline": cmd_pipeline,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", UserWarning)
    try:
        params = resolve(args.command, args)
        if params["threads"] < 1:
            raise CLIError("--threads must be >= 1")
        set_threads(params["threads"])
        files = HANDLERS[args.command](params)
        files["manifest.txt"] = manifest_text(args.command, params, {"version": __version__})
        commit(Path(params["output-dir"]), files)
    except CLIError as exc:
        print(f"activedc {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        set_threads(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
