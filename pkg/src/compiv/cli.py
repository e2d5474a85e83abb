"""``compiv`` command line.

Subcommands: ``simulate``, ``fit``, ``evaluate``, ``benchmark``,
``diversity-iv`` and ``ingest``. Exit status is 0 on success, 2 for
configuration errors and 3 for numerical failures (non-convergence, singular
systems). ``COMPIV_SEED`` overrides the default seed of every command.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .datagen import GroundTruth, IVDataset, SimulationSpec, generate, interventional_sample, preset, preset_names
from .first_stage import DirichletConvergenceError, RankDeficientError
from .lasso import LossSpec
from .metrics import benchmark, evaluate
from .pipelines import (
    UnderIdentifiedError,
    binarize,
    fit_diversity_iv,
    fit_from_dict,
    fit_method,
    fit_to_dict,
    with_counts,
)

__all__ = ["main", "ingest_real", "ConfigError", "load_experiment_config"]

log = logging.getLogger("compiv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

METHOD_FLAGS = {
    "2sls": "2SLS",
    "2sls-ilr": "2SLS_ILR",
    "ilr-lc": "ILR+LC",
    "alr-lc": "ALR+LC",
    "dir-lc": "DIR+LC",
    "kiv-ilr": "KIV_ILR",
    "only-lc": "OnlyLC",
}
LC_METHODS = {"ILR+LC", "ALR+LC", "DIR+LC", "OnlyLC"}


class ConfigError(Exception):
    """Invalid flags, files or configuration documents."""


class NumericalFailure(Exception):
    """A fit finished but did not converge."""


def _default_seed():
    raw = os.environ.get("COMPIV_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"COMPIV_SEED must be an integer, got {raw!r}") from None


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read JSON {path}: {err}") from None


def _read_dataset(path, pseudo_count=None):
    try:
        ds = IVDataset.from_csv(path) if pseudo_count is None else None
    except ValueError as err:
        if "strictly positive" not in str(err):
            raise ConfigError(f"{path}: {err}") from None
        ds = None
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    if ds is None:
        # zeros present: treat the x columns as counts
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        zi = [k for k, h in enumerate(header) if h.startswith("z_")]
        xi = [k for k, h in enumerate(header) if h.startswith("x_")]
        ds = with_counts(data[:, zi], data[:, xi], data[:, -1], 0.5 if pseudo_count is None else pseudo_count)
    return ds


# --------------------------------------------------------------------------
# real data


def ingest_real(path, instrument_col, outcome_col, *, binary=False, pseudo_count=0.5):
    """Read a per-sample count table into an :class:`IVDataset`.

    Every column other than the instrument and outcome columns is taken as a
    taxon count. Zeros are replaced by adding ``pseudo_count`` to all counts
    of a dataset that has any zero; rows are then closed. With ``binary``
    the outcome is split at its mean into -1 / +1. Taxa are not aggregated.
    """
    try:
        with open(path) as fh:
            header = [h.strip() for h in fh.readline().strip().split(",")]
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    for col in (instrument_col, outcome_col):
        if col not in header:
            raise ConfigError(f"{path}: no column named {col!r}")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as err:
        raise ConfigError(f"{path}: non-numeric cell ({err})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"{path}: ragged rows")
    iz, iy = header.index(instrument_col), header.index(outcome_col)
    taxa = [k for k in range(len(header)) if k not in (iz, iy)]
    if len(taxa) < 2:
        raise ConfigError("need at least two taxon count columns")
    counts = data[:, taxa]
    if np.any(counts < 0):
        raise ConfigError("negative counts")
    if np.any(counts.sum(axis=1) == 0):
        bad = np.flatnonzero(counts.sum(axis=1) == 0)
        raise ConfigError(f"all-zero count rows: {bad.tolist()}")
    y = data[:, iy]
    if binary:
        y = binarize(y)
    ds = with_counts(data[:, [iz]], counts, y, pseudo_count)
    ds.meta.update({"taxa": [header[k] for k in taxa], "instrument": instrument_col, "outcome": outcome_col,
                    "binary": bool(binary)})
    return ds


# --------------------------------------------------------------------------
# experiment configs

_CONFIG_KEYS = {"scenarios", "methods", "threshold", "n_seeds", "seed0", "m", "jobs", "n", "outputs"}
_OUTPUT_KEYS = {"csv", "jsonl", "text"}


def load_experiment_config(doc):
    """Validate a benchmark configuration document (unknown keys rejected)."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(doc) - _CONFIG_KEYS
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if "scenarios" not in doc or "methods" not in doc:
        raise ConfigError("config needs 'scenarios' and 'methods'")
    specs = []
    for sc in doc["scenarios"]:
        try:
            spec = preset(sc) if isinstance(sc, str) else SimulationSpec.from_dict(sc)
        except (KeyError, ValueError, TypeError) as err:
            raise ConfigError(f"bad scenario {sc!r}: {err}") from None
        if doc.get("n") is not None:
            spec = spec.with_(n=int(doc["n"]))
        specs.append(spec)
    methods = [_method_name(m) for m in doc["methods"]]
    outputs = doc.get("outputs", {})
    if set(outputs) - _OUTPUT_KEYS:
        raise ConfigError(f"unknown output keys: {sorted(set(outputs) - _OUTPUT_KEYS)}")
    return {
        "specs": specs,
        "methods": methods,
        "threshold": float(doc.get("threshold", 0.7)),
        "n_seeds": int(doc.get("n_seeds", 2)),
        "seed0": int(doc.get("seed0", 0)),
        "m": int(doc.get("m", 250)),
        "jobs": int(doc.get("jobs", 1)),
        "outputs": outputs,
    }


def _method_name(flag):
    if flag in METHOD_FLAGS:
        return METHOD_FLAGS[flag]
    if flag in METHOD_FLAGS.values():
        return flag
    raise ConfigError(f"unknown method {flag!r}; choose from {', '.join(METHOD_FLAGS)}")


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    if args.config:
        try:
            spec = SimulationSpec.from_dict(_read_json(args.config))
        except (KeyError, ValueError, TypeError) as err:
            raise ConfigError(f"bad simulation config: {err}") from None
    else:
        name = args.preset
        if name is None:
            if args.setting is None or args.p is None:
                raise ConfigError("give --preset, --config, or --setting with --p")
            name = {"A": "A-p{p}", "B": "B-p{p}"}.get(args.setting, "").format(p=args.p)
            if args.setting == "A_weak":
                name = "A-weak"
            elif args.setting == "A_nonlinear":
                name = "A-nonlinear"
        try:
            spec = preset(name)
        except KeyError as err:
            raise ConfigError(str(err.args[0])) from None
    changes = {"seed": args.seed}
    if args.n is not None:
        changes["n"] = args.n
    if args.q is not None and args.q != spec.q:
        raise ConfigError(f"preset {spec.name} has q={spec.q}; use --config for other shapes")
    spec = spec.with_(**changes)
    ds, gt = generate(spec)
    out = Path(args.out)
    ds.to_csv(out)
    truth = gt.to_dict()
    truth["spec"] = spec.to_dict()
    _write_json(out.with_suffix(".truth.json"), truth)
    print(f"wrote {out} ({ds.n} rows) and {out.with_suffix('.truth.json')}")
    return EXIT_OK


def _loss_from_flag(name):
    try:
        return LossSpec(name)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def cmd_fit(args):
    method = _method_name(args.method)
    ds = _read_dataset(args.data, args.pseudo_count)
    kw = {}
    if method in LC_METHODS:
        kw["threshold"] = args.threshold
        kw["loss"] = _loss_from_flag(args.loss)
    elif args.loss != "squared":
        raise ConfigError(f"--loss applies only to log-contrast methods, not {method}")
    fit = fit_method(method, ds, seed=args.seed, **kw)
    _write_json(args.out, fit_to_dict(fit))
    fs = ", ".join(f"{f:.3g}" for f in fit.diagnostics.get("f_stats", []))
    print(f"{fit.method}: wrote {args.out}; first-stage F = [{fs}]")
    if not fit.converged:
        raise NumericalFailure(f"{fit.method} did not converge; diagnostics written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args):
    fit = fit_from_dict(_read_json(args.fit))
    truth = _read_json(args.truth)
    if "spec" not in truth:
        raise ConfigError("ground-truth JSON lacks the 'spec' block written by `compiv simulate`")
    spec = SimulationSpec.from_dict(truth["spec"])
    gt = GroundTruth.from_dict(truth)
    seed = spec.seed if args.seed is None else args.seed
    xs = interventional_sample(spec, args.m, seed)
    rep = evaluate(fit, gt, xs)
    doc = {k: v for k, v in rep.__dict__.items()}
    doc["method"] = fit.method
    text = json.dumps(doc, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_benchmark(args):
    if args.config:
        cfg = load_experiment_config(_read_json(args.config))
    else:
        doc = {"scenarios": args.presets, "methods": args.methods, "threshold": args.threshold,
               "n_seeds": args.n_seeds, "seed0": args.seed, "m": args.m, "jobs": args.jobs, "n": args.n}
        cfg = load_experiment_config(doc)
    if cfg["n_seeds"] < 2:
        raise ConfigError("--n-seeds must be at least 2")
    kw = {m: {"threshold": cfg["threshold"]} for m in cfg["methods"] if m in LC_METHODS}
    res = benchmark(cfg["specs"], cfg["methods"], cfg["n_seeds"], seed0=cfg["seed0"], m=cfg["m"],
                    jobs=args.jobs if args.jobs > 1 else cfg["jobs"], method_kwargs=kw)
    outputs = dict(cfg["outputs"])
    for key in ("csv", "jsonl", "text"):
        if getattr(args, f"out_{key}", None):
            outputs[key] = getattr(args, f"out_{key}")
    if "csv" in outputs:
        Path(outputs["csv"]).write_text(res.to_csv())
    if "jsonl" in outputs:
        Path(outputs["jsonl"]).write_text(res.to_jsonl())
    if "text" in outputs:
        Path(outputs["text"]).write_text(res.to_text())
    sys.stdout.write(res.to_text())
    return EXIT_OK


def cmd_diversity_iv(args):
    if args.counts_csv:
        ds = ingest_real(args.counts_csv, args.instrument_col, args.outcome_col, pseudo_count=args.pseudo_count)
    elif args.data:
        ds = _read_dataset(args.data)
    else:
        raise ConfigError("give --data or --counts-csv")
    doc = {}
    for measure in args.measure:
        fit = fit_diversity_iv(ds, measure, args.method, seed=args.seed)
        doc[measure] = {"method": fit.method, "slope": fit.slope, "intercept": fit.intercept,
                        "f_stats": fit.diagnostics.get("f_stats", [])}
        print(f"{measure:<9} {args.method}: slope {fit.slope:+.4g}")
    if args.out:
        _write_json(args.out, doc)
    return EXIT_OK


def cmd_ingest(args):
    ds = ingest_real(args.counts_csv, args.instrument_col, args.outcome_col, binary=args.binary,
                     pseudo_count=args.pseudo_count)
    ds.to_csv(args.out)
    print(f"wrote {args.out}: {ds.n} samples, {ds.p} taxa")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    seed = _default_seed()
    parser = argparse.ArgumentParser(prog="compiv", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset and its ground truth")
    p.add_argument("--preset", help=f"one of: {', '.join(preset_names())}")
    p.add_argument("--config", help="SimulationSpec JSON file (instead of a preset)")
    p.add_argument("--setting", choices=["A", "A_weak", "A_nonlinear", "B"])
    p.add_argument("--p", type=int)
    p.add_argument("--q", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default="data.csv", help="CSV path; ground truth goes to <out>.truth.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one estimator to a dataset CSV")
    p.add_argument("--method", required=True, choices=sorted(METHOD_FLAGS))
    p.add_argument("--data", required=True)
    p.add_argument("--pseudo-count", type=float, default=None,
                   help="treat x columns as counts and add this before closing")
    p.add_argument("--threshold", type=float, default=0.7,
                   help="stability-selection threshold (0.65 is a sensible choice for noisy real data)")
    p.add_argument("--loss", default="squared", choices=["squared", "huber", "squared_hinge", "huberized_hinge"])
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out", default="fit.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", help="score a fit against simulated ground truth")
    p.add_argument("--fit", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--m", type=int, default=250, help="interventional samples")
    p.add_argument("--seed", type=int, default=None, help="intervention seed (default: dataset seed)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run methods over presets and seeds")
    p.add_argument("--config", help="experiment JSON (scenarios, methods, n_seeds, ...)")
    p.add_argument("--presets", nargs="+", default=["A-p3"])
    p.add_argument("--methods", nargs="+", default=["ilr-lc", "only-lc"])
    p.add_argument("--n-seeds", type=int, default=2)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, default=250)
    p.add_argument("--threshold", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=seed, help="first seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-csv")
    p.add_argument("--out-jsonl")
    p.add_argument("--out-text")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("diversity-iv", help="IV effect of a scalar diversity index")
    p.add_argument("--data", help="dataset CSV (z_*, x_*, y)")
    p.add_argument("--counts-csv", help="per-sample count table, as for `ingest`")
    p.add_argument("--instrument-col", default="z")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--pseudo-count", type=float, default=0.5)
    p.add_argument("--measure", nargs="+", default=["shannon", "simpson"],
                   choices=["shannon", "simpson", "richness"])
    p.add_argument("--method", default="2sls", choices=["2sls", "kiv"])
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diversity_iv)

    p = sub.add_parser("ingest", help="convert a count table to a dataset CSV")
    p.add_argument("--counts-csv", required=True)
    p.add_argument("--instrument-col", required=True)
    p.add_argument("--outcome-col", required=True)
    p.add_argument("--binary", action="store_true", help="split the outcome at its mean into -1/+1")
    p.add_argument("--pseudo-count", type=float, default=0.5)
    p.add_argument("--out", default="data.csv")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None):
    try:
        parser = build_parser()
    except ConfigError as err:
        print(f"compiv: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad flags, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"compiv: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, RankDeficientError, UnderIdentifiedError, DirichletConvergenceError,
            np.linalg.LinAlgError, FloatingPointError) as err:
        print(f"compiv: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
