"""Command-line entry point: ``concordia {estimate,auc-curve,simulate,truth,compare}``.

Every command accepts ``--config file.toml``; keys mirror the long flags
(``bootstrap = 200``, ``min-node = 15``) either at top level or inside a
table named after the subcommand. Exit codes: 2 invalid input, 3 model
fitting failure, 4 degenerate estimand.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import load_csv
from .discrimination import CORRECTION_FACTOR
from .exceptions import ConcordiaError, DataValidationError, DegenerateEstimandError, FitError
from .forest import ForestParams

log = logging.getLogger("concordia")

EXIT_VALIDATION, EXIT_FIT, EXIT_DEGENERATE = 2, 3, 4
MEASURE_KEYS = {"k": "K", "c": "C", "auc": "AUC"}
MEASURE_TAGS = {"K": "K_tau", "C": "C_tau", "AUC": "AUC_t"}


class UsageError(DataValidationError):
    pass


# --------------------------------------------------------------------------
# argument parsing

def _float_list(text):
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(float(v)) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [v for v in str(text).replace(" ", "").split(",") if v]


def _count(text):
    v = float(text)
    if v != int(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return int(v)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="TOML file whose keys mirror these flags")
    p.add_argument("--seed", type=int, default=0, help="master random seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: $CONCORDIA_THREADS or all cores)")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _data_args(p):
    p.add_argument("data", help="CSV file with a header row")
    p.add_argument("--time-col", default="time")
    p.add_argument("--event-col", default="event")
    p.add_argument("--covariates", type=_str_list, default=None,
                   help="comma-separated covariate columns (default: all others)")
    p.add_argument("--tau", type=float, required=False, default=None, help="truncation horizon")


def _correction_args(p):
    p.add_argument("--correction-factor", type=float, default=CORRECTION_FACTOR,
                   help="weight on the influence-function correction (default: the displayed "
                        "half weight)")
    p.add_argument("--correction-factor-one", action="store_true",
                   help="full first-order correction (same as --correction-factor 1)")


def _factor(args):
    return 1.0 if args.correction_factor_one else args.correction_factor


def _model_args(p):
    p.add_argument("--method", default="onestep", choices=["onestep", "gh", "ipcw-uno", "ipcw-cox"])
    p.add_argument("--nuisance", default="cox", choices=["cox", "forest"])
    p.add_argument("--crossfit", type=_count, default=0, help="number of folds (0 = off)")
    p.add_argument("--link", default="cloglog", choices=["cloglog", "identity", "logit"])
    _correction_args(p)
    p.add_argument("--oob", action="store_true",
                   help="out-of-bag forest predictions for the training rows")
    p.add_argument("--trees", type=_count, default=500)
    p.add_argument("--mtry", type=_count, default=None)
    p.add_argument("--min-node", type=_count, default=15)
    p.add_argument("--sample-fraction", type=float, default=0.5)
    p.add_argument("--bootstrap", type=_count, default=0, help="bootstrap replicates (0 = none)")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--interval", default="wald", choices=["wald", "percentile"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="concordia", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate K_tau, C_tau or AUC_t on a dataset")
    _data_args(p)
    _model_args(p)
    p.add_argument("--measure", default="c", choices=sorted(MEASURE_KEYS))
    p.add_argument("--t", type=float, default=None, help="AUC evaluation time (default tau)")
    p.add_argument("--horizon", type=float, default=None,
                   help="time at which the scoring-rule coefficient is estimated")
    p.add_argument("--out", default=None, help="JSON output file (default stdout)")
    _common(p)

    p = sub.add_parser("auc-curve", help="AUC_t over a grid of times, as CSV")
    _data_args(p)
    _model_args(p)
    p.add_argument("--t-grid", type=_float_list, required=False, default=None)
    p.add_argument("--freeze-beta", type=float, default=None,
                   help="estimate the coefficient once at this time instead of per t")
    p.add_argument("--out", required=False, default=None)
    _common(p)

    p = sub.add_parser("simulate", help="run a simulation experiment")
    p.add_argument("--scenario", type=_int_list, default=[1])
    p.add_argument("--n", type=_int_list, default=[300])
    p.add_argument("--reps", type=_count, default=100)
    p.add_argument("--estimators", type=_str_list, default=["onestep-cox"])
    p.add_argument("--bootstrap", type=_count, default=0)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--lambda-c", type=_float_list, default=[1.0])
    p.add_argument("--truth-mc", type=float, default=1e6)
    _correction_args(p)
    p.add_argument("--trees", type=_count, default=500)
    p.add_argument("--out", required=False, default=None)
    _common(p)

    p = sub.add_parser("truth", help="Monte-Carlo truth of the three measures")
    p.add_argument("--scenario", type=int, choices=[1, 2, 3], default=1)
    p.add_argument("--mc", type=float, default=1e6, help="simulated subjects")
    p.add_argument("--pairs", type=float, default=1e7, help="random pairs")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--out", default=None)
    _common(p)

    p = sub.add_parser("compare", help="paired bootstrap contrast of two scoring rules")
    _data_args(p)
    _model_args(p)
    p.add_argument("--covariates-a", type=_str_list, required=False, default=None)
    p.add_argument("--covariates-b", type=_str_list, required=False, default=None)
    p.add_argument("--measure", default="c", choices=sorted(MEASURE_KEYS))
    p.add_argument("--t", type=float, default=None)
    p.add_argument("--out", default=None)
    _common(p)
    for action in sub.choices.values():
        action.set_defaults(bootstrap=action.get_default("bootstrap"))
    sub.choices["compare"].set_defaults(bootstrap=200)
    return parser


def _load_config(path, command, parser_for_cmd):
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    values = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    values.update(doc.get(command, {}))
    dests = {a.dest: a for a in parser_for_cmd._actions}
    out = {}
    for key, val in values.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        action = dests[dest]
        if isinstance(val, list):
            val = ",".join(str(v) for v in val)
        if action.type is not None and isinstance(val, str):
            val = action.type(val)
        elif action.type is not None and not isinstance(val, (bool, list)):
            val = action.type(str(val)) if action.type in (_float_list, _int_list, _str_list) \
                else action.type(val)
        if action.choices is not None and val not in action.choices:
            raise UsageError(f"config {key}={val!r} not in {sorted(map(str, action.choices))}")
        out[dest] = val
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        cfg = _load_config(args.config, args.command, sub)
        sub.set_defaults(**cfg)
        # positional arguments can come from the config file as well
        args = parser.parse_args(argv)
    return args


# --------------------------------------------------------------------------
# helpers

def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def manifest(args, argv, extra=None) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    doc = {
        "command": "concordia " + " ".join(argv),
        "config": _jsonable(cfg),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    data = getattr(args, "data", None)
    if data:
        doc["input_sha256"] = _file_digest(data)
    if extra:
        doc.update(extra)
    return doc


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return None if not math.isfinite(float(v)) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _emit_json(doc, out):
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=False)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _write_manifest_beside(out, doc):
    p = Path(out)
    _emit_json(doc, p.with_name(p.name + ".manifest.json"))


def _load(args):
    if args.tau is None:
        raise UsageError("--tau is required")
    if args.covariates is None:
        with open(args.data, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        args.covariates = [h.strip() for h in header
                           if h.strip() not in (args.time_col, args.event_col)]
    return load_csv(args.data, args.time_col, args.event_col, args.covariates, args.tau)


def _spec(args, measures, covariates=None):
    from .inference import EstimatorSpec
    factor = _factor(args)
    forest = ForestParams(args.trees, args.mtry, args.min_node, args.sample_fraction)
    return EstimatorSpec(method=args.method, nuisance=args.nuisance, crossfit=args.crossfit,
                         horizon=args.tau, t=getattr(args, "t", None), link=args.link,
                         correction_factor=factor, forest=forest, covariates=covariates,
                         measures=tuple(measures), oob=args.oob,
                         beta_horizon=getattr(args, "horizon", None))


def _check_method_measure(method, measure):
    from .competitors import COMPETITOR_MEASURES
    if method in COMPETITOR_MEASURES and measure not in COMPETITOR_MEASURES[method]:
        raise UsageError(f"--method {method} does not define --measure {measure.lower()}")


# --------------------------------------------------------------------------
# commands

def cmd_estimate(args, argv):
    measure = MEASURE_KEYS[args.measure]
    _check_method_measure(args.method, measure)
    data = _load(args)
    spec = _spec(args, (measure,))
    t = args.tau if args.t is None else args.t
    horizon = args.tau if measure in ("K", "C") else t
    report = {"measure": MEASURE_TAGS[measure], "method": spec.label, "horizon": horizon,
              "n": data.n, "events": int(data.event.sum())}
    seed_point = int(np.random.SeedSequence(args.seed).spawn(2)[0].generate_state(1)[0])
    est, beta = spec.estimates(data, seed_point)
    e = est[measure]
    if beta is None:
        report.update({"point": e, "plugin": None, "correction": None, "s_hat": None})
    else:
        names = data.covariate_names if spec.covariates is None else spec.covariates
        report.update({"point": e.point, "plugin": e.plugin, "correction": e.correction,
                       "s_hat": e.s_hat, "n_pairs": e.n_pairs,
                       "beta": dict(zip(names, beta.coefficients.tolist())),
                       "beta_horizon": beta.horizon})
    report["se"] = None
    report["ci"] = None
    if args.bootstrap:
        from .inference import bootstrap
        res = bootstrap(spec, data, args.bootstrap, args.seed, args.level, args.threads,
                        args.interval, measure)
        if not np.isclose(res.point, report["point"], rtol=0, atol=1e-12):
            raise FitError("bootstrap point estimate disagrees with the direct estimate")
        report["se"] = res.se
        report["ci"] = [res.ci_lower, res.ci_upper]
        report["bootstrap"] = res.to_dict()
    report["manifest"] = manifest(args, argv)
    _emit_json(report, args.out)
    return 0


def cmd_auc_curve(args, argv):
    _check_method_measure(args.method, "AUC")
    if not args.out:
        raise UsageError("--out is required for auc-curve")
    if not args.t_grid:
        raise UsageError("--t-grid is required")
    data = _load(args)
    from .inference import bootstrap
    rows = []
    for i, t in enumerate(args.t_grid):
        spec = replace(_spec(args, ("AUC",)), t=float(t), freeze_beta=args.freeze_beta is not None)
        if args.freeze_beta is not None:
            spec = replace(spec, horizon=args.tau)
        row = {"t": float(t), "auc": float("nan"), "ci_lower": float("nan"),
               "ci_upper": float("nan"), "se": float("nan"), "error": ""}
        try:
            if not 0 < t <= args.tau:
                raise UsageError(f"t={t} outside (0, tau]")
            seed_t = args.seed + i
            if args.bootstrap:
                res = bootstrap(spec, data, args.bootstrap, seed_t, args.level, args.threads,
                                args.interval, "AUC")
                row.update(auc=res.point, se=res.se, ci_lower=res.ci_lower, ci_upper=res.ci_upper)
            else:
                sp = int(np.random.SeedSequence(seed_t).spawn(2)[0].generate_state(1)[0])
                row["auc"] = spec.evaluate(data, sp)["AUC"]
        except (DataValidationError, FitError, DegenerateEstimandError) as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in r.items()})
    _write_manifest_beside(out, manifest(args, argv))
    return 0


def cmd_truth(args, argv):
    from .simlab import truth
    tv = truth(args.scenario, args.horizon, int(args.mc), int(args.pairs), seed=args.seed)
    doc = tv.to_dict()
    doc["manifest"] = manifest(args, argv)
    _emit_json(doc, args.out)
    return 0


def cmd_simulate(args, argv):
    from .inference import ESTIMATOR_NAMES, resolve_threads
    from .simlab import ExperimentPlan, run_experiment, truth
    if not args.out:
        raise UsageError("--out is required for simulate")
    for e in args.estimators:
        if e not in ESTIMATOR_NAMES:
            raise UsageError(f"unknown estimator {e!r}; choose from {', '.join(ESTIMATOR_NAMES)}")
    for s in args.scenario:
        if s not in (1, 2, 3):
            raise UsageError("scenario must be 1, 2 or 3")
    truths = {}
    for s in args.scenario:
        # Scenario 3 truth does not depend on the censoring rate
        truths[s] = truth(s, mc_size=int(args.truth_mc), n_pairs=min(10 ** 7, 10 * int(args.truth_mc)))
    plan = ExperimentPlan(tuple(args.scenario), tuple(args.n), tuple(args.estimators), args.reps,
                          args.bootstrap, args.seed, tuple(args.lambda_c), args.level, truths,
                          _factor(args), args.trees)
    run_experiment(plan, args.out, n_jobs=resolve_threads(args.threads))
    _write_manifest_beside(Path(args.out), manifest(args, argv, {
        "truth": {str(s): {"K": t.K, "C": t.C, "AUC": t.AUC} for s, t in truths.items()}}))
    return 0


def cmd_compare(args, argv):
    measure = MEASURE_KEYS[args.measure]
    _check_method_measure(args.method, measure)
    if not args.covariates_a or not args.covariates_b:
        raise UsageError("--covariates-a and --covariates-b are required")
    if args.covariates is None:
        args.covariates = sorted(set(args.covariates_a) | set(args.covariates_b),
                                 key=(list(args.covariates_a) + list(args.covariates_b)).index)
    data = _load(args)
    from .inference import contrast
    a = _spec(args, (measure,), tuple(args.covariates_a))
    b = _spec(args, (measure,), tuple(args.covariates_b))
    res = contrast(a, b, data, max(args.bootstrap, 2), args.seed, args.level, args.threads, measure)
    doc = {"measure": MEASURE_TAGS[measure], "rule_a": list(args.covariates_a),
           "rule_b": list(args.covariates_b), **res.to_dict(), "manifest": manifest(args, argv)}
    _emit_json(doc, args.out)
    return 0


COMMANDS = {"estimate": cmd_estimate, "auc-curve": cmd_auc_curve, "simulate": cmd_simulate,
            "truth": cmd_truth, "compare": cmd_compare}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"concordia: error: {exc}\n")
        return EXIT_VALIDATION
    except SystemExit as exc:  # argparse usage errors, --help, --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except DegenerateEstimandError as exc:
        sys.stderr.write(f"concordia: degenerate estimand ({type(exc).__name__}): {exc}\n")
        return EXIT_DEGENERATE
    except FitError as exc:
        sys.stderr.write(f"concordia: fit failure ({type(exc).__name__}): {exc}\n")
        return EXIT_FIT
    except (DataValidationError, ValueError, OSError) as exc:
        sys.stderr.write(f"concordia: invalid input ({type(exc).__name__}): {exc}\n")
        return EXIT_VALIDATION
    except ConcordiaError as exc:
        sys.stderr.write(f"concordia: error ({type(exc).__name__}): {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
