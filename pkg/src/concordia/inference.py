"""Estimator specifications, the full-pipeline bootstrap, cross-fitting and
paired contrasts of two scoring rules.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .core import Dataset
from .discrimination import CORRECTION_FACTOR
from .exceptions import ConcordiaError, DataValidationError
from .forest import ForestParams

__all__ = [
    "EstimatorSpec",
    "BootstrapResult",
    "ContrastResult",
    "bootstrap",
    "bootstrap_multi",
    "crossfit_wrap",
    "contrast",
    "resolve_threads",
    "ESTIMATOR_NAMES",
]

log = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("onestep-cox", "onestep-rf", "onestep-rf-cf", "gh", "ipcw-uno", "ipcw-cox")
MEASURES = ("K", "C", "AUC")
#: failure fraction above which a bootstrap result is flagged as degraded
MAX_FAILURE_RATE = 0.05


def resolve_threads(threads=None) -> int:
    """``threads`` if given, else ``$CONCORDIA_THREADS``, else all cores."""
    if threads is None:
        env = os.environ.get("CONCORDIA_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise DataValidationError(f"CONCORDIA_THREADS={env!r} is not an integer") from None
    if threads is None:
        threads = os.cpu_count() or 1
    return max(1, int(threads))


@dataclass(frozen=True)
class EstimatorSpec:
    """Everything needed to rerun one estimator on a resample.

    ``method`` is ``onestep`` or a competitor name; ``horizon`` is tau and
    ``t`` the AUC time (default tau). With ``t != horizon`` the AUC uses a
    scoring rule re-estimated at ``t`` unless ``freeze_beta`` is set.
    """

    method: str = "onestep"
    nuisance: str = "cox"
    crossfit: int = 0
    horizon: float | None = None
    t: float | None = None
    link: str = "cloglog"
    correction_factor: float = CORRECTION_FACTOR
    forest: ForestParams = field(default_factory=ForestParams)
    covariates: tuple | None = None
    measures: tuple = MEASURES
    freeze_beta: bool = False
    oob: bool = False
    beta_horizon: float | None = None

    def __post_init__(self):
        if self.method not in ("onestep", "gh", "ipcw-uno", "ipcw-cox"):
            raise DataValidationError(f"unknown method {self.method!r}")
        if self.nuisance not in ("cox", "forest"):
            raise DataValidationError(f"unknown nuisance {self.nuisance!r}")
        if self.crossfit == 1 or self.crossfit < 0:
            raise DataValidationError("crossfit must be 0 (off) or K >= 2")
        from .competitors import COMPETITOR_MEASURES
        allowed = COMPETITOR_MEASURES.get(self.method, MEASURES)
        bad = [m for m in self.measures if m not in allowed]
        if bad:
            raise DataValidationError(f"method {self.method} does not estimate {bad}")

    @classmethod
    def from_name(cls, name, horizon=None, correction_factor=CORRECTION_FACTOR, forest_trees=500, **kw):
        from .competitors import COMPETITOR_MEASURES
        if name in COMPETITOR_MEASURES:
            return cls(method=name, horizon=horizon, measures=COMPETITOR_MEASURES[name], **kw)
        table = {"onestep-cox": ("cox", 0), "onestep-rf": ("forest", 0),
                 "onestep-rf-cf": ("forest", 5)}
        if name not in table:
            raise DataValidationError(f"unknown estimator {name!r}; choose from {ESTIMATOR_NAMES}")
        nuisance, cf = table[name]
        return cls(nuisance=nuisance, crossfit=cf, horizon=horizon,
                   correction_factor=correction_factor,
                   forest=ForestParams(num_trees=forest_trees), **kw)

    @property
    def label(self) -> str:
        if self.method != "onestep":
            return self.method
        base = "onestep-" + ("rf" if self.nuisance == "forest" else "cox")
        return base + (f"-cf{self.crossfit}" if self.crossfit else "")

    def _prepare(self, data: Dataset) -> Dataset:
        if self.covariates is not None:
            data = data.select(self.covariates)
        tau = data.tau if self.horizon is None else float(self.horizon)
        if tau != data.tau:
            data = data.with_tau(tau)
        # canonical row order makes seeded fits independent of input order
        return data.subset(data.canonical_order())

    def evaluate(self, data: Dataset, seed=None) -> dict:
        """Point estimates ``{measure: value}`` on ``data``."""
        est, _ = self.estimates(data, seed)
        return {m: (e if isinstance(e, float) else e.point) for m, e in est.items()}

    def estimates(self, data: Dataset, seed=None) -> dict:
        """``({measure: DiscriminationEstimate}, beta)``.

        Competitors give plain floats and ``beta=None``.
        """
        data = self._prepare(data)
        tau = data.tau
        t = tau if self.t is None else float(self.t)
        if self.method != "onestep":
            return {m: float(v) for m, v in self._competitor(data, tau, t).items()}, None
        from .discrimination import (estimate_AUC_t, estimate_C_tau, estimate_K_tau,
                                     compute_dl_matrix, fit_bundle)
        kw = dict(nuisance=self.nuisance, crossfit=self.crossfit, seed=seed,
                  forest_params=self.forest, link=self.link, oob=self.oob)
        bh = self.beta_horizon
        out = {}
        bundle = None
        if "K" in self.measures or "C" in self.measures or (t == tau and "AUC" in self.measures):
            bundle = fit_bundle(data, horizon=tau, beta_horizon=bh, **kw)
            dl = compute_dl_matrix(data, bundle)
            if "K" in self.measures or "C" in self.measures:
                K = estimate_K_tau(data, bundle, tau, self.correction_factor, dl)
                if "K" in self.measures:
                    out["K"] = K
                if "C" in self.measures:
                    out["C"] = estimate_C_tau(data, bundle, tau, self.correction_factor, K)
        if "AUC" in self.measures:
            if t == tau and bundle is not None:
                b, dl_t = bundle, dl
            elif self.freeze_beta:
                b = fit_bundle(data, horizon=tau, beta_horizon=bh, **kw)
                dl_t = compute_dl_matrix(data, b)
            else:
                b = fit_bundle(data, horizon=t, beta_horizon=t if bh is None else bh, **kw)
                dl_t = compute_dl_matrix(data, b)
            out["AUC"] = estimate_AUC_t(data, b, t, self.correction_factor, dl_t)
            bundle = b
        return {m: out[m] for m in self.measures}, bundle.beta

    def _competitor(self, data, tau, t):
        from .competitors import evaluate_competitor
        out = {}
        conc = [m for m in self.measures if m in ("K", "C")]
        if conc:
            res = evaluate_competitor(self.method, data, tau)
            out.update({m: res[m] for m in conc})
        if "AUC" in self.measures:
            d_t = data if t == tau else data.with_tau(t)
            out["AUC"] = evaluate_competitor(self.method, d_t, t)["AUC"]
        return out


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci_lower: float
    ci_upper: float
    replicates: int
    failures: int
    level: float
    degraded: bool = False
    interval: str = "wald"

    def to_dict(self):
        return {"point": self.point, "se": self.se, "ci": [self.ci_lower, self.ci_upper],
                "replicates": self.replicates, "failures": self.failures, "level": self.level,
                "degraded": self.degraded}


@dataclass(frozen=True)
class ContrastResult:
    delta: float
    se: float
    ci_lower: float
    ci_upper: float
    replicates: int
    failures: int
    level: float
    paired: bool = True
    point_a: float = float("nan")
    point_b: float = float("nan")

    def to_dict(self):
        return {"delta": self.delta, "se": self.se, "ci": [self.ci_lower, self.ci_upper],
                "replicates": self.replicates, "failures": self.failures, "level": self.level,
                "paired": self.paired, "point_a": self.point_a, "point_b": self.point_b}


def _replicate_seeds(seed, B):
    """Per-replicate ``(resample, estimator)`` seed sequences."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [tuple(c.spawn(2)) for c in ss.spawn(B)]


def _run_replicates(fn, data, B, seed, n_jobs):
    from joblib import Parallel, delayed
    base = data.subset(data.canonical_order())
    seeds = _replicate_seeds(seed, B)
    jobs = resolve_threads(n_jobs)
    if jobs == 1:
        return [_one_replicate(fn, base, s) for s in seeds]
    return Parallel(n_jobs=jobs)(delayed(_one_replicate)(fn, base, s) for s in seeds)


def _one_replicate(fn, base: Dataset, seeds):
    s_idx, s_est = seeds
    idx = np.random.default_rng(s_idx).integers(0, base.n, base.n)
    try:
        res = base.subset(idx)
        return fn(res, int(s_est.generate_state(1)[0]))
    except (ConcordiaError, np.linalg.LinAlgError) as exc:
        log.debug("bootstrap replicate failed: %s", exc)
        return None


def _interval(point, values, level, interval):
    z = norm.ppf(0.5 + level / 2)
    if len(values) < 2:
        se = float("nan")
    elif np.all(values == values[0]):
        se = 0.0  # np.std rounds a constant to ~1e-17
    else:
        se = float(np.std(values, ddof=1))
    if interval == "percentile":
        lo, hi = np.quantile(values, [0.5 - level / 2, 0.5 + level / 2])
        return se, float(lo), float(hi)
    if interval != "wald":
        raise DataValidationError("interval must be 'wald' or 'percentile'")
    return se, float(point - z * se), float(point + z * se)


def bootstrap_multi(spec: EstimatorSpec, data: Dataset, B=200, seed=None, level=0.95,
                    n_jobs=1, interval="wald") -> dict:
    """Nonparametric bootstrap of every measure of ``spec`` (full refit per replicate)."""
    if B < 2:
        raise DataValidationError("need B >= 2 bootstrap replicates")
    if B < 50:
        log.warning("B=%d bootstrap replicates is below the recommended 50", B)
    seed_point, seed_boot = np.random.SeedSequence(seed).spawn(2)
    point = spec.evaluate(data, int(seed_point.generate_state(1)[0]))
    reps = _run_replicates(spec.evaluate, data, B, seed_boot, n_jobs)
    out = {}
    for m, p in point.items():
        vals = np.array([r[m] for r in reps if r is not None and np.isfinite(r[m])])
        fails = B - len(vals)
        se, lo, hi = _interval(p, vals, level, interval)
        out[m] = BootstrapResult(float(p), se, lo, hi, B, fails, level,
                                 fails / B > MAX_FAILURE_RATE, interval)
    return out


def bootstrap(spec, data: Dataset, B=200, seed=None, level=0.95, n_jobs=1,
              interval="wald", measure=None) -> BootstrapResult:
    """Bootstrap one measure.

    ``spec`` is an :class:`EstimatorSpec` or any callable ``f(data, seed) -> float``.
    """
    if callable(spec) and not isinstance(spec, EstimatorSpec):
        fn = spec
        seed_point, seed_boot = np.random.SeedSequence(seed).spawn(2)
        p = float(fn(data, int(seed_point.generate_state(1)[0])))
        reps = _run_replicates(lambda d, s: {"x": fn(d, s)}, data, B, seed_boot, n_jobs)
        vals = np.array([r["x"] for r in reps if r is not None and np.isfinite(r["x"])])
        fails = B - len(vals)
        se, lo, hi = _interval(p, vals, level, interval)
        return BootstrapResult(p, se, lo, hi, B, fails, level, fails / B > MAX_FAILURE_RATE,
                               interval)
    measure = measure or spec.measures[0]
    single = replace(spec, measures=(measure,))
    return bootstrap_multi(single, data, B, seed, level, n_jobs, interval)[measure]


def crossfit_wrap(spec: EstimatorSpec, K: int, data: Dataset | None = None,
                  seed=None) -> EstimatorSpec:
    """The same estimator with nuisances fitted out-of-fold over ``K`` folds.

    Fold assignment is derived from the seed passed to ``evaluate``.
    """
    if K < 2:
        raise DataValidationError("cross-fitting needs K >= 2")
    if spec.method != "onestep":
        raise DataValidationError("cross-fitting applies to the one-step estimators only")
    if data is not None and K > data.n:
        raise DataValidationError(f"K={K} exceeds n={data.n}")
    return replace(spec, crossfit=int(K))


def contrast(spec_a: EstimatorSpec, spec_b: EstimatorSpec, data: Dataset, B=200, seed=None,
             level=0.95, n_jobs=1, measure=None) -> ContrastResult:
    """Paired bootstrap of ``measure(A) - measure(B)`` on shared resamples."""
    measure = measure or spec_a.measures[0]
    if measure not in spec_a.measures or measure not in spec_b.measures:
        raise DataValidationError(f"both specs must estimate {measure}")
    ha = spec_a.horizon if spec_a.horizon is not None else data.tau
    hb = spec_b.horizon if spec_b.horizon is not None else data.tau
    if ha != hb or spec_a.t != spec_b.t:
        raise DataValidationError("both specs must target the same horizon")
    a = replace(spec_a, measures=(measure,))
    b = replace(spec_b, measures=(measure,))

    def both(d, s):
        return {"a": a.evaluate(d, s)[measure], "b": b.evaluate(d, s)[measure]}

    seed_point, seed_boot = np.random.SeedSequence(seed).spawn(2)
    p = both(data, int(seed_point.generate_state(1)[0]))
    delta = p["a"] - p["b"]
    reps = _run_replicates(both, data, B, seed_boot, n_jobs)
    diffs = np.array([r["a"] - r["b"] for r in reps
                      if r is not None and np.isfinite(r["a"]) and np.isfinite(r["b"])])
    fails = B - len(diffs)
    se, lo, hi = _interval(delta, diffs, level, "wald")
    return ContrastResult(float(delta), se, lo, hi, B, fails, level, True, p["a"], p["b"])
