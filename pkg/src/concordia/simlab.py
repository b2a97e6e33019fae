"""Simulation scenarios, the Monte-Carlo truth oracle and the experiment runner.

Weibull proportional hazards are read in the rate form
``Lambda(t|x) = (t / lambda)^k exp(beta'x)`` with ``lambda`` entering as
``(lambda t)^k``; that reading reproduces the published truth values, while
the scale reading places the horizon far in the tail (survival ~ 0).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Dataset
from .discrimination import CORRECTION_FACTOR

__all__ = [
    "ScenarioConfig",
    "generate",
    "TruthValues",
    "truth",
    "population_beta",
    "true_survival",
    "ExperimentPlan",
    "run_experiment",
    "summarize",
    "brain_like",
    "DEFAULT_HORIZON",
]

log = logging.getLogger(__name__)

LOG_HALF, LOG_TWO = math.log(0.5), math.log(2.0)

DEFAULT_HORIZON = {1: 8.0, 2: 8.0, 3: 1.0}

# scenario parameters
WEIBULL = dict(k=2.0, lam=0.1, beta=(LOG_HALF, LOG_TWO))
CENS_1 = dict(k=1.0, lam=0.1, gamma=(math.log(0.25), math.log(0.75)))
CENS_2 = dict(k=1.0, lam=0.1, gamma=(math.log(1.5), math.log(2.0), math.log(0.25),
                                     math.log(0.75), math.log(0.25)))
SCEN_3 = dict(k0=1.0, k1=2.0, lam=1.0, beta0=LOG_HALF, beta1=0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int
    n: int
    seed: int | None = None
    lambda_C: float = 1.0
    tau: float | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in (1, 2, 3):
            raise ValueError("scenario must be 1, 2 or 3")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.lambda_C > 0:
            raise ValueError("lambda_C must be positive")
        unknown = set(self.overrides) - {"beta", "censoring", "k", "lam"}
        if unknown:
            raise ValueError(f"unknown overrides {sorted(unknown)}")

    @property
    def horizon(self) -> float:
        return DEFAULT_HORIZON[self.scenario] if self.tau is None else float(self.tau)

    def metadata(self) -> dict:
        d = asdict(self)
        d["horizon"] = self.horizon
        return d


def _weibull_ph(E, lp, k, lam):
    # (lam t)^k exp(lp) = E
    return (E * np.exp(-lp)) ** (1.0 / k) / lam


def _event_times(scenario, x1, x2, E, overrides):
    if scenario in (1, 2):
        beta = overrides.get("beta", WEIBULL["beta"])
        lp = beta[0] * x1 + beta[1] * x2
        return _weibull_ph(E, lp, overrides.get("k", WEIBULL["k"]),
                           overrides.get("lam", WEIBULL["lam"]))
    p = SCEN_3
    t0 = _weibull_ph(E, p["beta0"] * x2, p["k0"], p["lam"])
    t1 = _weibull_ph(E, p["beta1"] * x2, p["k1"], p["lam"])
    return np.where(x1 == 1, t1, t0)


def _censoring_times(config, x1, x2, E):
    if config.overrides.get("censoring") == "none":
        return np.full(len(x1), np.inf)
    if config.scenario == 1:
        g = CENS_1["gamma"]
        return _weibull_ph(E, g[0] * x1 + g[1] * x2, CENS_1["k"], CENS_1["lam"])
    if config.scenario == 2:
        g = CENS_2["gamma"]
        lp = g[0] * x1 + g[1] * x2 + g[2] * x1 * x2 + g[3] * x2 ** 2 + g[4] * x1 * x2 ** 2
        return _weibull_ph(E, lp, CENS_2["k"], CENS_2["lam"])
    return E / config.lambda_C


def _covariates(rng, n):
    x1 = rng.binomial(1, 0.5, n).astype(float)
    x2 = rng.standard_normal(n)
    return x1, x2


def generate(config: ScenarioConfig) -> Dataset:
    """Draw ``(min(T, C), I(T <= C), X1, X2)`` for one scenario."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    x1, x2 = _covariates(rng, n)
    T = _event_times(config.scenario, x1, x2, rng.exponential(size=n), config.overrides)
    C = _censoring_times(config, x1, x2, rng.exponential(size=n))
    time = np.minimum(T, C)
    event = (T <= C).astype(int)
    return Dataset(time, event, np.column_stack([x1, x2]), ("x1", "x2"), config.horizon,
                   validate=bool(np.any(event[time <= config.horizon])))


def true_cumhaz(scenario, t, x1, x2):
    """Analytic ``Lambda(t|x)`` of the event-time model."""
    t = np.asarray(t, dtype=float)
    if scenario in (1, 2):
        lp = WEIBULL["beta"][0] * x1 + WEIBULL["beta"][1] * x2
        return (WEIBULL["lam"] * t) ** WEIBULL["k"] * np.exp(lp)
    p = SCEN_3
    h0 = (p["lam"] * t) ** p["k0"] * np.exp(p["beta0"] * x2)
    h1 = (p["lam"] * t) ** p["k1"] * np.exp(p["beta1"] * x2)
    return np.where(np.asarray(x1) == 1, h1, h0)


def true_survival(scenario, t, x1, x2):
    return np.exp(-true_cumhaz(scenario, t, x1, x2))


def population_beta(scenario, horizon, mc_size=10 ** 6, seed=0) -> np.ndarray:
    """Assumption-lean coefficient of the true model under the cloglog link.

    For the proportional-hazards scenarios it equals the generating
    coefficient; otherwise it is the least-squares projection of
    ``log Lambda(t|X)`` on ``X`` over a large covariate sample.
    """
    if scenario in (1, 2):
        return np.array(WEIBULL["beta"])
    rng = np.random.default_rng(seed)
    x1, x2 = _covariates(rng, int(mc_size))
    g = np.log(true_cumhaz(scenario, horizon, x1, x2))
    X = np.column_stack([x1, x2])
    Xc = X - X.mean(axis=0)
    return np.linalg.solve(Xc.T @ Xc, Xc.T @ (g - g.mean()))


@dataclass(frozen=True)
class TruthValues:
    K: float
    C: float
    AUC: float
    mc_size: int
    mc_se: dict
    s_tau: float = float("nan")
    beta: tuple = ()
    scenario: int = 0
    horizon: float = float("nan")
    n_pairs: int = 0

    def to_dict(self):
        return asdict(self)


def _ratio_se(a, b):
    """Delta-method standard error of ``mean(a) / mean(b)`` from iid pair draws."""
    r = a.mean() / b.mean()
    return float(np.sqrt(np.var(a - r * b) / len(a)) / b.mean())


def truth(scenario, horizon=None, mc_size=10 ** 6, n_pairs=10 ** 7, seed=20240901,
          score_beta=None) -> TruthValues:
    """Monte-Carlo truth of ``(K_tau, C_tau, AUC_t)`` with ``tau = t = horizon``.

    ``mc_size`` uncensored subjects are drawn and scored with the population
    coefficient (or ``score_beta``); the measures are estimated on
    ``n_pairs`` random ordered pairs of distinct subjects.
    """
    mc_size = int(mc_size)
    if mc_size < 10 ** 5:
        raise ValueError("mc_size must be at least 1e5")
    horizon = DEFAULT_HORIZON[scenario] if horizon is None else float(horizon)
    ss = np.random.SeedSequence(seed)
    s_data, s_beta, s_pairs = ss.spawn(3)
    rng = np.random.default_rng(s_data)
    x1, x2 = _covariates(rng, mc_size)
    T = _event_times(scenario, x1, x2, rng.exponential(size=mc_size), {})
    beta = (population_beta(scenario, horizon, mc_size, s_beta) if score_beta is None
            else np.asarray(score_beta, dtype=float))
    y = beta[0] * x1 + beta[1] * x2
    prng = np.random.default_rng(s_pairs)
    chunk = 10 ** 6
    conc, higher, comp, auc_num, auc_den = [], [], [], [], []
    left = int(n_pairs)
    while left > 0:
        m = min(chunk, left)
        i = prng.integers(0, mc_size, m)
        j = prng.integers(0, mc_size - 1, m)
        j = j + (j >= i)  # distinct partner
        hi = y[i] > y[j]
        first = (T[i] < T[j]) & (T[i] <= horizon)
        case_control = (T[i] <= horizon) & (T[j] > horizon)
        conc.append(hi & first)
        higher.append(hi)
        comp.append(first)
        auc_num.append(hi & case_control)
        auc_den.append(case_control)
        left -= m
    conc, higher, comp, auc_num, auc_den = (np.concatenate(v).astype(float) for v in
                                            (conc, higher, comp, auc_num, auc_den))
    K = conc.mean() / higher.mean() if higher.any() else 0.0
    C = conc.mean() / comp.mean()
    A = auc_num.mean() / auc_den.mean()
    se = {"K": _ratio_se(conc, higher) if higher.any() else 0.0,
          "C": _ratio_se(conc, comp), "AUC": _ratio_se(auc_num, auc_den)}
    return TruthValues(float(K), float(C), float(A), mc_size, se, float(np.mean(T > horizon)),
                       tuple(float(b) for b in beta), scenario, horizon, int(n_pairs))


# --------------------------------------------------------------------------
# experiment runner

@dataclass(frozen=True)
class ExperimentPlan:
    scenarios: tuple = (1,)
    n_grid: tuple = (300,)
    estimators: tuple = ("onestep-cox",)
    replicates: int = 100
    bootstrap: int = 0
    seed: int = 0
    lambda_C: tuple = (1.0,)
    level: float = 0.95
    truth: dict = field(default_factory=dict)  # {(scenario, lambda_C): TruthValues}
    correction_factor: float = CORRECTION_FACTOR
    forest_trees: int = 500


MEASURES = ("K", "C", "AUC")


def _estimators_for(name):
    from .competitors import COMPETITOR_MEASURES
    if name in COMPETITOR_MEASURES:
        return COMPETITOR_MEASURES[name]
    return MEASURES


def run_replicate(name, data: Dataset, horizon, seed, bootstrap=0, level=0.95,
                  correction_factor=CORRECTION_FACTOR, forest_trees=500):
    """Point estimates (and bootstrap se when requested) of one estimator on one dataset.

    Returns ``{measure: (point, se)}``; measures that fail are absent.
    """
    from .inference import EstimatorSpec, bootstrap_multi
    spec = EstimatorSpec.from_name(name, horizon=horizon, correction_factor=correction_factor,
                                   forest_trees=forest_trees)
    if bootstrap:
        res = bootstrap_multi(spec, data, bootstrap, seed, level)
        return {m: (r.point, r.se) for m, r in res.items()}
    return {m: (v, float("nan")) for m, v in spec.evaluate(data, seed).items()}


def run_experiment(plan: ExperimentPlan, out=None, n_jobs=1, progress=None):
    """Run every (scenario, lambda_C, n, estimator) cell and aggregate.

    Returns ``(summary_rows, raw_rows)``; the long-format summary is written
    to ``out`` when given, with the raw per-replicate estimates beside it.
    """
    from joblib import Parallel, delayed
    from .exceptions import ConcordiaError

    raw = []
    root = np.random.SeedSequence(plan.seed)
    cells = [(s, lc, n) for s in plan.scenarios
             for lc in (plan.lambda_C if s == 3 else (None,)) for n in plan.n_grid]
    cell_seeds = root.spawn(len(cells))

    def one(s, lc, n, r, rs):
        data_seed, est_seed = rs.spawn(2)
        cfg = ScenarioConfig(s, n, int(data_seed.generate_state(1)[0]),
                             lambda_C=lc if lc is not None else 1.0)
        data = generate(cfg)
        out_rows = []
        for name in plan.estimators:
            try:
                res = run_replicate(name, data, cfg.horizon, int(est_seed.generate_state(1)[0]),
                                    plan.bootstrap, plan.level, plan.correction_factor,
                                    plan.forest_trees)
                err = ""
            except ConcordiaError as exc:
                res, err = {}, f"{type(exc).__name__}: {exc}"
            for m in _estimators_for(name):
                point, se = res.get(m, (float("nan"), float("nan")))
                out_rows.append(dict(scenario=s, lambda_C=lc if lc is not None else "",
                                     n=n, replicate=r, estimator=name, measure=m,
                                     estimate=point, se=se, error=err if m not in res else ""))
        return out_rows

    for (s, lc, n), cs in zip(cells, cell_seeds):
        rep_seeds = cs.spawn(plan.replicates)
        results = Parallel(n_jobs=n_jobs)(delayed(one)(s, lc, n, r, rs)
                                          for r, rs in enumerate(rep_seeds))
        for rows in results:
            raw.extend(rows)
        if progress:
            progress(s, lc, n)
    summary = summarize(raw, plan)
    if out is not None:
        out = Path(out)
        _write_rows(out, summary)
        _write_rows(out.with_name(out.stem + "_raw" + out.suffix), raw)
    return summary, raw


def _truth_for(plan, s, lc):
    key = (s, lc if s == 3 else None)
    if key in plan.truth:
        return plan.truth[key]
    if s in plan.truth:
        return plan.truth[s]
    return None


def summarize(raw, plan: ExperimentPlan):
    """Aggregate replicate rows into bias/sd/mean_se/coverage per cell."""
    from scipy.stats import norm
    z = norm.ppf(0.5 + plan.level / 2)
    groups = {}
    for r in raw:
        key = (r["scenario"], r["lambda_C"], r["n"], r["estimator"], r["measure"])
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(v) for v in k)):
        s, lc, n, est, m = key
        vals = np.array([r["estimate"] for r in groups[key]], dtype=float)
        ses = np.array([r["se"] for r in groups[key]], dtype=float)
        ok = np.isfinite(vals)
        tv = _truth_for(plan, s, lc if lc != "" else None)
        true = getattr(tv, m, float("nan")) if tv is not None else float("nan")
        mean = float(np.mean(vals[ok])) if ok.any() else float("nan")
        bias = mean - true
        sd = float(np.std(vals[ok], ddof=1)) if ok.sum() > 1 else float("nan")
        se_ok = ok & np.isfinite(ses)
        mean_se = float(np.mean(ses[se_ok])) if se_ok.any() else float("nan")
        if se_ok.any() and np.isfinite(true):
            cover = np.abs(vals[se_ok] - true) <= z * ses[se_ok]
            coverage = float(cover.mean())
        else:
            coverage = float("nan")
        rows.append(dict(scenario=s, lambda_C=lc, n=n, estimator=est, measure=m, truth=true,
                         mean=mean, bias=bias, sd=sd, mean_se=mean_se, coverage=coverage,
                         replicates=int(ok.sum()), failures=int((~ok).sum()),
                         scaled_bias=bias * math.sqrt(n), scaled_sd=sd * math.sqrt(n)))
    return rows


def _write_rows(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})


# --------------------------------------------------------------------------
# synthetic stand-in for a small clinical study

def brain_like(n=103, seed=0) -> Dataset:
    """Small synthetic cohort with two imaging-style markers and heavy censoring.

    Marker ``a`` is strongly prognostic, ``b`` weakly; event times are
    Weibull with a follow-up of roughly five years.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(n)
    b = 0.5 * a + rng.standard_normal(n) * math.sqrt(0.75)
    age = rng.normal(50, 12, n)
    lp = 0.9 * a + 0.2 * b + 0.02 * (age - 50)
    T = _weibull_ph(rng.exponential(size=n), lp, 1.3, 0.35)
    C = np.minimum(rng.uniform(1.0, 6.0, n), 5.0)
    time = np.round(np.minimum(T, C), 3)
    event = (T <= C).astype(int)
    return Dataset(time, event, np.column_stack([a, b, age]), ("marker_a", "marker_b", "age"),
                   tau=4.0)
