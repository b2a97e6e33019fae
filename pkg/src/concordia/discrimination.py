"""One-step estimators of the truncated concordance probability, the truncated
c-index and the cumulative-dynamic AUC for a linear scoring rule.

All time integrals are sums over the event grid. The plug-in for a pair uses
the midpoint rule ``h(y1, y2) = sum_k Sbar_2(u_k) dF_1(u_k)`` with
``Sbar = (S(u_k-) + S(u_k)) / 2``; with this rule the pairing identity
``h(y1, y2) + h(y2, y1) = 1 - S_1(tau) S_2(tau)`` holds exactly on any grid.

The correction terms are the directional derivatives of the discretised
plug-in along the influence of each observation on ``S_{T|Y}(.|Y_i)``. The
one-step estimator adds ``correction_factor`` times the empirical mean of that
linearisation; the default 0.5 reproduces the displayed estimator weights and
1.0 gives the full first-order correction.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import EPS, Dataset, StepCurves, counting_processes, event_grid, on_grid
from .exceptions import DataValidationError, DegenerateEstimandError, FitError
from .forest import ForestParams, fit_forest
from .nuisance import fit_cox, fit_pooled, fit_score_conditional
from .scorerule import BetaEstimate, compute_scores, estimate_beta_al

__all__ = [
    "NuisanceBundle",
    "DLMatrix",
    "DiscriminationEstimate",
    "build_bundle",
    "compute_dl_matrix",
    "h_tau",
    "v_t",
    "plugin_K",
    "correction_G_tau",
    "efficient_survival",
    "estimate_K_tau",
    "estimate_C_tau",
    "estimate_theta_t",
    "estimate_AUC_t",
    "auc_curve",
    "fit_bundle",
    "stack_curves",
    "fold_assignment",
    "DEGENERATE_TOL",
]

log = logging.getLogger(__name__)

#: ``S_hat`` this close to 0 or 1 makes the ratio estimands undefined.
DEGENERATE_TOL = 1e-6

#: Weight on the influence-function correction; the displayed estimators carry
#: half of it (1.0 gives the full first-order correction).
CORRECTION_FACTOR = 0.5


def _as_curves(obj, what="curves") -> StepCurves:
    if isinstance(obj, StepCurves):
        return obj
    if hasattr(obj, "training_curves"):
        return obj.training_curves()
    raise TypeError(f"{what} must be StepCurves or a fitted model")


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Every nuisance evaluated on the common event grid, one row per subject.

    ``dlam``, ``surv`` and ``surv_left`` describe ``Lambda(.|X_i)`` and
    ``S(.|X_i)``; ``kc_left`` is ``K_C(u-|X_i)``; ``sc_*`` hold the
    score-conditional ``Lambda_{T|Y}(.|Y_i)`` and ``S_{T|Y}(.|Y_i)``.
    """

    grid: np.ndarray
    scores: np.ndarray
    dN: np.ndarray
    at_risk: np.ndarray
    dlam: np.ndarray
    surv: np.ndarray
    surv_left: np.ndarray
    kc_left: np.ndarray
    sc_dlam: np.ndarray
    sc_surv: np.ndarray
    sc_surv_left: np.ndarray
    sc_convention: str = "product"
    beta: BetaEstimate | None = None
    description: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.scores)

    def columns(self, t) -> int:
        """Number of grid points ``<= t``."""
        return int(np.searchsorted(self.grid, t, side="right"))


@dataclass(frozen=True, eq=False)
class DLMatrix:
    grid: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class DiscriminationEstimate:
    measure: str
    horizon: float
    point: float
    plugin: float
    correction: float
    s_hat: float
    n_pairs: int
    s_hat_raw: float = float("nan")
    clamped: bool = False
    theta: float = float("nan")

    def to_dict(self):
        return {"measure": self.measure, "horizon": self.horizon, "point": self.point,
                "plugin": self.plugin, "correction": self.correction, "s_hat": self.s_hat,
                "n_pairs": self.n_pairs}


# --------------------------------------------------------------------------
# bundle construction

def build_bundle(data: Dataset, survival, censoring, score_conditional, scores=None,
                 horizon=None, beta=None, description="") -> NuisanceBundle:
    """Evaluate fitted nuisances for the rows of ``data`` on its event grid.

    ``survival`` and ``censoring`` are fitted models (in-sample predictions) or
    :class:`StepCurves` for the rows of ``data``. ``score_conditional`` is a
    fitted score model, evaluated at ``scores``, or ready-made curves.
    """
    horizon = data.tau if horizon is None else float(horizon)
    grid = event_grid(data, upto=horizon)
    S = _as_curves(survival, "survival")
    K = _as_curves(censoring, "censoring")
    if scores is None:
        if beta is None:
            raise ValueError("need scores or beta")
        scores = compute_scores(data, beta)
    scores = np.asarray(scores, dtype=float)
    if isinstance(score_conditional, StepCurves):
        SC = score_conditional
    else:
        SC = score_conditional.curves(scores)
    for c, what in ((S, "survival"), (K, "censoring"), (SC, "score-conditional")):
        if c.n != data.n:
            raise DataValidationError(f"{what} curves have {c.n} rows, data has {data.n}")
    dlam, surv, surv_left = on_grid(S, grid)
    kc_left = K.survival(grid, side="left")
    sc_dlam, sc_surv, sc_surv_left = on_grid(SC, grid)
    dN, at_risk = counting_processes(data, grid)
    return NuisanceBundle(grid, scores, dN, at_risk, dlam, surv, surv_left, kc_left,
                          sc_dlam, sc_surv, sc_surv_left, SC.convention, beta, description)


def compute_dl_matrix(data: Dataset | None, bundle: NuisanceBundle) -> DLMatrix:
    """Observed-data increments ``dL(u; X_i)`` on the grid.

    ``dM/K_C(u-) + S(u-) {1 - int_0^{u-} dM / (S K_C(.-))} d(Lambda - Lambda_{T|Y})``.
    """
    b = bundle
    dM = b.dN - b.at_risk * b.dlam
    kc = np.maximum(b.kc_left, EPS)
    ratio = dM / (np.maximum(b.surv, EPS) * kc)
    a_left = np.cumsum(ratio, axis=1) - ratio
    dL = dM / kc + b.surv_left * (1.0 - a_left) * (b.dlam - b.sc_dlam)
    return DLMatrix(b.grid, dL)


def _delta_sc(bundle: NuisanceBundle, dl: DLMatrix, m: int) -> np.ndarray:
    """Influence of each subject on its own ``S_{T|Y}(u_k|Y_i)``, ``k < m``."""
    den = bundle.sc_surv if bundle.sc_convention == "product" else bundle.sc_surv_left
    return -bundle.sc_surv[:, :m] * np.cumsum(dl.values[:, :m] / np.maximum(den[:, :m], EPS),
                                              axis=1)


# --------------------------------------------------------------------------
# pair kernels

def _pair_kernel(s1, s1_left, s2, s2_left):
    return np.sum(0.5 * (s2_left + s2) * (s1_left - s1), axis=-1)


def h_tau(y1, y2, sc, grid, tau) -> float:
    """Probability that the subject scored ``y1`` fails first, before ``tau``."""
    grid = np.asarray(grid, dtype=float)
    grid = grid[grid <= tau]
    if grid.size == 0:
        return 0.0
    curves = sc if isinstance(sc, StepCurves) else sc.curves(np.array([y1, y2], dtype=float))
    _, s, s_left = on_grid(curves, grid)
    return float(_pair_kernel(s[0], s_left[0], s[1], s_left[1]))


def v_t(y1, y2, sc, t) -> float:
    """``{1 - S_{T|Y}(t|y1)} S_{T|Y}(t|y2)``."""
    curves = sc if isinstance(sc, StepCurves) else sc.curves(np.array([y1, y2], dtype=float))
    s = curves.survival([t])[:, 0]
    return float((1.0 - s[0]) * s[1])


class _Ranks:
    """Strict lower/upper neighbour sums over sorted scores."""

    def __init__(self, scores):
        self.order = np.argsort(scores, kind="stable")
        ys = scores[self.order]
        self.lo = np.searchsorted(ys, scores, side="left")
        self.hi = np.searchsorted(ys, scores, side="right")

    def below(self, A):
        """``sum_{j: Y_j < Y_i} A_j`` for every ``i``."""
        c = np.concatenate([np.zeros((1,) + A.shape[1:]), np.cumsum(A[self.order], axis=0)])
        return c[self.lo]

    def above(self, A):
        c = np.concatenate([np.zeros((1,) + A.shape[1:]), np.cumsum(A[self.order], axis=0)])
        return c[-1] - c[self.hi]

    @property
    def n_pairs(self):
        return int(self.lo.sum())


def _warn_ties(ranks: _Ranks):
    if ranks.n_pairs == 0:
        warnings.warn("all scores tied: plug-in concordance terms are 0", RuntimeWarning)


def _psi_parts(bundle: NuisanceBundle, m: int, dl: DLMatrix | None):
    n = bundle.n
    s = bundle.sc_surv[:, :m]
    s_left = bundle.sc_surv_left[:, :m]
    dF = s_left - s
    ranks = _Ranks(bundle.scores)
    P = ranks.below(0.5 * (s + s_left))
    plug = float(np.sum(dF * P)) / (n * (n - 1))
    if dl is None:
        return plug, None, ranks
    Q = ranks.above(dF)
    dS = _delta_sc(bundle, dl, m)
    dS_left = np.concatenate([np.zeros((n, 1)), dS[:, :-1]], axis=1)
    D = np.sum(0.5 * (dS_left + dS) * Q + (dS_left - dS) * P, axis=1) / (n - 1)
    return plug, D, ranks


def plugin_K(scores, sc, grid, tau) -> float:
    """``2/(n(n-1)) sum_{i != j} I(Y_i > Y_j) h_tau(Y_i, Y_j)``."""
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if n < 2:
        raise DataValidationError("need at least two scores")
    grid = np.asarray(grid, dtype=float)
    grid = grid[grid <= tau]
    if grid.size == 0:
        return 0.0
    curves = sc if isinstance(sc, StepCurves) else sc.curves(scores)
    _, s, s_left = on_grid(curves, grid)
    ranks = _Ranks(scores)
    _warn_ties(ranks)
    P = ranks.below(0.5 * (s + s_left))
    return 2.0 * float(np.sum((s_left - s) * P)) / (n * (n - 1))


def correction_G_tau(data, bundle: NuisanceBundle, dl: DLMatrix, tau) -> float:
    """Empirical mean of the influence-function correction on the ``K_tau`` scale."""
    m = bundle.columns(tau)
    if m == 0:
        return 0.0
    _, D, _ = _psi_parts(bundle, m, dl)
    return 2.0 * float(np.mean(D))


# --------------------------------------------------------------------------
# efficient survival and the three measures

def efficient_survival(data, bundle: NuisanceBundle, t) -> float:
    """Augmented estimator ``n^-1 sum_i S(t|X_i) {1 - int_0^t dM_i/(S K_C(.-))}``."""
    m = bundle.columns(t)
    if m == 0:
        return 1.0
    b = bundle
    dM = b.dN[:, :m] - b.at_risk[:, :m] * b.dlam[:, :m]
    den = np.maximum(b.surv[:, :m], EPS) * np.maximum(b.kc_left[:, :m], EPS)
    aug = np.sum(dM / den, axis=1)
    return float(np.mean(b.surv[:, m - 1] * (1.0 - aug)))


def _checked_s(s_raw, measure, both_sides):
    s = min(max(s_raw, 0.0), 1.0)
    clamped = s != s_raw
    if clamped:
        log.warning("efficient survival %.6g outside [0, 1]; clamped for %s", s_raw, measure)
    if s >= 1.0 - DEGENERATE_TOL:
        raise DegenerateEstimandError(f"{measure}: estimated survival {s_raw:.6g} ~ 1 "
                                      "(no events by the horizon)")
    if both_sides and s <= DEGENERATE_TOL:
        raise DegenerateEstimandError(f"{measure}: estimated survival {s_raw:.6g} ~ 0")
    return s, clamped


def estimate_K_tau(data, bundle: NuisanceBundle, tau, correction_factor=CORRECTION_FACTOR,
                   dl: DLMatrix | None = None) -> DiscriminationEstimate:
    """One-step estimator of the truncated concordance probability."""
    m = bundle.columns(tau)
    dl = compute_dl_matrix(data, bundle) if dl is None else dl
    if m == 0:
        return DiscriminationEstimate("K_tau", float(tau), 0.0, 0.0, 0.0, 1.0, 0, 1.0)
    plug, D, ranks = _psi_parts(bundle, m, dl)
    _warn_ties(ranks)
    plugin = 2.0 * plug
    corr = correction_factor * 2.0 * float(np.mean(D))
    s_raw = efficient_survival(data, bundle, tau)
    return DiscriminationEstimate("K_tau", float(tau), plugin + corr, plugin, corr,
                                  min(max(s_raw, 0.0), 1.0), ranks.n_pairs, s_raw,
                                  not 0.0 <= s_raw <= 1.0)


def estimate_C_tau(data, bundle: NuisanceBundle, tau, correction_factor=CORRECTION_FACTOR,
                   k_estimate: DiscriminationEstimate | None = None,
                   dl: DLMatrix | None = None) -> DiscriminationEstimate:
    """``C_tau = K_tau / (1 - S_hat(tau)^2)``."""
    K = (estimate_K_tau(data, bundle, tau, correction_factor, dl)
         if k_estimate is None else k_estimate)
    s, clamped = _checked_s(K.s_hat_raw, "C_tau", both_sides=False)
    den = 1.0 - s * s
    return DiscriminationEstimate("C_tau", float(tau), K.point / den, K.plugin / den,
                                  K.correction / den, s, K.n_pairs, K.s_hat_raw, clamped)


def estimate_theta_t(data, bundle: NuisanceBundle, t, correction_factor=CORRECTION_FACTOR,
                     dl: DLMatrix | None = None):
    """Plug-in and correction for ``Theta_t = P(Y_1 > Y_2, T_1 <= t < T_2)``."""
    n = bundle.n
    m = bundle.columns(t)
    if m == 0:
        return 0.0, 0.0, 0
    dl = compute_dl_matrix(data, bundle) if dl is None else dl
    s_t = bundle.sc_surv[:, m - 1]
    ranks = _Ranks(bundle.scores)
    _warn_ties(ranks)
    below = ranks.below(s_t)
    above = ranks.above(1.0 - s_t)
    plug = float(np.sum((1.0 - s_t) * below)) / (n * (n - 1))
    dS_t = _delta_sc(bundle, dl, m)[:, -1]
    D = dS_t * (above - below) / (n - 1)
    return plug, correction_factor * float(np.mean(D)), ranks.n_pairs


def estimate_AUC_t(data, bundle: NuisanceBundle, t, correction_factor=CORRECTION_FACTOR,
                   dl: DLMatrix | None = None) -> DiscriminationEstimate:
    """``AUC_t = Theta_t / [{1 - S_hat(t)} S_hat(t)]``."""
    plug, corr, n_pairs = estimate_theta_t(data, bundle, t, correction_factor, dl)
    s_raw = efficient_survival(data, bundle, t)
    s, clamped = _checked_s(s_raw, "AUC_t", both_sides=True)
    den = (1.0 - s) * s
    theta = plug + corr
    return DiscriminationEstimate("AUC_t", float(t), theta / den, plug / den, corr / den, s,
                                  n_pairs, s_raw, clamped, theta)


# --------------------------------------------------------------------------
# nuisance pipeline

def stack_curves(parts, n) -> StepCurves:
    """Merge per-fold ``(rows, StepCurves)`` predictions into one batch.

    Increments are re-expressed on the union of knots, which is exact for
    both survival conventions.
    """
    conv = {c.convention for _, c in parts}
    if len(conv) != 1:
        raise ValueError("folds disagree on survival convention")
    knots = np.unique(np.concatenate([c.knots for _, c in parts]))
    inc = np.zeros((n, len(knots)))
    for rows, c in parts:
        inc[rows] = np.diff(c.cumhaz(knots), axis=1, prepend=0.0)
    return StepCurves(knots, inc, conv.pop())


def fold_assignment(n, K, seed):
    """Seeded permutation split into ``K`` folds whose sizes differ by at most one."""
    if K < 2:
        raise DataValidationError("cross-fitting needs K >= 2 folds")
    if K > n:
        raise DataValidationError("more folds than observations")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % K
    return folds


def _fit_censoring(data: Dataset, nuisance, params):
    if np.all(data.event == 1):
        return fit_pooled(data, "censoring")
    if nuisance == "cox":
        return fit_cox(data, "censoring")
    return fit_forest(data, "censoring", params)


def _fit_survival(data: Dataset, nuisance, params):
    if nuisance == "cox":
        return fit_cox(data, "event")
    return fit_forest(data, "event", params)


def _sc_method(nuisance, sc_method):
    if sc_method is not None:
        return sc_method
    return "cox1d" if nuisance == "cox" else "kernel_beran"


def fit_bundle(data: Dataset, horizon=None, beta_horizon=None, nuisance="cox", crossfit=0,
               seed=None, forest_params: ForestParams | None = None, link="cloglog",
               sc_method=None, bandwidth=None, oob=False) -> NuisanceBundle:
    """Fit every nuisance, the scoring rule and the score-conditional model.

    ``nuisance`` is ``"cox"`` or ``"forest"``; with ``crossfit=K >= 2`` each
    subject's nuisance predictions come from models fitted on the other folds.
    The coefficient is estimated at ``beta_horizon`` (default ``horizon``).
    Without cross-fitting, forest predictions for the training rows use every
    tree; ``oob=True`` switches to out-of-bag predictions, which leave
    isolated high-risk subjects with near-zero survival and destabilise the
    coefficient's augmentation term.
    """
    horizon = data.tau if horizon is None else float(horizon)
    beta_horizon = horizon if beta_horizon is None else float(beta_horizon)
    if nuisance not in ("cox", "forest"):
        raise ValueError("nuisance must be 'cox' or 'forest'")
    method = _sc_method(nuisance, sc_method)
    base = forest_params or ForestParams()
    ss = np.random.SeedSequence(seed if seed is not None else base.seed)

    def params(child):
        return ForestParams(base.num_trees, base.mtry, base.min_node_size, base.sample_fraction,
                            int(child.generate_state(1)[0]))

    if not crossfit:
        c1, c2 = ss.spawn(2)
        surv = _fit_survival(data, nuisance, params(c1))
        cens = _fit_censoring(data, nuisance, params(c2))
        if oob:
            S, Kc = surv.training_curves(), cens.training_curves()
        else:
            S, Kc = surv.curves(data.X), cens.curves(data.X)
        beta = estimate_beta_al(data, beta_horizon, S, Kc, link, nuisance)
        scores = compute_scores(data, beta)
        sc = fit_score_conditional(data.time, data.event, scores, method, bandwidth)
        return build_bundle(data, S, Kc, sc.training_curves(), scores, horizon, beta,
                            f"onestep-{nuisance}")

    fold_seed, model_seed = ss.spawn(2)
    folds = _valid_folds(data, crossfit, fold_seed)
    children = model_seed.spawn(2 * crossfit)
    S_parts, K_parts = [], []
    for k in range(crossfit):
        test = np.flatnonzero(folds == k)
        train = data.subset(np.flatnonzero(folds != k), validate=False)
        surv = _fit_survival(train, nuisance, params(children[2 * k]))
        cens = _fit_censoring(train, nuisance, params(children[2 * k + 1]))
        S_parts.append((test, surv.curves(data.X[test])))
        K_parts.append((test, cens.curves(data.X[test])))
    S = stack_curves(S_parts, data.n)
    Kc = stack_curves(K_parts, data.n)
    beta = estimate_beta_al(data, beta_horizon, S, Kc, link, f"{nuisance}-cf{crossfit}")
    scores = compute_scores(data, beta)
    sc_parts = []
    for k in range(crossfit):
        test = np.flatnonzero(folds == k)
        tr = folds != k
        sc = fit_score_conditional(data.time[tr], data.event[tr], scores[tr], method, bandwidth)
        sc_parts.append((test, sc.curves(scores[test])))
    SC = stack_curves(sc_parts, data.n)
    bundle = build_bundle(data, S, Kc, SC, scores, horizon, beta,
                          f"onestep-{nuisance}-cf{crossfit}")
    bundle.meta["folds"] = folds
    return bundle


def _valid_folds(data, K, seed_seq):
    if K < 2 or K > data.n:
        raise DataValidationError(f"cannot split n={data.n} into {K} folds")
    for attempt in seed_seq.spawn(2):
        folds = fold_assignment(data.n, K, attempt)
        if all(np.any(data.event[folds != k] == 1) for k in range(K)):
            return folds
        log.info("a training fold had no events; refolding")
    raise FitError("cross-fitting failed: a training fold has no events after refolding")


def auc_curve(data: Dataset, t_grid, bundle_factory=None, freeze_beta=None,
              correction_factor=CORRECTION_FACTOR, **fit_kw):
    """AUC estimates over ``t_grid``.

    By default the scoring rule is re-estimated at every ``t``; pass
    ``freeze_beta=t0`` to use the coefficient at ``t0`` throughout, or a
    ``bundle_factory(t) -> NuisanceBundle``. Failures at a single ``t`` give a
    row with ``nan`` values and an ``error`` message.
    """
    rows = []
    frozen = None
    for t in np.asarray(t_grid, dtype=float):
        try:
            if not 0 < t <= data.tau:
                raise DataValidationError(f"t={t} outside (0, tau]")
            if bundle_factory is not None:
                bundle = bundle_factory(t)
            elif freeze_beta is not None:
                if frozen is None:
                    frozen = fit_bundle(data, horizon=data.tau, beta_horizon=freeze_beta, **fit_kw)
                bundle = frozen
            else:
                bundle = fit_bundle(data, horizon=t, beta_horizon=t, **fit_kw)
            est = estimate_AUC_t(data, bundle, t, correction_factor)
            rows.append({"t": float(t), "auc": est.point, "plugin": est.plugin,
                         "correction": est.correction, "error": ""})
        except (DataValidationError, FitError, DegenerateEstimandError) as exc:
            rows.append({"t": float(t), "auc": float("nan"), "plugin": float("nan"),
                         "correction": float("nan"), "error": f"{type(exc).__name__}: {exc}"})
    return rows
