"""Working models for the conditional event, censoring and score distributions.

Every fitted model exposes ``curves(X) -> StepCurves`` (predictions for new
covariate rows) and ``training_curves()`` (predictions for the rows it was
fitted on). Cox models use the ``exp(-Lambda)`` survival convention; the
product-limit models use ``prod(1 - dLambda)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EPS, Dataset, StepCurves, StepFunction
from .exceptions import (BandwidthError, CollinearityError, ConvergenceError, DataValidationError,
                         FitError, MonotoneLikelihoodError)

__all__ = [
    "PooledCurve",
    "fit_kaplan_meier",
    "PooledModel",
    "fit_pooled",
    "CoxModel",
    "fit_cox",
    "fit_cox_arrays",
    "cox_predict_survival",
    "cox_partial_loglik",
    "BeranModel",
    "ScoreConditionalModel",
    "fit_score_conditional",
    "model_to_json",
    "model_from_json",
]

log = logging.getLogger(__name__)

MAX_ITER = 50
GRAD_TOL = 1e-9
# |coef| * sd(x) beyond this is treated as a diverging (monotone) likelihood
DIVERGENCE_LIMIT = 10.0


def _response(data: Dataset, response: str) -> np.ndarray:
    if response == "event":
        return data.event.astype(float)
    if response == "censoring":
        return 1.0 - data.event
    raise ValueError("response must be 'event' or 'censoring'")


# --------------------------------------------------------------------------
# Kaplan-Meier / Nelson-Aalen

@dataclass(frozen=True, eq=False)
class PooledCurve:
    survival: StepFunction
    cumhaz: StepFunction


def _event_table(times, events, weights):
    knots, inv = np.unique(times, return_inverse=True)
    d = np.bincount(inv, weights=weights * events, minlength=len(knots))
    w_at = np.bincount(inv, weights=weights, minlength=len(knots))
    at_risk = np.cumsum(w_at[::-1])[::-1]
    return knots, d, at_risk


def fit_kaplan_meier(times, events, weights=None) -> PooledCurve:
    """Product-limit survival and Nelson-Aalen cumulative hazard.

    For the censoring distribution pass ``1 - event`` as ``events``.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    if times.shape != events.shape:
        raise DataValidationError("times and events differ in length")
    if np.any(times < 0):
        raise DataValidationError("negative time")
    weights = np.ones_like(times) if weights is None else np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise DataValidationError("negative weight")
    knots, d, at_risk = _event_table(times, events, weights)
    keep = d > 0
    knots, d, at_risk = knots[keep], d[keep], at_risk[keep]
    haz = d / at_risk
    surv = np.cumprod(1.0 - haz)
    return PooledCurve(StepFunction(knots, np.clip(surv, 0.0, 1.0), 1.0, "survival"),
                       StepFunction(knots, np.cumsum(haz), 0.0, "cumhaz"))


@dataclass(frozen=True, eq=False)
class PooledModel:
    """Covariate-free model: the same Kaplan-Meier curve for every ``x``."""

    knots: np.ndarray
    hazard: np.ndarray
    n_train: int
    convention: str = "product"

    def curves(self, X) -> StepCurves:
        m = np.atleast_2d(np.asarray(X, dtype=float)).shape[0] if np.ndim(X) else int(X)
        return StepCurves(self.knots, np.tile(self.hazard, (m, 1)), self.convention)

    def training_curves(self) -> StepCurves:
        return self.curves(self.n_train)

    @property
    def curve(self) -> PooledCurve:
        surv = np.cumprod(1.0 - self.hazard)
        return PooledCurve(StepFunction(self.knots, np.clip(surv, 0, 1), 1.0, "survival"),
                           StepFunction(self.knots, np.cumsum(self.hazard), 0.0, "cumhaz"))


def fit_pooled(data: Dataset, response="event") -> PooledModel:
    pc = fit_kaplan_meier(data.time, _response(data, response))
    return PooledModel(pc.cumhaz.knots, pc.cumhaz.jumps(), data.n)


# --------------------------------------------------------------------------
# Cox proportional hazards

def _risk_sums(time, events, Xc, beta):
    """Breslow-tie score, information and log partial likelihood."""
    order = np.argsort(time, kind="stable")
    t = time[order]
    e = events[order]
    Z = Xc[order]
    lp = Z @ beta
    shift = lp.max() if lp.size else 0.0
    w = np.exp(lp - shift)
    rev = lambda a: np.cumsum(a[::-1], axis=0)[::-1]
    s0 = rev(w)
    s1 = rev(w[:, None] * Z)
    s2 = rev(w[:, None, None] * Z[:, :, None] * Z[:, None, :])
    ev_times = np.unique(t[e > 0])
    d = np.bincount(np.searchsorted(ev_times, t[e > 0]), weights=e[e > 0], minlength=len(ev_times))
    first = np.searchsorted(t, ev_times, side="left")
    S0, S1, S2 = s0[first], s1[first], s2[first]
    mean = S1 / S0[:, None]
    loglik = float(np.sum(e * lp) - np.sum(d * (np.log(S0) + shift)))
    grad = (e[:, None] * Z).sum(axis=0) - (d[:, None] * mean).sum(axis=0)
    info = np.einsum("u,uij->ij", d, S2 / S0[:, None, None] - mean[:, :, None] * mean[:, None, :])
    return loglik, grad, info


def cox_partial_loglik(time, events, X, beta) -> float:
    """Breslow log partial likelihood at ``beta`` (uncentred covariates)."""
    X = np.atleast_2d(np.asarray(X, dtype=float).T).T
    return _risk_sums(np.asarray(time, float), np.asarray(events, float), X,
                      np.atleast_1d(np.asarray(beta, float)))[0]


@dataclass(frozen=True, eq=False)
class CoxModel:
    coefficients: np.ndarray
    baseline_cumhaz: StepFunction
    covariate_means: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    response: str = "event"
    convention: str = "exp"
    train_X: np.ndarray | None = field(default=None, repr=False)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None] if len(self.coefficients) == 1 else X[None, :]
        return (X - self.covariate_means) @ self.coefficients

    def curves(self, X) -> StepCurves:
        risk = np.exp(self.linear_predictor(X))
        return StepCurves(self.baseline_cumhaz.knots,
                          risk[:, None] * self.baseline_cumhaz.jumps()[None, :], self.convention)

    def training_curves(self) -> StepCurves:
        if self.train_X is None:
            raise FitError("model was not fitted with training covariates retained")
        return self.curves(self.train_X)

    def predict_survival(self, x, t) -> float:
        return cox_predict_survival(self, x, t)


def cox_predict_survival(model: CoxModel, x, t) -> float:
    """``exp(-Lambda0(t) * exp(beta'(x - means)))``; constant past the last knot."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lp = float((x - model.covariate_means) @ model.coefficients)
    cum = model.baseline_cumhaz(t)
    if model.convention == "product":
        return float(model.curves(x[None, :]).survival([t])[0, 0])
    return float(np.exp(-cum * np.exp(lp)))


def breslow(time, events, Xc, beta) -> StepFunction:
    """Breslow baseline cumulative hazard at centred linear predictor ``Xc @ beta``."""
    w = np.exp(Xc @ beta)
    knots, inv = np.unique(time, return_inverse=True)
    d = np.bincount(inv, weights=events, minlength=len(knots))
    at_risk = np.cumsum(np.bincount(inv, weights=w, minlength=len(knots))[::-1])[::-1]
    keep = d > 0
    return StepFunction(knots[keep], np.cumsum(d[keep] / at_risk[keep]), 0.0, "cumhaz")


def fit_cox_arrays(time, events, X, response="event", max_iter=MAX_ITER, tol=GRAD_TOL) -> CoxModel:
    """Damped Newton-Raphson on the Breslow partial likelihood."""
    time = np.asarray(time, dtype=float)
    events = np.asarray(events, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if not np.any(events > 0):
        raise FitError(f"no {response} events to fit a Cox model")
    means = X.mean(axis=0)
    Xc = X - means
    sd = Xc.std(axis=0)
    active = sd > 1e-12 * np.maximum(1.0, np.abs(means))
    beta = np.zeros(X.shape[1])
    Xa = Xc[:, active]
    b = np.zeros(Xa.shape[1])
    ll, g, info = _risk_sums(time, events, Xa, b) if b.size else (0.0, b, np.zeros((0, 0)))
    it = 0
    gnorm = float(np.max(np.abs(g))) if b.size else 0.0
    while b.size and gnorm >= tol:
        if it >= max_iter:
            raise ConvergenceError(f"Cox fit did not converge in {max_iter} iterations "
                                   f"(gradient norm {gnorm:.3g})", gradient_norm=gnorm)
        try:
            step = np.linalg.solve(info, g)
        except np.linalg.LinAlgError:
            raise CollinearityError("singular information matrix; covariates collinear") from None
        if not np.all(np.isfinite(step)) or np.linalg.cond(info) > 1e14:
            raise CollinearityError("ill-conditioned information matrix; covariates collinear")
        scale = 1.0
        for _ in range(40):
            cand = b + scale * step
            ll_new, g_new, info_new = _risk_sums(time, events, Xa, cand)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            scale /= 2
        b, ll, g, info = cand, ll_new, g_new, info_new
        it += 1
        gnorm = float(np.max(np.abs(g)))
        if np.any(np.abs(b) * sd[active] > DIVERGENCE_LIMIT):
            raise MonotoneLikelihoodError(
                "coefficient diverging (monotone likelihood); penalised Cox is not supported")
    beta[active] = b
    return CoxModel(beta, breslow(time, events, Xc, beta), means, True, it, gnorm, response,
                    train_X=X)


def fit_cox(data: Dataset, response="event", **kw) -> CoxModel:
    return fit_cox_arrays(data.time, _response(data, response), data.X, response, **kw)


# --------------------------------------------------------------------------
# Score-conditional models

@dataclass(frozen=True, eq=False)
class BeranModel:
    """Kernel-weighted product-limit estimator on standardised scores."""

    time: np.ndarray
    events: np.ndarray
    scores: np.ndarray
    center: float
    scale: float
    bandwidth: float
    convention: str = "product"

    def _z(self, y):
        return (np.asarray(y, dtype=float) - self.center) / self.scale

    def weights(self, y) -> np.ndarray:
        u = (self._z(y)[:, None] - self._z(self.scores)[None, :]) / self.bandwidth
        w = np.exp(-0.5 * u * u)
        return w / w.sum(axis=1, keepdims=True)

    def curves(self, y) -> StepCurves:
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        knots = np.unique(self.time[self.events > 0])
        W = self.weights(y)
        dN = (self.time[:, None] == knots[None, :]) * self.events[:, None]
        R = (self.time[:, None] >= knots[None, :]).astype(float)
        num = W @ dN
        den = W @ R
        inc = np.where(den > EPS, num / np.maximum(den, EPS), 0.0)
        return StepCurves(knots, np.minimum(inc, 1.0), "product")

    def training_curves(self) -> StepCurves:
        return self.curves(self.scores)


@dataclass(frozen=True, eq=False)
class ScoreConditionalModel:
    """Conditional event-time model given the scalar score ``Y``."""

    inner: object
    score_values: np.ndarray
    method: str

    @property
    def convention(self):
        return self.inner.convention

    def curves(self, y) -> StepCurves:
        y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        return self.inner.curves(y[:, None] if self.method == "cox1d" else y)

    def training_curves(self) -> StepCurves:
        return self.curves(self.score_values)


def fit_score_conditional(times, events, scores, method="cox1d", bandwidth=None,
                          min_local_size=5.0) -> ScoreConditionalModel:
    """Fit ``S_{T|Y}`` by a univariate Cox model or a Gaussian-kernel Beran estimator.

    The default Beran bandwidth is ``1.06 * n**(-1/5)`` on standardised scores.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(scores)):
        raise DataValidationError("scores must be finite")
    if method == "cox1d":
        inner = fit_cox_arrays(times, events, scores[:, None])
    elif method == "kernel_beran":
        n = len(scores)
        sd = scores.std()
        scale = sd if sd > 1e-12 * max(1.0, abs(scores.mean())) else 1.0
        h = 1.06 * n ** (-0.2) if bandwidth is None else float(bandwidth)
        if not h > 0:
            raise BandwidthError("bandwidth must be positive")
        inner = BeranModel(times, events, scores, float(scores.mean()), float(scale), h)
        W = inner.weights(scores)
        # isolated extreme scores always have few neighbours; judge the bulk
        ess = float(np.median(1.0 / np.sum(W * W, axis=1)))
        if ess < min_local_size:
            raise BandwidthError(f"median effective local sample size {ess:.2f} < "
                                 f"{min_local_size}; bandwidth too small")
    else:
        raise ValueError(f"unknown score-conditional method {method!r}")
    return ScoreConditionalModel(inner, scores, method)


# --------------------------------------------------------------------------
# JSON serialisation

def _step_dict(f: StepFunction):
    return {"knots": f.knots.tolist(), "values": f.values.tolist(),
            "initial_value": f.initial_value, "kind": f.kind}


def model_to_json(model) -> str:
    if isinstance(model, CoxModel):
        doc = {"type": "cox", "coefficients": model.coefficients.tolist(),
               "covariate_means": model.covariate_means.tolist(),
               "baseline_cumhaz": _step_dict(model.baseline_cumhaz),
               "increments": model.baseline_cumhaz.jumps().tolist(),
               "converged": model.converged, "iterations": model.iterations,
               "gradient_norm": model.gradient_norm, "response": model.response,
               "convention": model.convention}
    elif isinstance(model, PooledModel):
        doc = {"type": "pooled", "knots": model.knots.tolist(),
               "increments": model.hazard.tolist(), "n_train": model.n_train,
               "convention": model.convention}
    elif isinstance(model, BeranModel):
        doc = {"type": "beran", "time": model.time.tolist(), "events": model.events.tolist(),
               "scores": model.scores.tolist(), "center": model.center, "scale": model.scale,
               "bandwidth": model.bandwidth, "convention": model.convention}
    elif isinstance(model, ScoreConditionalModel):
        doc = {"type": "score_conditional", "method": model.method,
               "score_values": model.score_values.tolist(),
               "inner": json.loads(model_to_json(model.inner))}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return json.dumps(doc)


def model_from_json(text):
    doc = json.loads(text) if isinstance(text, str) else text
    kind = doc["type"]
    if kind == "cox":
        b = doc["baseline_cumhaz"]
        return CoxModel(np.array(doc["coefficients"]),
                        StepFunction(b["knots"], b["values"], b["initial_value"], b["kind"]),
                        np.array(doc["covariate_means"]), doc["converged"], doc["iterations"],
                        doc["gradient_norm"], doc["response"], doc["convention"])
    if kind == "pooled":
        return PooledModel(np.array(doc["knots"]), np.array(doc["increments"]), doc["n_train"],
                           doc["convention"])
    if kind == "beran":
        return BeranModel(np.array(doc["time"]), np.array(doc["events"]), np.array(doc["scores"]),
                          doc["center"], doc["scale"], doc["bandwidth"], doc["convention"])
    if kind == "score_conditional":
        return ScoreConditionalModel(model_from_json(doc["inner"]), np.array(doc["score_values"]),
                                     doc["method"])
    raise ValueError(f"unknown model type {kind!r}")


def with_convention(model: CoxModel, convention: str) -> CoxModel:
    return replace(model, convention=convention)
