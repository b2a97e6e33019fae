"""Reference estimators scored by the Cox linear predictor: a truncated
Gonen-Heller concordance and two IPCW families (marginal Kaplan-Meier
censoring weights, and Cox-model conditional censoring weights).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import EPS, Dataset
from .exceptions import DataValidationError, UnstableWeightsError
from .nuisance import CoxModel, breslow, fit_cox, fit_kaplan_meier

__all__ = [
    "CompetitorEstimate",
    "gh_estimate",
    "gh_from_scores",
    "ipcw_uno_c",
    "ipcw_uno_auc",
    "ipcw_cox_c",
    "ipcw_cox_auc",
    "ipcw_c_from_weights",
    "ipcw_auc_from_weights",
    "cox_with_coefficients",
    "evaluate_competitor",
    "COMPETITOR_MEASURES",
]

log = logging.getLogger(__name__)

COMPETITOR_MEASURES = {"gh": ("K", "C"), "ipcw-uno": ("C", "AUC"), "ipcw-cox": ("C", "AUC")}

#: Above this fraction of floored weights the IPCW estimate is refused.
MAX_FLOORED = 0.5


@dataclass(frozen=True)
class CompetitorEstimate:
    method: str
    measure: str
    horizon: float
    point: float
    n_floored: int = 0

    def to_dict(self):
        return {"method": self.method, "measure": self.measure, "horizon": self.horizon,
                "point": self.point}


def cox_with_coefficients(data: Dataset, beta, response="event") -> CoxModel:
    """Cox model with fixed coefficients and the matching Breslow baseline."""
    beta = np.asarray(beta, dtype=float)
    events = data.event.astype(float) if response == "event" else 1.0 - data.event
    means = data.X.mean(axis=0)
    Xc = data.X - means
    return CoxModel(beta, breslow(data.time, events, Xc, beta), means, True, 0, 0.0, response,
                    train_X=np.asarray(data.X))


# --------------------------------------------------------------------------
# Gonen-Heller

def gh_from_scores(lp, cumhaz0_tau):
    """``(K, C)`` from centred linear predictors and ``Lambda_0(tau)``.

    K is the displayed pair average; C divides the same concordance mass by
    the model-implied probability that a pair has an event by ``tau``. Tied
    predictors contribute half a concordant pair, so a null model collapses
    to ``K = w/2`` and ``C = 1/2``.
    """
    lp = np.asarray(lp, dtype=float)
    n = len(lp)
    if n < 2:
        raise DataValidationError("need at least two observations")
    risk = np.exp(lp)
    iu, ju = np.triu_indices(n, k=1)
    diff = lp[iu] - lp[ju]
    w = 1.0 - np.exp(-cumhaz0_tau * (risk[iu] + risk[ju]))
    # ties take the kernel's value at zero, 1/2
    kern = 1.0 / (1.0 + np.exp(-np.abs(diff)))
    num = float(np.sum(kern * w))
    K = 2.0 * num / (n * (n - 1))
    den = float(np.sum(w))
    C = num / den if den > 0 else float("nan")
    return K, C


def gh_estimate(data: Dataset, tau=None, measure="C", cox_model: CoxModel | None = None):
    """Truncated Gonen-Heller estimate of ``K_tau`` or ``C_tau``."""
    tau = data.tau if tau is None else float(tau)
    if measure not in ("K", "C"):
        raise DataValidationError("GH defines only the concordance forms (K, C)")
    model = fit_cox(data) if cox_model is None else cox_model
    lp = model.linear_predictor(data.X)
    K, C = gh_from_scores(lp, float(model.baseline_cumhaz(tau)))
    return CompetitorEstimate("GH", measure, tau, K if measure == "K" else C)


# --------------------------------------------------------------------------
# IPCW

def _check_weights(w, what):
    bad = w <= EPS
    frac = float(bad.mean()) if w.size else 0.0
    if w.size and frac > MAX_FLOORED:
        raise UnstableWeightsError(f"{what}: {frac:.1%} of censoring weights below {EPS}",
                                   fraction=frac)
    if bad.any():
        log.info("%s: floored %d censoring weights", what, int(bad.sum()))
    return np.maximum(w, EPS), int(bad.sum())


def _cases(data, tau):
    return np.flatnonzero((data.event == 1) & (data.time <= tau))


def ipcw_c_from_weights(time, scores, cases, pair_weight):
    """``sum I(T_i < T_j) I(Y_i > Y_j) / w_ij  /  sum I(T_i < T_j) / w_ij`` over cases i.

    ``pair_weight`` has shape ``(len(cases), n)`` (or ``(len(cases), 1)``).
    """
    ti = time[cases][:, None]
    comparable = ti < time[None, :]
    conc = comparable & (scores[cases][:, None] > scores[None, :])
    inv = 1.0 / pair_weight
    den = float(np.sum(comparable * inv))
    if den == 0:
        raise DataValidationError("no comparable pairs before tau")
    return float(np.sum(conc * inv)) / den


def ipcw_auc_from_weights(time, scores, cases, tau, case_weight, control_weight):
    """Cumulative-dynamic AUC with case weights ``1/w_i`` and control weights ``1/v_j``."""
    controls = np.flatnonzero(time > tau)
    if controls.size == 0 or cases.size == 0:
        raise DataValidationError("AUC needs both cases (event by t) and controls (at risk past t)")
    conc = scores[cases][:, None] > scores[controls][None, :]
    num = float(np.sum(conc / (case_weight[:, None] * control_weight[None, :])))
    return num / (float(np.sum(1.0 / control_weight)) * float(np.sum(1.0 / case_weight)))


def _scores(data, cox_model):
    model = fit_cox(data) if cox_model is None else cox_model
    return model.linear_predictor(data.X)


def _marginal_g(data, times, side):
    g = fit_kaplan_meier(data.time, 1.0 - data.event).survival
    return np.atleast_1d(g(times, side=side))


def ipcw_uno_c(data: Dataset, tau=None, cox_model=None) -> CompetitorEstimate:
    tau = data.tau if tau is None else float(tau)
    cases = _cases(data, tau)
    G, nf = _check_weights(_marginal_g(data, data.time[cases], "left"), "IPCW-Uno C")
    point = ipcw_c_from_weights(data.time, _scores(data, cox_model), cases, (G * G)[:, None])
    return CompetitorEstimate("IPCW_Uno", "C", tau, point, nf)


def ipcw_uno_auc(data: Dataset, tau=None, cox_model=None) -> CompetitorEstimate:
    tau = data.tau if tau is None else float(tau)
    cases = _cases(data, tau)
    G, nf = _check_weights(_marginal_g(data, data.time[cases], "left"), "IPCW-Uno AUC")
    controls = np.ones(int(np.sum(data.time > tau)))
    point = ipcw_auc_from_weights(data.time, _scores(data, cox_model), cases, tau, G, controls)
    return CompetitorEstimate("IPCW_Uno", "AUC", tau, point, nf)


def _censoring_model(data, censoring_model):
    return fit_cox(data, "censoring") if censoring_model is None else censoring_model


def ipcw_cox_c(data: Dataset, tau=None, cox_model=None, censoring_model=None):
    """C-index with weights ``K_C(T_i-|X_i) K_C(T_i-|X_j)`` from a Cox censoring model."""
    tau = data.tau if tau is None else float(tau)
    cases = _cases(data, tau)
    cm = _censoring_model(data, censoring_model)
    Kc = cm.curves(data.X).survival(data.time[cases], side="left")  # (n, cases)
    own = Kc[cases, np.arange(len(cases))]
    W, nf = _check_weights(own[:, None] * Kc.T, "IPCW-Cox C")
    point = ipcw_c_from_weights(data.time, _scores(data, cox_model), cases, W)
    return CompetitorEstimate("IPCW_Cox", "C", tau, point, nf)


def ipcw_cox_auc(data: Dataset, tau=None, cox_model=None, censoring_model=None):
    """AUC with case weights ``K_C(T_i-|X_i)`` and control weights ``K_C(tau|X_j)``."""
    tau = data.tau if tau is None else float(tau)
    cases = _cases(data, tau)
    cm = _censoring_model(data, censoring_model)
    curves = cm.curves(data.X)
    own = curves.survival(data.time[cases], side="left")[cases, np.arange(len(cases))]
    w_case, nf1 = _check_weights(own, "IPCW-Cox AUC cases")
    controls = np.flatnonzero(data.time > tau)
    w_ctrl, nf2 = _check_weights(curves.survival([tau])[controls, 0], "IPCW-Cox AUC controls")
    point = ipcw_auc_from_weights(data.time, _scores(data, cox_model), cases, tau, w_case, w_ctrl)
    return CompetitorEstimate("IPCW_Cox", "AUC", tau, point, nf1 + nf2)


def evaluate_competitor(name, data: Dataset, tau=None) -> dict:
    """All measures of one competitor with a single Cox fit per model."""
    tau = data.tau if tau is None else float(tau)
    cox = fit_cox(data)
    if name == "gh":
        K, C = gh_from_scores(cox.linear_predictor(data.X), float(cox.baseline_cumhaz(tau)))
        return {"K": K, "C": C}
    if name == "ipcw-uno":
        return {"C": ipcw_uno_c(data, tau, cox).point, "AUC": ipcw_uno_auc(data, tau, cox).point}
    if name == "ipcw-cox":
        cm = fit_cox(data, "censoring")
        return {"C": ipcw_cox_c(data, tau, cox, cm).point,
                "AUC": ipcw_cox_auc(data, tau, cox, cm).point}
    raise ValueError(f"unknown competitor {name!r}")
