"""Assumption-lean coefficient and the linear scoring rule ``Y = beta'X``.

The coefficient is ``var(X)^-1 cov(g(S(t|X)), X)``; its one-step estimator
adds the censoring-augmentation term so that the estimator solves its own
empirical efficient-influence equation exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import EPS, Dataset, StepCurves, counting_processes, event_grid, on_grid
from .exceptions import CollinearityError, DataValidationError

__all__ = ["LinkFunction", "LINKS", "get_link", "BetaEstimate", "estimate_beta_al",
           "beta_influence", "compute_scores"]

log = logging.getLogger(__name__)

MAX_FLOOR_FRACTION = 0.10


@dataclass(frozen=True)
class LinkFunction:
    name: str
    g: callable
    g_prime: callable


LINKS = {
    "cloglog": LinkFunction("cloglog", lambda s: np.log(-np.log(s)),
                            lambda s: 1.0 / (s * np.log(s))),
    "identity": LinkFunction("identity", lambda s: s, lambda s: np.ones_like(s)),
    "logit": LinkFunction("logit", lambda s: np.log((1.0 - s) / s),
                          lambda s: -1.0 / (s * (1.0 - s))),
}


def get_link(link) -> LinkFunction:
    if isinstance(link, LinkFunction):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise ValueError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None


@dataclass(frozen=True, eq=False)
class BetaEstimate:
    coefficients: np.ndarray
    horizon: float
    link: str
    nuisance: str = ""
    n_floored: int = 0
    # per-observation pieces, kept for diagnostics
    plugin_terms: np.ndarray | None = None
    augmentation_terms: np.ndarray | None = None


def _curves(model_or_curves) -> StepCurves:
    if isinstance(model_or_curves, StepCurves):
        return model_or_curves
    return model_or_curves.training_curves()


def _terms(data, t, survival, censoring, link):
    link = get_link(link)
    grid = event_grid(data, upto=t)
    S_curves = _curves(survival)
    dlam, S, _ = on_grid(S_curves, grid)
    K_left = _curves(censoring).survival(grid, side="left")
    dN, at_risk = counting_processes(data, grid)
    dM = dN - at_risk * dlam
    aug = np.sum(dM / (np.maximum(S, EPS) * np.maximum(K_left, EPS)), axis=1)
    s_t = S_curves.survival([t])[:, 0]
    floored = (s_t < EPS) | (s_t > 1 - EPS)
    n_floored = int(floored.sum())
    if n_floored:
        log.info("floored S(t|X) for %d of %d observations", n_floored, data.n)
    if n_floored > MAX_FLOOR_FRACTION * data.n:
        raise DataValidationError(
            f"S(t|X) outside ({EPS}, 1-{EPS}) for {n_floored}/{data.n} observations; "
            "the link is undefined there (is the horizon too late or too early?)")
    s_t = np.clip(s_t, EPS, 1 - EPS)
    gs = link.g(s_t)
    Xc = data.X - data.X.mean(axis=0)
    plugin = (gs - gs.mean())[:, None] * Xc
    augmentation = Xc * (link.g_prime(s_t) * s_t * aug)[:, None]
    V = Xc.T @ Xc / data.n
    return plugin, augmentation, V, Xc, n_floored


def estimate_beta_al(data: Dataset, t, survival, censoring, link="cloglog",
                     nuisance="") -> BetaEstimate:
    """One-step estimator of the assumption-lean coefficient at horizon ``t``.

    ``survival`` and ``censoring`` are fitted conditional models (their
    in-sample predictions are used) or ready-made :class:`StepCurves` for the
    rows of ``data``.
    """
    plugin, augmentation, V, _, n_floored = _terms(data, t, survival, censoring, link)
    rhs = (plugin - augmentation).mean(axis=0)
    if np.linalg.matrix_rank(V) < V.shape[0]:
        raise CollinearityError("empirical covariance of X is singular")
    beta = np.linalg.solve(V, rhs)
    return BetaEstimate(beta, float(t), get_link(link).name, nuisance, n_floored,
                        plugin, augmentation)


def beta_influence(data: Dataset, beta: BetaEstimate, survival, censoring) -> np.ndarray:
    """Estimated efficient influence function of the coefficient, one row per subject."""
    plugin, augmentation, V, Xc, _ = _terms(data, beta.horizon, survival, censoring, beta.link)
    b = beta.coefficients
    d1 = plugin - augmentation - V @ b
    d2 = np.einsum("ni,nj,j->ni", Xc, Xc, b) - V @ b
    Vinv = np.linalg.inv(V)
    return (d1 - d2) @ Vinv.T


def compute_scores(data: Dataset, beta) -> np.ndarray:
    coef = beta.coefficients if isinstance(beta, BetaEstimate) else np.asarray(beta, float)
    if coef.shape != (data.d,):
        raise DataValidationError(f"coefficient length {coef.shape} does not match d={data.d}")
    return data.X @ coef
