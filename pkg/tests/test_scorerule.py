import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from concordia.core import Dataset, StepCurves
from concordia.exceptions import CollinearityError, DataValidationError
from concordia.nuisance import fit_cox, fit_pooled
from concordia.scorerule import (LINKS, beta_influence, compute_scores, estimate_beta_al,
                                 get_link)
from concordia.simlab import ScenarioConfig, generate

from oracles import km_loop


def _grouped_uncensored(n=120, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n).astype(float)
    # distinct times so every group curve is a proper step function
    t = rng.exponential(1 / np.exp(0.9 * x)) + 1e-9 * np.arange(n)
    return Dataset(t, np.ones(n, int), x[:, None], ("x",), tau=float(np.quantile(t, 0.8)))


def _within_group_curves(d):
    """Saturated within-level Nelson-Aalen hazards on the pooled event times."""
    knots = np.unique(d.time)
    inc = np.zeros((d.n, len(knots)))
    for lvl in np.unique(d.X[:, 0]):
        rows = d.X[:, 0] == lvl
        t = d.time[rows]
        dN = (t[:, None] == knots[None, :]).sum(axis=0)
        Y = (t[:, None] >= knots[None, :]).sum(axis=0)
        inc[rows] = np.where(Y > 0, dN / np.maximum(Y, 1), 0.0)
    return StepCurves(knots, inc, "product")


def test_saturated_uncensored_equals_plugin():
    d = _grouped_uncensored()
    t = d.tau
    S = _within_group_curves(d)
    beta = estimate_beta_al(d, t, S, fit_pooled(d, "censoring"))
    # oracle: group-wise product limits by loop, then var^-1 cov(g(S), X)
    g = np.empty(d.n)
    for lvl in (0.0, 1.0):
        rows = d.X[:, 0] == lvl
        km = km_loop(list(d.time[rows]), [1] * int(rows.sum()))
        s = min((v for u, v in km.items() if u <= t), default=1.0)
        g[rows] = math.log(-math.log(s))
    x = d.X[:, 0]
    oracle = np.mean((g - g.mean()) * (x - x.mean())) / np.var(x)
    assert beta.coefficients[0] == pytest.approx(oracle, abs=1e-12)
    np.testing.assert_allclose(beta.augmentation_terms.mean(axis=0), 0.0, atol=1e-12)


@pytest.fixture(scope="module")
def s1_big():
    d = generate(ScenarioConfig(1, 2000, seed=21))
    rng = np.random.default_rng(5)
    noise = rng.normal(size=d.n)
    d3 = Dataset(d.time, d.event, np.column_stack([d.X, noise]), ("x1", "x2", "z"), d.tau)
    return d, d3


def _fit_beta(d, t=None):
    t = d.tau if t is None else t
    S = fit_cox(d)
    K = fit_pooled(d, "censoring") if d.event.all() else fit_cox(d, "censoring")
    return estimate_beta_al(d, t, S, K), S, K


def test_scenario1_recovers_generating_coefficients(s1_big):
    d, _ = s1_big
    beta, S, K = _fit_beta(d)
    se = beta_influence(d, beta, S, K).std(axis=0) / math.sqrt(d.n)
    truth = np.log([0.5, 2.0])
    assert np.all(np.abs(beta.coefficients - truth) < 3 * se)


def test_independent_covariate_near_zero(s1_big):
    _, d3 = s1_big
    beta, S, K = _fit_beta(d3)
    se = beta_influence(d3, beta, S, K).std(axis=0) / math.sqrt(d3.n)
    assert abs(beta.coefficients[2]) < 3 * se[2]


def test_estimating_equation_solved_exactly(s1_small):
    beta, S, K = _fit_beta(s1_small)
    eif = beta_influence(s1_small, beta, S, K)
    assert np.linalg.norm(eif.mean(axis=0)) < 1e-8


def test_affine_equivariance(s1_small):
    d = s1_small
    c = -3.5
    d2 = Dataset(d.time, d.event, d.X * [1.0, c], d.covariate_names, d.tau)
    b1, _, _ = _fit_beta(d)
    b2, _, _ = _fit_beta(d2)
    np.testing.assert_allclose(b2.coefficients, b1.coefficients / [1.0, c], atol=1e-10)
    np.testing.assert_allclose(compute_scores(d2, b2), compute_scores(d, b1), atol=1e-10)


def test_martingale_term_mean_small_without_censoring():
    n = 400
    norms = []
    for r in range(50):
        d = generate(ScenarioConfig(1, n, seed=1000 + r, overrides={"censoring": "none"}))
        beta, _, _ = _fit_beta(d)
        norms.append(np.linalg.norm(beta.augmentation_terms.mean(axis=0)))
    assert np.mean(norms) < 5 / math.sqrt(n)


def test_cloglog_identity():
    s = np.random.default_rng(0).uniform(1e-8, 1 - 1e-8, 1000)
    link = LINKS["cloglog"]
    np.testing.assert_allclose(link.g_prime(s) * s - 1 / np.log(s), 0.0, atol=1e-12)


@given(st.floats(0.01, 0.99))
def test_link_derivatives(s):
    for name in ("cloglog", "identity", "logit"):
        link = get_link(name)
        h = 1e-6
        num = (link.g(s + h) - link.g(s - h)) / (2 * h)
        assert link.g_prime(np.array(s)) == pytest.approx(num, rel=1e-5, abs=1e-8)


class TestComputeScores:
    d = Dataset([1.0, 2.0], [1, 1], [[1.0, 0.5], [2.0, -1.0]], tau=3)

    def test_unit_vector(self):
        np.testing.assert_array_equal(compute_scores(self.d, [1.0, 0.0]), self.d.X[:, 0])

    def test_zero(self):
        np.testing.assert_array_equal(compute_scores(self.d, [0.0, 0.0]), [0.0, 0.0])

    def test_arithmetic(self):
        y = compute_scores(self.d, np.log([0.5, 2.0]))[0]
        assert y == pytest.approx(math.log(0.5) + 0.5 * math.log(2), abs=1e-15)
        assert round(y, 4) == -0.3466

    def test_dimension_mismatch(self):
        with pytest.raises(DataValidationError):
            compute_scores(self.d, [1.0])


def test_collinear_covariates_rejected(s1_small):
    d = s1_small
    dup = Dataset(d.time, d.event, np.column_stack([d.X, 2 * d.X[:, 1]]), ("a", "b", "c"), d.tau)
    S = fit_pooled(dup)
    with pytest.raises(CollinearityError):
        estimate_beta_al(dup, dup.tau, S, fit_pooled(dup, "censoring"))


def test_too_many_floored_rejected(s1_small):
    d = s1_small
    knots = np.array([1.0, 2.0])
    inc = np.tile([0.5, 0.5], (d.n, 1))
    inc[: int(0.8 * d.n)] = [0.5, 30.0]  # S(2) ~ e^-30 for 80% of rows
    S = StepCurves(knots, inc, "exp")
    with pytest.raises(DataValidationError, match="outside"):
        estimate_beta_al(d, 2.0, S, fit_pooled(d, "censoring"))
