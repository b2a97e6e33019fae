import numpy as np
import pytest
from hypothesis import given, strategies as st

from concordia.competitors import (cox_with_coefficients, evaluate_competitor, gh_estimate,
                                   gh_from_scores, ipcw_auc_from_weights, ipcw_c_from_weights,
                                   ipcw_cox_auc, ipcw_cox_c, ipcw_uno_auc, ipcw_uno_c)
from concordia.core import Dataset
from concordia.exceptions import DataValidationError, UnstableWeightsError
from concordia.nuisance import fit_cox, fit_kaplan_meier, with_convention

from oracles import gh_loop, uno_auc_loop, uno_c_loop


@pytest.fixture(scope="module")
def s1():
    from concordia.simlab import ScenarioConfig, generate
    d = generate(ScenarioConfig(1, 150, seed=31))
    return d, fit_cox(d)


def test_gh_matches_loop(s1):
    d, cox = s1
    lp = cox.linear_predictor(d.X)
    lam = float(cox.baseline_cumhaz(d.tau))
    K, C = gh_from_scores(lp, lam)
    Ko, Co = gh_loop(list(lp), lam)
    assert K == pytest.approx(Ko, abs=1e-12)
    assert C == pytest.approx(Co, abs=1e-12)


@given(st.integers(2, 30), st.floats(0.01, 5.0))
def test_gh_null_model(n, lam):
    # every linear predictor tied: kernels are 1/2 and every pair has w = 1 - exp(-2 lam)
    K, C = gh_from_scores(np.zeros(n), lam)
    assert K == pytest.approx(0.5 * (1 - np.exp(-2 * lam)), rel=1e-12)
    assert C == pytest.approx(0.5, rel=1e-12)


def test_gh_null_coefficients(s1):
    d, _ = s1
    null = cox_with_coefficients(d, np.zeros(d.X.shape[1]))
    lam = float(null.baseline_cumhaz(d.tau))
    assert gh_estimate(d, measure="K", cox_model=null).point == pytest.approx(
        0.5 * (1 - np.exp(-2 * lam)), rel=1e-12)
    assert gh_estimate(d, measure="C", cox_model=null).point == pytest.approx(0.5, rel=1e-12)


def test_gh_ties_match_loop():
    lp = np.array([0.3, 0.3, -0.2, 0.3, 1.1])
    K, C = gh_from_scores(lp, 0.8)
    Ko, Co = gh_loop(list(lp), 0.8)
    assert K == pytest.approx(Ko, abs=1e-14) and C == pytest.approx(Co, abs=1e-14)


def test_gh_two_point():
    K, C = gh_from_scores(np.array([0.5, -0.5]), 1.0)
    w = 1 - np.exp(-(np.exp(0.5) + np.exp(-0.5)))
    kern = 1 / (1 + np.exp(-1.0))
    assert K == pytest.approx(kern * w, abs=1e-15)
    assert C == pytest.approx(kern, abs=1e-15)


@given(st.floats(0.2, 5.0))
def test_gh_lp_scale_changes_only_with_coefficients(c):
    # a monotone relabelling of the covariate with refitted coefficients leaves lp unchanged
    from concordia.simlab import ScenarioConfig, generate
    d = generate(ScenarioConfig(1, 60, seed=2))
    d2 = Dataset(d.time, d.event, d.X * c, d.covariate_names, d.tau)
    a = gh_estimate(d, measure="C")
    b = gh_estimate(d2, measure="C")
    assert a.point == pytest.approx(b.point, abs=1e-9)


def test_gh_rejects_auc(s1):
    d, cox = s1
    with pytest.raises(DataValidationError):
        gh_estimate(d, measure="AUC", cox_model=cox)


def test_uno_matches_loops(s1):
    d, cox = s1
    lp = cox.linear_predictor(d.X)
    G = fit_kaplan_meier(d.time, 1 - d.event).survival(d.time, side="left")
    assert ipcw_uno_c(d, None, cox).point == pytest.approx(
        uno_c_loop(d.time, d.event, lp, d.tau, G), abs=1e-12)
    assert ipcw_uno_auc(d, 4.0, cox).point == pytest.approx(
        uno_auc_loop(d.time, d.event, lp, 4.0, G), abs=1e-12)


def test_ipcw_cox_collapses_to_uno(s1):
    d, cox = s1
    null = with_convention(cox_with_coefficients(d, np.zeros(d.X.shape[1]), "censoring"), "product")
    for t in (2.0, 4.0, d.tau):
        assert ipcw_cox_c(d, t, cox, null).point == pytest.approx(
            ipcw_uno_c(d, t, cox).point, abs=1e-10)
        assert ipcw_cox_auc(d, t, cox, null).point == pytest.approx(
            ipcw_uno_auc(d, t, cox).point, abs=1e-10)


@given(st.floats(1e-3, 1e3))
def test_weight_scale_invariance(c):
    rng = np.random.default_rng(0)
    n = 25
    time = rng.exponential(size=n)
    scores = rng.normal(size=n)
    cases = np.flatnonzero(rng.random(n) < 0.6)
    w = rng.uniform(0.2, 1.0, (len(cases), n))
    assert ipcw_c_from_weights(time, scores, cases, c * w) == pytest.approx(
        ipcw_c_from_weights(time, scores, cases, w), rel=1e-12)
    tau = float(np.median(time))
    cases = cases[time[cases] <= tau]
    wc, wk = rng.uniform(0.2, 1, len(cases)), rng.uniform(0.2, 1, int(np.sum(time > tau)))
    assert ipcw_auc_from_weights(time, scores, cases, tau, c * wc, wk / c) == pytest.approx(
        ipcw_auc_from_weights(time, scores, cases, tau, wc, wk), rel=1e-12)


def test_unstable_weights_rejected(s1):
    d, cox = s1
    # a censoring model that puts almost all mass before the first case
    cm = cox_with_coefficients(d, np.zeros(d.X.shape[1]), "censoring")
    bad = type(cm)(cm.coefficients, type(cm.baseline_cumhaz)(cm.baseline_cumhaz.knots,
                                                              cm.baseline_cumhaz.values + 50.0),
                   cm.covariate_means, True, 0, 0.0, "censoring")
    with pytest.raises(UnstableWeightsError):
        ipcw_cox_c(d, None, cox, bad)


def test_evaluate_competitor(s1):
    d, _ = s1
    out = evaluate_competitor("ipcw-cox", d)
    assert set(out) == {"C", "AUC"} and all(0 < v < 1 for v in out.values())
    assert set(evaluate_competitor("gh", d)) == {"K", "C"}
    with pytest.raises(ValueError):
        evaluate_competitor("nope", d)


def test_uno_without_censoring_is_concordance_fraction():
    rng = np.random.default_rng(4)
    n = 40
    time = rng.exponential(size=n)
    lp = rng.normal(size=n)
    d = Dataset(time, np.ones(n, int), lp[:, None], ("x",), float(np.median(time)))
    cox = cox_with_coefficients(d, [1.0])
    tau = d.tau
    comp = (time[:, None] < time[None, :]) & (time[:, None] <= tau)
    conc = comp & (lp[:, None] > lp[None, :])
    assert ipcw_uno_c(d, tau, cox).point == pytest.approx(conc.sum() / comp.sum(), abs=1e-14)


def test_uno_three_observation_hand_case():
    # observation 2 censored at 2: G(3-) = 2/3 for the case at 3
    d = Dataset([1.0, 2.0, 3.0], [1, 0, 1], [[3.0], [2.0], [1.0]], ("x",), tau=3.0)
    cox = cox_with_coefficients(d, [1.0])
    # cases 1 (G=1) and 3 (G=2/3); comparable pairs: (1,2), (1,3); 3 has no later time
    assert ipcw_uno_c(d, 3.0, cox).point == pytest.approx(1.0)
    d2 = Dataset([1.0, 2.0, 3.0], [1, 0, 1], [[1.0], [3.0], [2.0]], ("x",), tau=3.0)
    assert ipcw_uno_c(d2, 3.0, cox_with_coefficients(d2, [1.0])).point == pytest.approx(0.0)
    d3 = Dataset([1.0, 2.0, 3.0], [1, 0, 1], [[2.0], [3.0], [1.0]], ("x",), tau=3.0)
    assert ipcw_uno_c(d3, 3.0, cox_with_coefficients(d3, [1.0])).point == pytest.approx(0.5)


def test_ipcw_invariant_to_scaled_predictor(s1):
    d, cox = s1
    cm = fit_cox(d, "censoring")
    doubled = cox_with_coefficients(d, 2 * cox.coefficients)
    for f in (ipcw_cox_c, ipcw_cox_auc):
        assert f(d, 5.0, doubled, cm).point == pytest.approx(f(d, 5.0, cox, cm).point, abs=1e-12)
    for f in (ipcw_uno_c, ipcw_uno_auc):
        assert f(d, 5.0, doubled).point == pytest.approx(f(d, 5.0, cox).point, abs=1e-12)


def test_ipcw_permutation_invariance(s1):
    d, cox = s1
    dp = d.subset(np.random.default_rng(3).permutation(d.n))
    for name in ("ipcw-uno", "ipcw-cox", "gh"):
        a, b = evaluate_competitor(name, d), evaluate_competitor(name, dp)
        for m in a:
            assert a[m] == pytest.approx(b[m], abs=1e-10)
