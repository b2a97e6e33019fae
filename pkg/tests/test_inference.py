import math

import numpy as np
import pytest

from concordia.exceptions import DataValidationError
from concordia.inference import (EstimatorSpec, bootstrap, bootstrap_multi, contrast,
                                 crossfit_wrap, resolve_threads)


def test_constant_estimator_has_zero_se(s1_small):
    res = bootstrap(lambda d, s: 0.3, s1_small, B=20, seed=1)
    assert res.point == 0.3 and res.se == 0.0
    assert res.ci_lower == res.ci_upper == 0.3
    assert res.failures == 0 and not res.degraded


def test_bootstrap_se_of_mean(s1_small):
    d = s1_small
    res = bootstrap(lambda d, s: float(d.time.mean()), d, B=2000, seed=3)
    expected = d.time.std() / math.sqrt(d.n)
    assert res.se == pytest.approx(expected, rel=0.1)


def test_bootstrap_deterministic(s1_small):
    spec = EstimatorSpec()
    a = bootstrap_multi(spec, s1_small, B=8, seed=4)
    b = bootstrap_multi(spec, s1_small, B=8, seed=4)
    c = bootstrap_multi(spec, s1_small, B=8, seed=5)
    assert a == b
    assert a["C"].se != c["C"].se


def test_bootstrap_row_order_invariant(s1_small):
    d = s1_small
    dp = d.subset(np.random.default_rng(0).permutation(d.n))
    spec = EstimatorSpec(measures=("C",))
    a = bootstrap_multi(spec, d, B=8, seed=2)["C"]
    b = bootstrap_multi(spec, dp, B=8, seed=2)["C"]
    assert a.point == pytest.approx(b.point, abs=1e-12)
    assert a.se == pytest.approx(b.se, abs=1e-12)


def test_bootstrap_point_matches_evaluate(s1_small):
    spec = EstimatorSpec()
    res = bootstrap_multi(spec, s1_small, B=4, seed=7)
    seed_point = np.random.SeedSequence(7).spawn(2)[0].generate_state(1)[0]
    direct = spec.evaluate(s1_small, int(seed_point))
    assert {m: r.point for m, r in res.items()} == direct


def test_wald_and_percentile(s1_small):
    vals = bootstrap(lambda d, s: float(d.time.mean()), s1_small, B=200, seed=0)
    z = 1.959963984540054
    assert vals.ci_upper - vals.point == pytest.approx(z * vals.se, rel=1e-12)
    pct = bootstrap(lambda d, s: float(d.time.mean()), s1_small, B=200, seed=0,
                    interval="percentile")
    assert pct.ci_lower < pct.point < pct.ci_upper
    with pytest.raises(DataValidationError):
        bootstrap(lambda d, s: 0.0, s1_small, B=5, interval="bca")


def test_failures_counted_and_degraded(s1_small):
    from concordia.exceptions import FitError
    calls = iter(range(10 ** 6))

    def flaky(d, s):
        if next(calls) % 3 == 1:
            raise FitError("boom")
        return 1.0

    res = bootstrap(flaky, s1_small, B=30, seed=0)
    assert 0 < res.failures < 30 and res.degraded


def test_too_few_replicates(s1_small):
    with pytest.raises(DataValidationError):
        bootstrap_multi(EstimatorSpec(), s1_small, B=1)


def test_contrast_with_itself_is_zero(s1_small):
    spec = EstimatorSpec(measures=("C",))
    res = contrast(spec, spec, s1_small, B=6, seed=1)
    assert res.delta == 0.0 and res.se == 0.0 and res.paired


def test_contrast_requires_shared_horizon(s1_small):
    a = EstimatorSpec(measures=("C",), horizon=6.0)
    b = EstimatorSpec(measures=("C",), horizon=8.0)
    with pytest.raises(DataValidationError):
        contrast(a, b, s1_small, B=4)


def test_spec_validation():
    with pytest.raises(DataValidationError):
        EstimatorSpec(method="gh", measures=("AUC",))
    with pytest.raises(DataValidationError):
        EstimatorSpec(crossfit=1)
    with pytest.raises(DataValidationError):
        EstimatorSpec.from_name("nope")
    assert EstimatorSpec.from_name("onestep-rf-cf").label == "onestep-rf-cf5"
    assert EstimatorSpec.from_name("gh").measures == ("K", "C")


def test_crossfit_wrap(s1_small):
    spec = crossfit_wrap(EstimatorSpec(), 4, s1_small)
    assert spec.crossfit == 4
    with pytest.raises(DataValidationError):
        crossfit_wrap(EstimatorSpec(), 1)
    with pytest.raises(DataValidationError):
        crossfit_wrap(EstimatorSpec(method="gh", measures=("C",)), 3)
    with pytest.raises(DataValidationError):
        crossfit_wrap(EstimatorSpec(), 500, s1_small)


def test_resolve_threads(monkeypatch):
    assert resolve_threads(3) == 3
    monkeypatch.setenv("CONCORDIA_THREADS", "2")
    assert resolve_threads() == 2
    monkeypatch.setenv("CONCORDIA_THREADS", "x")
    with pytest.raises(DataValidationError):
        resolve_threads()


def test_auc_at_other_time_reestimates_beta(s1_small):
    d = s1_small
    (est, beta) = EstimatorSpec(measures=("AUC",), t=4.0).estimates(d, 0)
    assert beta.horizon == 4.0
    (est_f, beta_f) = EstimatorSpec(measures=("AUC",), t=4.0, freeze_beta=True).estimates(d, 0)
    assert beta_f.horizon == d.tau
    assert est["AUC"].horizon == est_f["AUC"].horizon == 4.0


def test_contrast_detects_prognostic_covariate():
    from concordia.simlab import ScenarioConfig, generate
    d = generate(ScenarioConfig(1, 1000, seed=14))
    full = EstimatorSpec(measures=("C",), covariates=("x1", "x2"))
    reduced = EstimatorSpec(measures=("C",), covariates=("x1",))
    res = contrast(full, reduced, d, B=50, seed=2)
    assert res.delta > 0 and res.ci_lower > 0
