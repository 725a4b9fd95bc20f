from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from _oracles import chi2_quantile_newton
from ivstrength.errors import ConfigurationError, SingularCovarianceError
from ivstrength.model import Dataset, DGPParams, dgp_generate
from ivstrength.procedure import (
    Scaling,
    TestConfig,
    ThetaSource,
    chi_square_quantile,
    critical_value,
    p_value,
    run_spec_test,
    wald_statistic,
)


@pytest.fixture(scope="module")
def h0_data():
    return dgp_generate(DGPParams.paper(1, 0.9, 0.1), 120, 30, seed=17)[0]


@pytest.fixture(scope="module")
def h1_data():
    return dgp_generate(DGPParams.paper(2, 0.9, 1.0), 150, 30, seed=18)[0]


# --- chi-square calibration ------------------------------------------------

@pytest.mark.parametrize("df,prob,expected", [(1, 0.95, 3.841459), (3, 0.95, 7.814728), (2, 0.5, 2 * math.log(2))])
def test_quantile_examples(df, prob, expected):
    assert chi_square_quantile(df, prob) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("df", [1, 4, 7, 25])
@pytest.mark.parametrize("prob", [0.01, 0.3, 0.975, 0.999])
def test_quantile_matches_newton_oracle(df, prob):
    assert chi_square_quantile(df, prob) == pytest.approx(chi2_quantile_newton(df, prob), abs=1e-9)


def test_quantile_rejects_out_of_range():
    for prob in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigurationError):
            chi_square_quantile(2, prob)
    with pytest.raises(ConfigurationError):
        chi_square_quantile(0, 0.5)


def test_p_value_examples():
    assert p_value(0.0, 3) == 1.0
    assert p_value(3.841459, 1) == pytest.approx(0.05, abs=1e-6)
    assert p_value(2 * math.log(2), 2) == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_p_value_monotone(df, a, b):
    lo, hi = sorted((a, b))
    assert p_value(hi, df) <= p_value(lo, df)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.floats(0.001, 0.999))
def test_quantile_p_value_round_trip(df, prob):
    assert p_value(chi_square_quantile(df, prob), df) == pytest.approx(1 - prob, abs=1e-9)


def test_critical_value_at_level_one_is_zero():
    assert critical_value(3, 1.0) == 0.0


def test_wald_statistic_zero_theta_and_singular_cov():
    assert wald_statistic(np.zeros(2), np.eye(2), 100.0) == 0.0
    with pytest.raises(SingularCovarianceError) as info:
        wald_statistic(np.ones(2), np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert info.value.eigenvalues.shape == (2,)


# --- configuration ------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        TestConfig(lam=1.0)
    with pytest.raises(ConfigurationError):
        TestConfig(level=0.0)
    with pytest.raises(ConfigurationError):
        TestConfig(m=1)
    assert TestConfig(scaling="subsample").scaling is Scaling.SUBSAMPLE_SIZE
    assert TestConfig(scaling="paper-literal").scaling is Scaling.PAPER_LITERAL
    assert TestConfig(theta_source="full").theta_source is ThetaSource.FULL_SAMPLE


def test_r_not_exceeding_K_is_rejected():
    data = dgp_generate(DGPParams.paper(1, 0.9, 0.1), 60, 40, seed=1)[0]
    with pytest.raises(ConfigurationError, match="must exceed the number of instruments"):
        run_spec_test(data, TestConfig(m=50))


def test_lambda_warning(h0_data):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_spec_test(h0_data, TestConfig(lam=0.3, m=50))
    with pytest.warns(UserWarning, match="recommended interval"):
        res = run_spec_test(h0_data, TestConfig(lam=0.2, m=50))
    assert any("recommended" in w for w in res.warnings)


def test_m_cap_warning():
    data = dgp_generate(DGPParams.paper(1, 0.9, 0.1), 120, 30, seed=2)[0]
    with pytest.warns(UserWarning, match="capped"):
        res = run_spec_test(data, TestConfig(m="auto", m_cap=100))
    assert res.m == 100 and res.cov.m_capped


# --- the procedure ------------------------------------------------------------

def test_result_consistency(h1_data):
    res = run_spec_test(h1_data, TestConfig(m=300, seed=4))
    assert res.df == 2 and res.statistic >= 0
    assert (res.d, res.r, res.m) == (68, 82, 300)
    assert res.scale == 150
    assert res.reject == (res.statistic > chi_square_quantile(2, 0.95)) == (res.p_value < 0.05)
    assert res.statistic == pytest.approx(150 * res.theta @ np.linalg.solve(res.cov.matrix, res.theta), rel=1e-10)


def test_scalings_are_proportional(h0_data):
    base = run_spec_test(h0_data, TestConfig(m=200, seed=3))
    sub = run_spec_test(h0_data, TestConfig(m=200, seed=3, scaling="subsample-size"))
    lit = run_spec_test(h0_data, TestConfig(m=200, seed=3, scaling="paper-literal"))
    assert sub.statistic == pytest.approx(base.statistic * base.r / base.n, rel=1e-12)
    assert lit.statistic == pytest.approx(base.statistic / base.n, rel=1e-12)


def test_full_sample_theta_source(h0_data):
    res = run_spec_test(h0_data, TestConfig(m=200, seed=3, theta_source="full", scaling="subsample-size"))
    np.testing.assert_array_equal(res.theta, res.theta_full)
    assert res.scale == h0_data.n


def test_held_out_subsample_is_not_full_sample(h0_data):
    res = run_spec_test(h0_data, TestConfig(m=200, seed=3))
    assert not np.allclose(res.theta, res.theta_full)


def test_determinism_across_workers(h1_data):
    a = run_spec_test(h1_data, TestConfig(m=300, seed=9, workers=1))
    b = run_spec_test(h1_data, TestConfig(m=300, seed=9, workers=3))
    assert a.statistic == b.statistic
    np.testing.assert_array_equal(a.cov.matrix, b.cov.matrix)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert (a.p_value, a.reject, a.cov.n_failed) == (b.p_value, b.reject, b.cov.n_failed)


def test_monotone_decision_in_level(h1_data):
    decisions = [run_spec_test(h1_data, TestConfig(m=200, seed=2, level=lv)).reject
                 for lv in (0.001, 0.01, 0.05, 0.1, 0.5)]
    for i, rejected in enumerate(decisions):
        if rejected:
            assert all(decisions[i:])


def test_level_one_always_rejects(h0_data):
    assert run_spec_test(h0_data, TestConfig(m=50, level=1.0)).reject


def test_strong_instruments_rejected():
    data = dgp_generate(DGPParams.paper(1, 0.9, 1.0), 300, 50, seed=5)[0]
    assert run_spec_test(data, TestConfig(m=1000, seed=1)).reject


def test_zero_theta_never_rejects():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    T = wald_statistic(np.zeros(2), cov, scale=500.0)
    assert T == 0.0
    assert not any(T > critical_value(2, lv) for lv in (0.01, 0.05, 0.5, 0.99))


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([0.1, 10.0, 3.7]))
def test_invariance_to_rotation_and_scale(seed, c):
    data = dgp_generate(DGPParams.paper(1, 0.9, 0.5), 80, 15, seed=seed)[0]
    Q = ortho_group.rvs(15, random_state=seed % 2**32)
    cfg = TestConfig(m=100, seed=seed)
    base = run_spec_test(data, cfg).statistic
    assert run_spec_test(Dataset(c * data.y, data.Y, data.Z), cfg).statistic == pytest.approx(base, rel=1e-9)
    assert run_spec_test(Dataset(data.y, data.Y, data.Z @ Q), cfg).statistic == pytest.approx(base, rel=1e-9)
