from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from ivstrength.errors import ConfigurationError, RankDeficientError, SingularGramError
from ivstrength.model import (
    Dataset,
    DGPParams,
    ErrorFamily,
    dgp_generate,
    difference_identity,
    difference_on_rows,
    estimator_difference,
    gram_forms,
    instrument_rank,
    ols_fit,
    paper_sigma,
    tsls_fit,
)


def dense_projector(Z):
    return Z @ np.linalg.inv(Z.T @ Z) @ Z.T


def random_dataset(rng, n=30, p=1, K=5):
    Z = rng.standard_normal((n, K))
    Y = Z @ rng.standard_normal((K, p)) + rng.standard_normal((n, p))
    y = Y @ np.ones(p) + rng.standard_normal(n)
    return Dataset(y, Y, Z)


datasets = st.builds(
    lambda seed, n, p, extra: random_dataset(np.random.default_rng(seed), n=n, p=p, K=p + extra),
    st.integers(0, 2**32 - 1),
    st.integers(12, 40),
    st.integers(1, 3),
    st.integers(1, 6),
)


# --- Dataset --------------------------------------------------------------

def test_dataset_reshapes_vectors():
    d = Dataset([1.0, 2.0, 3.0], [1.0, 2.0, 4.0], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert (d.n, d.p, d.K) == (3, 1, 2)
    assert d.Y.shape == (3, 1)


def test_dataset_rejects_mismatched_rows():
    with pytest.raises(ConfigurationError, match="row counts"):
        Dataset(np.zeros(3), np.zeros((4, 1)), np.zeros((3, 2)))


def test_dataset_rejects_nan():
    with pytest.raises(ConfigurationError, match="NaN"):
        Dataset([1.0, np.nan, 2.0], np.zeros((3, 1)), np.eye(3)[:, :2])


def test_validate_dimension_order():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigurationError, match="p < K < n"):
        Dataset(rng.standard_normal(4), rng.standard_normal((4, 1)), rng.standard_normal((4, 4))).validate()
    random_dataset(rng).validate()


def test_validate_rank_deficient_reports_rank():
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((20, 3))
    Z = np.column_stack([Z, Z[:, 0] + Z[:, 1]])
    d = Dataset(rng.standard_normal(20), rng.standard_normal((20, 1)), Z)
    with pytest.raises(RankDeficientError) as info:
        d.validate()
    assert info.value.rank == 3 and info.value.expected == 4
    with pytest.raises(RankDeficientError):
        gram_forms(d)


def test_instrument_rank_full():
    assert instrument_rank(np.random.default_rng(2).standard_normal((10, 4))) == 4


# --- Gram forms and fits ----------------------------------------------------

def test_gram_forms_hand_example():
    Z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    g = gram_forms(Dataset([1.0, 1.0, 1.0], [1.0, 2.0, 3.0], Z))
    assert g.YPY[0, 0] == pytest.approx(5.0, abs=1e-12)
    assert g.YPy[0] == pytest.approx(3.0, abs=1e-12)
    assert g.YY[0, 0] == pytest.approx(14.0, abs=1e-12)
    assert g.Yy[0] == pytest.approx(6.0, abs=1e-12)


def test_square_instruments_give_identity_projector():
    rng = np.random.default_rng(3)
    n = 6
    d = Dataset(rng.standard_normal(n), rng.standard_normal((n, 2)), rng.standard_normal((n, n)))
    g = gram_forms(d)
    np.testing.assert_allclose(g.YPY, g.YY, rtol=1e-12)
    np.testing.assert_allclose(g.YPy, g.Yy, rtol=1e-12)
    np.testing.assert_allclose(tsls_fit(d), ols_fit(d), rtol=1e-10)
    np.testing.assert_allclose(estimator_difference(d), 0.0, atol=1e-10)


def test_endogenous_in_instrument_space():
    rng = np.random.default_rng(4)
    Z = rng.standard_normal((15, 3))
    d = Dataset(Z @ [1.0, -2.0, 0.5] + rng.standard_normal(15), Z, Z)
    np.testing.assert_allclose(tsls_fit(d), ols_fit(d), rtol=1e-10)


def test_ols_examples():
    assert ols_fit(Dataset([2.0, 4.0, 6.0], [1.0, 2.0, 3.0], np.eye(3)[:, :2]))[0] == pytest.approx(2.0)
    assert ols_fit(Dataset([1.0, 1.0], [1.0, -1.0], [[1.0], [0.0]]))[0] == pytest.approx(0.0, abs=1e-15)
    d = Dataset([2.0, 4.0, 6.0, 8.4], [1.0, 2.0, 3.0, 4.0], np.eye(4)[:, :2])
    assert ols_fit(d)[0] == pytest.approx(61.6 / 30, rel=1e-14)


def test_ols_singular_reports_condition():
    d = Dataset([1.0, 2.0, 3.0], np.column_stack([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]]), np.eye(3))
    with pytest.raises(SingularGramError) as info:
        ols_fit(d)
    assert info.value.rcond < 1e-12


def test_tsls_and_difference_match_dense_oracle():
    rng = np.random.default_rng(5)
    d = random_dataset(rng, n=6, p=1, K=2)
    P = dense_projector(d.Z)
    Y, y = d.Y, d.y
    tsls = np.linalg.solve(Y.T @ P @ Y, Y.T @ P @ y)
    ols = np.linalg.solve(Y.T @ Y, Y.T @ y)
    np.testing.assert_allclose(tsls_fit(d), tsls, rtol=1e-12)
    np.testing.assert_allclose(estimator_difference(d), tsls - ols, rtol=1e-10)
    # same coefficient as regressing y on P_Z Y
    PY = P @ Y
    np.testing.assert_allclose(tsls_fit(d), np.linalg.lstsq(PY, y, rcond=None)[0], rtol=1e-10)


def test_zero_outcome_gives_zero_difference():
    rng = np.random.default_rng(6)
    d = random_dataset(rng)
    d0 = Dataset(np.zeros(d.n), d.Y, d.Z)
    assert np.all(estimator_difference(d0) == 0.0)


@settings(max_examples=40, deadline=None)
@given(datasets)
def test_annihilator_identity(d):
    a, b = estimator_difference(d), difference_identity(d)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10 * np.abs(tsls_fit(d)).max())


@settings(max_examples=40, deadline=None)
@given(datasets)
def test_projection_contraction(d):
    g = gram_forms(d)
    np.testing.assert_allclose(g.YPY, g.YPY.T, rtol=0, atol=0)
    np.testing.assert_allclose(g.YY, g.YY.T, rtol=0, atol=0)
    gap = np.linalg.eigvalsh(g.YY - g.YPY)
    assert gap.min() >= -1e-8 * np.linalg.norm(g.YY)
    assert np.trace(g.YY - g.YPY) >= 0


@settings(max_examples=40, deadline=None)
@given(datasets, st.integers(0, 2**32 - 1))
def test_rotation_invariance(d, seed):
    Q = ortho_group.rvs(d.K, random_state=seed) if d.K > 1 else np.array([[-1.0]])
    dr = Dataset(d.y, d.Y, d.Z @ Q)
    g, gr = gram_forms(d), gram_forms(dr)
    np.testing.assert_allclose(gr.YPY, g.YPY, rtol=1e-10)
    np.testing.assert_allclose(tsls_fit(dr), tsls_fit(d), rtol=1e-10)
    np.testing.assert_allclose(estimator_difference(dr), estimator_difference(d), rtol=1e-8, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(datasets, st.floats(0.01, 100.0))
def test_difference_linear_in_outcome(d, c):
    scaled = Dataset(c * d.y, d.Y, d.Z)
    np.testing.assert_allclose(estimator_difference(scaled), c * estimator_difference(d), rtol=1e-9, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(datasets, st.integers(0, 2**32 - 1))
def test_fast_row_path_matches_qr(d, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(d.K + 2, d.n + 1))
    rows = np.sort(rng.choice(d.n, r, replace=False))
    np.testing.assert_allclose(difference_on_rows(d, rows), estimator_difference(d.take(rows)), rtol=1e-8, atol=1e-12)


def test_fast_row_path_falls_back_on_ill_conditioned_instruments():
    rng = np.random.default_rng(7)
    Z = rng.standard_normal((40, 4))
    Z[:, 3] = Z[:, 2] + 1e-6 * rng.standard_normal(40)
    Y = Z @ np.ones((4, 1)) + rng.standard_normal((40, 1))
    d = Dataset(Y[:, 0] + rng.standard_normal(40), Y, Z)
    rows = np.arange(30)
    np.testing.assert_allclose(difference_on_rows(d, rows), estimator_difference(d.take(rows)), rtol=1e-10)


# --- design -------------------------------------------------------------------

def test_paper_sigma_layout():
    S = paper_sigma(2, 0.9)
    np.testing.assert_array_equal(S, [[1.0, 0.9, 0.9], [0.9, 2.0, 3.0], [0.9, 3.0, 6.0]])
    assert paper_sigma(3, 0.5)[2, 3] == 10.0
    with pytest.raises(ConfigurationError):
        paper_sigma(4, 0.5)


def test_dgp_params_rejects_non_pd():
    with pytest.raises(ConfigurationError, match="positive definite"):
        DGPParams(Sigma=[[1.0, 2.0], [2.0, 1.0]], c_n=0.1)
    with pytest.raises(ConfigurationError, match="symmetric"):
        DGPParams(Sigma=[[1.0, 0.5], [0.2, 1.0]], c_n=0.1)


def test_dgp_rejects_n_at_most_K():
    with pytest.raises(ConfigurationError):
        dgp_generate(DGPParams.paper(1, 0.9, 0.1), n=10, K=10, seed=0)


def test_dgp_zero_strength_gives_Y_equal_V():
    data, lat = dgp_generate(DGPParams.paper(2, 0.9, 0.0), n=50, K=10, seed=3)
    assert np.all(lat.Pi == 0.0)
    np.testing.assert_array_equal(data.Y, lat.V)
    np.testing.assert_allclose(data.y, data.Y @ lat.beta + lat.u, rtol=0, atol=1e-15)


def test_dgp_deterministic_and_structured():
    params = DGPParams.paper(1, 0.9, 1.0)
    a, la = dgp_generate(params, 60, 12, seed=11)
    b, _ = dgp_generate(params, 60, 12, seed=11)
    np.testing.assert_array_equal(a.stacked, b.stacked)
    np.testing.assert_allclose(la.Pi, la.c_n * la.C / np.sqrt(60))
    np.testing.assert_allclose(a.Y, a.Z @ la.Pi + la.V, atol=1e-14)


def test_dgp_first_stage_variance():
    # Var(Y_i1) = 1 + c_n^2 K/n with C ~ N(0, I)
    n, K = 1000, 275
    draws = np.concatenate([dgp_generate(DGPParams.paper(1, 0.9, 1.0), n, K, seed=s)[0].Y[:, 0] for s in range(100)])
    assert draws.var() == pytest.approx(1.275, abs=0.03)


@pytest.mark.parametrize("family", [ErrorFamily.GAUSSIAN, ErrorFamily.STUDENT_T])
def test_dgp_error_covariance(family):
    params = DGPParams.paper(2, 0.9, 0.0, family)
    n = 100_000
    _, lat = dgp_generate(params, n, 3, seed=21)
    E = np.column_stack([lat.u, lat.V])
    cov_vu = (lat.V * lat.u[:, None]).mean(axis=0)
    se = (lat.V * lat.u[:, None]).std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(cov_vu - 0.9) <= 3 * se)
    np.testing.assert_allclose(np.cov(E.T), params.Sigma, atol=0.1 * np.abs(params.Sigma).max())
