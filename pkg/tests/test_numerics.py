import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coforward.errors import (
    ConvergenceError,
    DimensionError,
    InsufficientDataError,
    NotPSDError,
    ParameterError,
    SingularMatrixError,
)
from coforward.model import PUBLISHED_SIGMA_SIGMA_T_DAILY
from coforward.numerics import (
    TimeGrid,
    bic_subset_select,
    chol_psd,
    expm,
    nls,
    ols,
    pca,
    quad_fixed,
    simpson_rule,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)


# -- expm ------------------------------------------------------------------


def test_expm_examples():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(np.diag([1.0, -1.0])), np.diag([np.e, 1 / np.e]), rtol=1e-14)
    np.testing.assert_allclose(expm(np.array([[0.0, 1.0], [0.0, 0.0]])), [[1.0, 1.0], [0.0, 1.0]], atol=1e-15)


def test_expm_rotation_and_large_norm():
    a = np.array([[0.0, -2.0], [2.0, 0.0]])
    np.testing.assert_allclose(expm(a), [[np.cos(2), -np.sin(2)], [np.sin(2), np.cos(2)]], atol=1e-14)
    # scaling and squaring on a larger argument, against the eigen-decomposition
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, 4))
    sym = 3 * (s + s.T)
    w, v = np.linalg.eigh(sym)
    np.testing.assert_allclose(expm(sym), (v * np.exp(w)) @ v.T, rtol=1e-10)


def test_expm_batched_and_errors():
    a = np.stack([np.diag([0.1 * k, -0.2 * k]) for k in range(5)])
    out = expm(a)
    for k in range(5):
        np.testing.assert_allclose(out[k], np.diag(np.exp([0.1 * k, -0.2 * k])), rtol=1e-14)
    with pytest.raises(DimensionError):
        expm(np.zeros((2, 3)))
    with pytest.raises(ParameterError):
        expm(np.array([[np.nan]]))


def _scaled(a, bound=5.0):
    nrm = np.linalg.norm(a)
    return a if nrm <= bound else a * (bound / nrm)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)))
def test_expm_inverse_property(a):
    a = _scaled(a)
    assert np.linalg.norm(expm(a) @ expm(-a) - np.eye(4)) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)), st.floats(0, 2), st.floats(0, 2))
def test_expm_semigroup_property(a, s, t):
    a = _scaled(a)
    lhs = expm((s + t) * a)
    assert np.linalg.norm(lhs - expm(s * a) @ expm(t * a)) <= 1e-9 * max(1.0, np.linalg.norm(lhs))


# -- quadrature --------------------------------------------------------------


def test_quad_examples():
    assert quad_fixed(lambda x: x**3, 0.0, 1.0, 1) == pytest.approx(0.25, abs=1e-15)
    assert abs(quad_fixed(np.exp, 0.0, 1.0, 64) - (np.e - 1)) < 1e-10
    assert quad_fixed(np.exp, 0.0, 0.0, 4) == 0.0
    with pytest.raises(ParameterError):
        quad_fixed(np.exp, 0.0, 1.0, 0)


def test_simpson_weights():
    x, w = simpson_rule(0.0, 2.0, 3)
    assert x.size == 7
    assert w.sum() == pytest.approx(2.0)
    np.testing.assert_allclose(w[:3] / w[0], [1, 4, 2])


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.floats(-2, 2), st.floats(0, 3), st.integers(1, 5))
def test_simpson_exact_for_cubics(c, a, width, n):
    b = a + width
    f = lambda x: c[0] + c[1] * x + c[2] * x**2 + c[3] * x**3
    F = lambda x: c[0] * x + c[1] * x**2 / 2 + c[2] * x**3 / 3 + c[3] * x**4 / 4
    assert quad_fixed(f, a, b, n) == pytest.approx(F(b) - F(a), abs=1e-11)


def test_time_grid():
    g = TimeGrid.uniform(1.0, 0.3)
    assert g.times[-1] == 1.0 and g.n_steps == 4
    assert np.all(g.dt > 0)
    with pytest.raises(ParameterError):
        TimeGrid(np.array([0.0, 0.0]))
    with pytest.raises(ParameterError):
        TimeGrid.uniform(0.1, 0.2)


# -- PCA -------------------------------------------------------------------


def test_pca_examples():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    res = pca(np.column_stack([x, 2 * x]))
    assert res.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)
    single = pca(x[:, None])
    assert single.eigenvalues[0] == pytest.approx(np.var(x, ddof=1))
    with pytest.raises(InsufficientDataError):
        pca(np.ones((1, 3)))


def test_pca_identity_covariance():
    n = 20000
    x = np.random.default_rng(2).normal(size=(n, 3))
    w = pca(x).eigenvalues
    # standard error of a sample variance is sqrt(2/n); eigenvalue spread adds
    # roughly the same order for the extreme ones
    assert np.all(np.abs(w - 1.0) < 3 * np.sqrt(2.0 / n) * 2)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 4), elements=st.floats(-10, 10)))
def test_pca_properties(x):
    res = pca(x)
    np.testing.assert_allclose(res.loadings.T @ res.loadings, np.eye(4), atol=1e-10)
    np.testing.assert_allclose(res.scores @ res.loadings.T + res.mean, x, atol=1e-10 * max(1.0, np.abs(x).max()))
    assert np.all(np.diff(res.eigenvalues) <= 1e-12)


# -- OLS / NLS / BIC -----------------------------------------------------------


def test_ols_examples():
    res = ols(np.ones((3, 1)), np.array([2.0, 2.0, 2.0]))
    assert res.coefficients[0] == pytest.approx(2.0)
    assert res.rss == pytest.approx(0.0, abs=1e-24)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 2))
    res = ols(x, 3 * x[:, 0] - x[:, 1])
    np.testing.assert_allclose(res.coefficients, [3.0, -1.0], atol=1e-12)
    with pytest.raises(SingularMatrixError):
        ols(np.column_stack([x[:, 0], 2 * x[:, 0]]), x[:, 1])
    with pytest.raises(InsufficientDataError):
        ols(np.ones((2, 2)), np.ones(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_ols_residuals_orthogonal(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 3)) * rng.uniform(0.1, 10, size=3)
    y = rng.normal(size=40)
    r = ols(x, y).residuals
    assert np.all(np.abs(x.T @ r) / np.linalg.norm(x, axis=0) <= 1e-9 * max(1.0, np.linalg.norm(y)))


def _decay(p, x):
    return np.exp(-x / p[0])


def test_nls_exact_recovery():
    x = np.linspace(0, 3, 50)
    res = nls(_decay, [1.5], x, np.exp(-x / 0.5))
    assert res.params[0] == pytest.approx(0.5, abs=1e-6)


def test_nls_start_at_optimum():
    x = np.linspace(0, 3, 50)
    res = nls(_decay, [0.5], x, np.exp(-x / 0.5))
    assert res.params[0] == 0.5


def test_nls_noisy():
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = np.linspace(0, 3, 200)
        y = np.exp(-x / 0.5) + rng.normal(scale=0.01, size=x.size)
        hits += abs(nls(_decay, [1.0], x, y).params[0] / 0.5 - 1) < 0.05
    assert hits == 20


def test_nls_convergence_error_carries_best():
    x = np.linspace(0, 3, 50)
    with pytest.raises(ConvergenceError) as info:
        nls(_decay, [3.0], x, np.exp(-x / 0.5), max_iter=1)
    assert info.value.best is not None


def test_bic_examples():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 4))
    res = bic_subset_select(x, 1.5 * x[:, 1])
    assert res.support == (1,)
    res = bic_subset_select(x, 2 * x[:, 1] + 3 * x[:, 3])
    assert res.support == (1, 3)
    np.testing.assert_allclose(res.coefficients, [2.0, 3.0], atol=1e-10)
    with pytest.raises(ParameterError):
        bic_subset_select(np.ones((20, 16)), np.ones(20))


def test_bic_pure_noise_selects_empty():
    empty = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        empty += bic_subset_select(rng.normal(size=(500, 4)), rng.normal(size=500)).support == ()
    assert empty / 50 > 0.9


def test_bic_tie_prefers_smaller_then_lexicographic():
    x = np.column_stack([np.ones(10), np.ones(10) * 1.0 + 0.0])
    x[:, 1] = x[:, 0]
    # identical columns: the singular pair is skipped, the first single wins
    res = bic_subset_select(x, 2 * np.ones(10))
    assert res.support == (0,)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.booleans(), min_size=5, max_size=5).filter(any))
def test_bic_recovers_true_support(seed, mask):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 5))
    beta = np.where(mask, rng.uniform(1, 3, 5) * rng.choice([-1, 1], 5), 0.0)
    res = bic_subset_select(x, x @ beta)
    assert res.support == tuple(np.flatnonzero(mask))


# -- chol_psd ---------------------------------------------------------------


def test_chol_examples():
    np.testing.assert_array_equal(chol_psd(np.eye(3)).factor, np.eye(3))
    np.testing.assert_allclose(chol_psd(np.array([[4.0, 2.0], [2.0, 2.0]])).factor, [[2.0, 0.0], [1.0, 1.0]])
    low = chol_psd(PUBLISHED_SIGMA_SIGMA_T_DAILY).factor
    np.testing.assert_allclose(low @ low.T, PUBLISHED_SIGMA_SIGMA_T_DAILY, rtol=0, atol=1e-12)


def test_chol_repair_and_errors():
    v = np.array([1.0, -1.0]) / np.sqrt(2)
    s = np.outer([1.0, 1.0], [1.0, 1.0]) - 1e-10 * np.outer(v, v)
    res = chol_psd(s)
    assert 0 < res.repair < 1e-9
    np.testing.assert_allclose(res.factor @ res.factor.T, np.ones((2, 2)), atol=1e-9)
    with pytest.raises(NotPSDError):
        chol_psd(np.diag([1.0, -1e-3]))
    with pytest.raises(ParameterError):
        chol_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
def test_chol_lower_nonnegative_diagonal(a):
    s = a @ a.T  # rank <= 3, so semidefinite
    low = chol_psd(s).factor
    assert np.allclose(np.triu(low, 1), 0.0)
    assert np.all(np.diag(low) >= 0)
    np.testing.assert_allclose(low @ low.T, s, atol=1e-8 * max(1.0, np.abs(s).max()))
