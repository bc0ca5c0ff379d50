import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coforward.diagnostics import adf_test, classify_pi_rank, critical_values, engle_granger_test
from coforward.errors import DegenerateDataError, DimensionError, InsufficientDataError
from coforward.model import PUBLISHED_PI


def test_critical_values_asymptotic():
    cv = critical_values(1, 10**9)
    assert cv["5%"] == pytest.approx(-2.86154, abs=1e-6)
    assert critical_values(2, 10**9)["5%"] == pytest.approx(-3.33613, abs=1e-6)
    assert cv["1%"] < cv["5%"] < cv["10%"]
    with pytest.raises(DimensionError):
        critical_values(9, 100)


def test_adf_random_walk_not_rejected():
    kept = sum(not adf_test(np.cumsum(np.random.default_rng(s).normal(size=500))).reject for s in range(100))
    assert kept >= 90


def test_adf_white_noise_rejected():
    hits = sum(adf_test(np.random.default_rng(s).normal(size=500)).reject for s in range(100))
    assert hits >= 95


def test_adf_errors():
    with pytest.raises(DegenerateDataError):
        adf_test(np.full(500, 3.0))
    with pytest.raises(DegenerateDataError):
        adf_test(np.arange(500.0))  # constant increments
    with pytest.raises(InsufficientDataError):
        adf_test(np.random.default_rng(0).normal(size=30))
    with pytest.raises(DimensionError):
        adf_test(np.ones((10, 10)))
    y = np.random.default_rng(0).normal(size=300)
    y[5] = np.nan
    with pytest.raises(DimensionError):
        adf_test(y)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(-100, 100), st.floats(0.01, 100))
def test_adf_invariant_to_affine_maps(seed, shift, scale):
    y = np.cumsum(np.random.default_rng(seed).normal(size=300))
    a = adf_test(y)
    b = adf_test(shift + scale * y)
    assert a.lag == b.lag
    assert b.statistic == pytest.approx(a.statistic, rel=1e-6, abs=1e-8)


def test_engle_granger_examples():
    rng = np.random.default_rng(1)
    x = np.cumsum(rng.normal(size=800))
    y = 1.0 + 2.0 * x + rng.normal(size=800)
    res, vec = engle_granger_test(y, x)
    assert res.reject
    assert vec[1] == pytest.approx(-2.0, abs=0.02)
    z = np.cumsum(np.random.default_rng(2).normal(size=800))
    res, _ = engle_granger_test(z, x)
    assert res.critical_values["5%"] < -3.3
    with pytest.raises(DimensionError):
        engle_granger_test(y, x[:-1])
    with pytest.raises(DegenerateDataError):
        engle_granger_test(y, np.ones(800))


def test_rank_cases():
    assert classify_pi_rank(np.zeros((3, 3))).case == "ZERO"
    assert classify_pi_rank(-np.eye(3)).case == "FULL"
    pi = np.outer([1.0, 2.0, 0.0], [1.0, -1.0, 0.5])
    r = classify_pi_rank(pi)
    assert (r.rank, r.case) == (1, "PARTIAL")
    np.testing.assert_allclose(r.alpha @ r.beta.T, pi, atol=1e-12)
    with pytest.raises(DimensionError):
        classify_pi_rank(np.zeros((2, 3)))


def test_published_pi_rank_structure():
    r = classify_pi_rank(PUBLISHED_PI)
    assert r.case == "PARTIAL" and r.rank == 5
    # the truncated factorisation drops only the smallest singular direction
    assert np.linalg.norm(r.alpha @ r.beta.T - PUBLISHED_PI, 2) == pytest.approx(r.singular_values[-1], rel=1e-9)
