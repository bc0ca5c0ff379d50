import numpy as np
import pytest

from coforward.centering import (
    closed_form_moment,
    centered_expectation,
    fit_theta_prime,
    log_moment,
    moment_surface,
    quadratic_variation,
    tenor_fan,
    wiener_variance,
    write_theta_prime,
)
from coforward.errors import ParameterError, SingularMatrixError
from coforward.market_data import ForwardCurve
from coforward.model import ModelParams, ThetaPrime, published_params


def test_zero_pi_gives_unit_moment():
    p = published_params().replace(pi=np.zeros((6, 6)))
    assert closed_form_moment("g", 1.0, 2.0, p) == 1.0
    assert wiener_variance("c", 1.0, 2.0, p) == pytest.approx(quadratic_variation("c", 1.0, 2.0, p), rel=1e-12)


def test_time_zero_and_domain():
    p = published_params()
    assert closed_form_moment("g", 0.0, 1.0, p) == 1.0
    assert wiener_variance("g", 0.0, 1.0, p) == 0.0
    with pytest.raises(ParameterError):
        closed_form_moment("g", 2.0, 1.0, p)
    with pytest.raises(ParameterError):
        closed_form_moment("g", -0.1, 1.0, p)


@pytest.mark.parametrize("e,t,T", [("g", 0.5, 0.6), ("g", 1.0, 2.0), ("c", 2.0, 3.0), ("c", 3.0, 3.0)])
def test_gaussian_identity(e, t, T):
    # with a centred Gaussian log-ratio, ln m = (Var - QV) / 2
    p = published_params()
    lhs = log_moment(e, t, T, p)
    rhs = 0.5 * (wiener_variance(e, t, T, p) - quadratic_variation(e, t, T, p))
    assert lhs == pytest.approx(rhs, abs=1e-10)


@pytest.mark.parametrize("e,t,T", [("g", 1.0, 1.5), ("c", 3.0, 4.0)])
def test_quadrature_converged(e, t, T):
    p = published_params()
    a = log_moment(e, t, T, p)
    b = log_moment(e, t, T, p, 192, 192)
    assert abs(a - b) < 1e-8


def test_fan_examples():
    np.testing.assert_allclose(tenor_fan("g", n_tenors=3), [1 / 12, 5 / 12, 9 / 12])
    curve = ForwardCurve("c", np.datetime64("2003-01-01"), np.array([0.1, 0.5]), np.array([1.0, 1.0]))
    fan = tenor_fan("c", curve, 5, extend=1.0)
    assert fan[0] == pytest.approx(0.1) and fan[-1] == pytest.approx(1.5)


def test_fit_with_zero_pi_is_zero():
    p = published_params().replace(pi=np.zeros((6, 6)))
    fit = fit_theta_prime(p, horizon=0.5, step=0.25, n_tenors=4, panels=8)
    assert fit.theta_prime.is_zero
    assert fit.residual_max == 0.0


def test_fit_rank_deficient():
    with pytest.raises(SingularMatrixError):
        fit_theta_prime(published_params(), horizon=0.5, n_tenors=1, panels=8)


def test_fit_centres_short_horizon():
    p = published_params()
    fit = fit_theta_prime(p, horizon=0.5, step=1 / 12, n_tenors=8, panels=16)
    q = p.replace(theta_prime=fit.theta_prime)
    times = [1 / 12, 0.25, 0.5]
    for e in ("g", "c"):
        before = moment_surface(e, p, times, [0.1, 0.4], centred=False, panels=16).max_deviation
        after = moment_surface(e, q, times, [0.1, 0.4], centred=True, panels=16).max_deviation
        assert after < before


def test_centred_equals_closed_form_without_theta():
    p = published_params()
    assert centered_expectation("g", 1.0, 1.5, p) == closed_form_moment("g", 1.0, 1.5, p)


def test_surface_and_csv(tmp_path):
    p = published_params()
    s = moment_surface("c", p, [0.0, 0.5], [0.1, 0.2], centred=False, panels=8)
    assert s.values.shape == (4,)
    np.testing.assert_array_equal(s.values[:2], [1.0, 1.0])
    s.to_csv(tmp_path / "s.csv", label="x")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "energy,t,T,value,case" and len(lines) == 5
    tp = ThetaPrime(np.array([0.0, 0.5, 1.0]), np.ones((2, 6)))
    write_theta_prime(tp, tmp_path / "tp.csv")
    assert len((tmp_path / "tp.csv").read_text().splitlines()) == 3


def test_moment_invariant_under_pi_sign_of_zero_block():
    # gas-only Pi cannot affect crude moments when crude has no coupling
    pi = np.zeros((6, 6))
    pi[:3, :3] = -0.5 * np.eye(3)
    p = ModelParams(published_params().vol, pi, published_params().sigma_sigma_t * np.kron(np.eye(2), np.ones((3, 3))))
    assert closed_form_moment("c", 1.0, 2.0, p) == pytest.approx(1.0, abs=1e-14)
    assert closed_form_moment("g", 1.0, 2.0, p) != 1.0
