import json

import numpy as np
import pytest

from coforward.calibration import (
    CalibConfig,
    MotionPath,
    calibrate,
    fit_tau,
    fit_vecm,
    reconstruct_motions,
)
from coforward.errors import DegenerateDataError, InsufficientDataError, ParameterError, StageError
from coforward.market_data import QuotePanel, compute_returns, delivery_date
from coforward.model import EnergyVol, VolParams, published_params, published_vol, stacked_vol
from coforward.synth import SynthConfig, generate


def _euler_panels(vol, dx, start="2003-01-02", listed=(9, 15)):
    """Quote panels whose simple returns are exactly sigma(T - t) . dX."""
    start = np.datetime64(start, "D")
    dates = start + np.arange(dx.shape[0] + 1)
    panels = {}
    for e, k in zip(("g", "c"), listed):
        months = np.arange(dates[0].astype("datetime64[M]") + 1, dates[-1].astype("datetime64[M]") + k + 1)
        qd, qm, qp = [], [], []
        for m in months:
            tenor = (delivery_date(m) - dates[:-1]).astype(int) / 365.0
            inc = np.einsum("kn,kn->k", stacked_vol(e, np.maximum(tenor, 0), vol), dx)
            price = 50.0 * np.concatenate([[1.0], np.cumprod(1.0 + inc)])
            gap = (m - dates.astype("datetime64[M]")).astype(int)
            live = (dates < delivery_date(m)) & (gap >= 1) & (gap <= k)
            qd.append(dates[live])
            qm.append(np.full(live.sum(), m))
            qp.append(price[live])
        panels[e] = QuotePanel(e, np.concatenate(qd), np.concatenate(qm).astype("datetime64[M]"), np.concatenate(qp))
    return panels


def test_reconstruction_exact_on_noiseless_cross_sections():
    vol = published_vol()
    dx = np.random.default_rng(0).normal(scale=0.01, size=(80, 6))
    panels = _euler_panels(vol, dx)
    returns = {e: compute_returns(panels[e]) for e in ("g", "c")}
    motion = reconstruct_motions(returns, vol)
    assert motion.n_obs == 80
    np.testing.assert_allclose(motion.increments, dx, atol=1e-10)
    assert motion.residual_rms < 1e-10


def test_single_bucket_reconstruction():
    vol = VolParams(EnergyVol(1), EnergyVol(1))
    dx = np.random.default_rng(1).normal(scale=0.01, size=(40, 2))
    panels = _euler_panels(vol, dx, listed=(1, 1))
    returns = {e: compute_returns(panels[e]) for e in ("g", "c")}
    motion = reconstruct_motions(returns, vol)
    # one factor, one quote: the increment is the return itself
    rows = {str(d): i for i, d in enumerate(np.datetime64("2003-01-02") + np.arange(1, 41))}
    keep = [rows[str(d)] for d in motion.dates[1:]]
    np.testing.assert_allclose(motion.increments, dx[keep], atol=1e-12)


def test_tau_recovered_from_noiseless_panel():
    vol = published_vol()
    dx = np.random.default_rng(2).normal(size=(400, 6)) @ published_params().sigma.T * np.sqrt(1 / 365)
    panels = _euler_panels(vol, dx)
    for e, truth in (("g", vol.gas), ("c", vol.crude)):
        fit = fit_tau(compute_returns(panels[e]))
        assert fit.vol.tau1 == pytest.approx(truth.tau1, rel=0.01)
        assert fit.vol.tau2 == pytest.approx(truth.tau2, rel=0.01)


def _ou_motion(pi, ss, n_steps, seed, dt=1 / 365):
    rng = np.random.default_rng(seed)
    low = np.linalg.cholesky(ss)
    x = np.zeros((n_steps + 1, pi.shape[0]))
    for k in range(n_steps):
        x[k + 1] = x[k] + pi @ x[k] * dt + low @ rng.normal(size=pi.shape[0]) * np.sqrt(dt)
    dates = np.datetime64("2003-01-01") + np.arange(n_steps + 1)
    return MotionPath(dates, np.diff(x, axis=0), x, np.full(n_steps, dt))


def test_vecm_recovers_strong_pi_pattern():
    pi = np.array([[-20.0, 0.0, 0.0], [0.0, -15.0, 20.0], [0.0, 0.0, -25.0]])
    ss = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 0.5]])
    fit = fit_vecm(_ou_motion(pi, ss, 6000, 3))
    assert fit.supports == ((0,), (1, 2), (2,))
    np.testing.assert_allclose(fit.sigma_sigma_t, ss, atol=0.15)
    assert np.all(fit.pi[pi == 0] == 0)


def test_vecm_zero_pi_selects_nothing():
    ss = np.eye(3) * 0.1
    empty = sum(fit_vecm(_ou_motion(np.zeros((3, 3)), ss, 500, s)).supports == ((), (), ()) for s in range(20))
    assert empty >= 15


def test_vecm_too_short():
    with pytest.raises(InsufficientDataError):
        fit_vecm(_ou_motion(np.zeros((3, 3)), np.eye(3), 20, 0))


@pytest.fixture(scope="module")
def synth_data():
    return generate(published_params(), SynthConfig(years=2.0, seed=4))


def test_calibrate_round_trip(synth_data):
    params, report = calibrate(synth_data.gas, synth_data.crude)
    truth = published_params()
    assert params.vol.gas.tau1 == pytest.approx(truth.vol.gas.tau1, rel=0.05)
    assert params.vol.crude.tau2 == pytest.approx(truth.vol.crude.tau2, rel=0.05)
    rel = np.abs(np.diag(params.sigma_sigma_t) / np.diag(truth.sigma_sigma_t) - 1)
    assert rel.max() < 0.15
    d = json.loads(report.to_json())
    assert set(d) >= {"pca", "tau", "motion", "vecm"}
    assert d["motion"]["n_obs"] == report.motion.n_obs


def test_calibrate_deterministic(synth_data):
    _, a = calibrate(synth_data.gas, synth_data.crude)
    _, b = calibrate(synth_data.gas, synth_data.crude)
    assert a.to_json() == b.to_json()


def test_calibrate_missing_energy(synth_data):
    with pytest.raises(StageError, match="crude") as info:
        calibrate(synth_data.gas, None)
    assert info.value.stage == "input"
    with pytest.raises(StageError):
        calibrate(synth_data.crude, synth_data.gas)


def test_calibrate_constant_prices(synth_data):
    flat = QuotePanel("g", synth_data.gas.quote_dates, synth_data.gas.delivery_months, np.full(len(synth_data.gas), 30.0))
    with pytest.raises(StageError) as info:
        calibrate(flat, synth_data.crude)
    assert isinstance(info.value.cause, DegenerateDataError)
    assert info.value.exit_code == 2


def test_config_validation():
    with pytest.raises(ParameterError):
        CalibConfig(n_factors_gas=4)
    with pytest.raises(ParameterError):
        CalibConfig(tau_starts=())
