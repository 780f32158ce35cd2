import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_psd
from switchkf.errors import DimensionError, NumericalError
from switchkf.statespace import (
    CovarianceBank, GaussianState, NoiseParams, Observation, gaussian_nll, initial_state,
    kf_filter_step, kf_forecast, kf_predict_step, kf_run, nll_grad_sigma, nll_loss,
    predictive_variance,
)
from switchkf.synthdata import Q1, delta, gen_design


def scalar_state(mean, var):
    return GaussianState(np.array([mean]), np.array([[var]]))


def test_zero_design_leaves_state_untouched(rng):
    prior = GaussianState(rng.normal(size=3), random_psd(rng, 3))
    post = kf_filter_step(prior, Observation(np.zeros(3), 4.2), 0.7)
    np.testing.assert_array_equal(post.mean, prior.mean)
    np.testing.assert_allclose(post.cov, prior.cov, atol=0, rtol=0)


def test_scalar_update_halves_variance():
    post = kf_filter_step(scalar_state(0.4, 1.0), Observation(np.array([1.0]), 2.0), 1.0)
    assert post.cov[0, 0] == pytest.approx(0.5)
    assert post.mean[0] == pytest.approx((0.4 + 2.0) / 2)


def test_predict_step_examples():
    st0 = GaussianState(np.ones(3), np.eye(3))
    np.testing.assert_array_equal(kf_predict_step(st0, np.zeros((3, 3))).cov, np.eye(3))
    np.testing.assert_array_equal(kf_predict_step(st0, np.eye(3)).cov, 2 * np.eye(3))
    zero = GaussianState(np.zeros(3), np.zeros((3, 3)))
    np.testing.assert_array_equal(kf_predict_step(zero, Q1).cov, delta(1e-4, 1e-1, 1e-2))


def test_forecast_examples():
    assert kf_forecast(initial_state(3), np.array([1.0, 2.0, 3.0])) == 0.0
    assert kf_forecast(GaussianState(np.ones(3), np.eye(3)), np.array([1.0, 2.0, 3.0])) == 6.0
    assert kf_forecast(GaussianState(np.eye(3)[0], np.eye(3)), np.eye(3)[1]) == 0.0


def test_nll_examples():
    s = 1.0 / (2 * np.pi)
    prior = scalar_state(0.0, s / 2)
    assert nll_loss(prior, Observation(np.array([1.0]), 0.0), s / 2) == pytest.approx(0.0, abs=1e-15)
    prior = scalar_state(0.0, 1.0)
    val = nll_loss(prior, Observation(np.array([1.0]), 2.0), 1.0)
    assert val == pytest.approx(0.5 * np.log(4 * np.pi) + 1.0, rel=1e-14)


def test_nll_minimized_at_zero_residual():
    prior = scalar_state(0.3, 0.5)
    x = np.array([2.0])
    ys = np.linspace(-2, 3, 101)
    losses = [nll_loss(prior, Observation(x, y), 0.4) for y in ys]
    assert ys[int(np.argmin(losses))] == pytest.approx(0.6, abs=0.03)


def test_gradient_vanishes_when_residual_matches_variance():
    sigma = 0.8
    prior = scalar_state(0.0, 0.36)
    s = sigma**2 + 0.36
    g = nll_grad_sigma(prior, Observation(np.array([1.0]), np.sqrt(s)), sigma)
    assert abs(g) < 1e-14


def test_gradient_sign_on_perfect_fit():
    sigma = 1.3
    prior = scalar_state(2.0, 0.5)
    g = nll_grad_sigma(prior, Observation(np.array([1.0]), 2.0), sigma)
    assert g == pytest.approx(sigma / (sigma**2 + 0.5))


@given(st.integers(0, 2**31), st.floats(0.1, 5.0))
def test_gradient_matches_central_difference(seed, sigma):
    r = np.random.default_rng(seed)
    prior = GaussianState(r.normal(size=3), random_psd(r, 3))
    obs = Observation(r.normal(size=3), r.normal(scale=2))
    h = 1e-6
    fd = (nll_loss(prior, obs, (sigma + h) ** 2) - nll_loss(prior, obs, (sigma - h) ** 2)) / (2 * h)
    g = nll_grad_sigma(prior, obs, sigma)
    assert abs(g - fd) <= 1e-6 * max(abs(g), 1e-3)


def test_recursive_updates_match_least_squares(rng):
    d, T, s2 = 2, 5, 0.3
    m0, p0 = rng.normal(size=d), random_psd(rng, d)
    xs, ys = rng.normal(size=(T, d)), rng.normal(size=T)
    state = GaussianState(m0, p0)
    for t in range(T):
        state = kf_filter_step(state, Observation(xs[t], ys[t]), s2)
    prec = np.linalg.inv(p0) + xs.T @ xs / s2
    direct = np.linalg.solve(prec, np.linalg.solve(p0, m0) + xs.T @ ys / s2)
    np.testing.assert_allclose(state.mean, direct, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(state.cov, np.linalg.inv(prec), rtol=1e-10, atol=1e-12)


@given(st.integers(0, 2**31), st.floats(0.05, 20.0), st.sampled_from(["gaussian", "uniform", "noniid"]))
def test_scaling_equivalence(seed, c, kind):
    r = np.random.default_rng(seed)
    T = 80
    xs = gen_design(kind, T, r)
    ys = r.normal(size=T)
    q = random_psd(r, 3, scale=0.05)
    a = kf_run(xs, ys, q, c, init=initial_state(3, cov=np.eye(3)))
    b = kf_run(xs, ys, q / c, 1.0, init=initial_state(3, cov=np.eye(3) / c))
    np.testing.assert_allclose(a.y_hat, b.y_hat, rtol=1e-10, atol=1e-10)


def test_covariance_stays_symmetric_psd_over_long_run(ws_episode, rng):
    ep = ws_episode
    state = initial_state(3)
    worst = np.inf
    for t in range(ep.T):
        state = kf_filter_step(state, Observation(ep.xs[t], ep.ys[t]), 1.0)
        assert np.max(np.abs(state.cov - state.cov.T)) <= 1e-12
        worst = min(worst, np.linalg.eigvalsh(state.cov).min())
        state = kf_predict_step(state, Q1)
    assert worst >= -1e-8


def test_batched_run_matches_single_runs(rng):
    T, B = 30, 4
    xs, ys = rng.normal(size=(T, B, 3)), rng.normal(size=(T, B))
    q = random_psd(rng, 3, scale=0.1)
    batched = kf_run(xs, ys, q, 0.5)
    for b in range(B):
        single = kf_run(xs[:, b], ys[:, b], q, 0.5)
        np.testing.assert_allclose(batched.y_hat[:, b], single.y_hat, rtol=1e-13, atol=1e-13)


def test_time_varying_noise_indexing(rng):
    T = 6
    xs, ys = rng.normal(size=(T, 2)), rng.normal(size=T)
    qs = np.stack([random_psd(rng, 2, 0.1) for _ in range(T)])
    s2 = rng.uniform(0.5, 2.0, size=T)
    tr = kf_run(xs, ys, qs, s2)
    state = initial_state(2)
    for t in range(T):
        assert tr.y_hat[t] == pytest.approx(kf_forecast(state, xs[t]), rel=1e-13, abs=1e-13)
        assert tr.pred_var[t] == pytest.approx(predictive_variance(state, xs[t], s2[t]), rel=1e-13)
        state = kf_predict_step(kf_filter_step(state, Observation(xs[t], ys[t]), s2[t]), qs[t])


def test_gaussian_nll_formula():
    assert gaussian_nll(1.0, 0.0, 2.0) == pytest.approx(0.5 * np.log(4 * np.pi) + 0.25)


def test_input_validation():
    with pytest.raises(DimensionError):
        GaussianState(np.zeros(3), np.eye(2))
    with pytest.raises(ValueError):
        kf_filter_step(initial_state(2), Observation(np.ones(2), 1.0), 0.0)
    with pytest.raises(NumericalError):
        kf_filter_step(initial_state(2), Observation(np.array([np.nan, 1.0]), 1.0), 1.0)
    with pytest.raises(DimensionError):
        kf_forecast(initial_state(2), np.ones(3))
    with pytest.raises(ValueError):
        CovarianceBank(np.array([[[1.0, 0.0], [0.0, -1.0]]]))
    with pytest.raises(ValueError):
        NoiseParams(np.eye(2), -1.0)


def test_noise_params_normalized():
    n = NoiseParams(2 * np.eye(2), 4.0).normalized()
    np.testing.assert_array_equal(n.q, 0.5 * np.eye(2))
    assert n.sigma2 == 1.0
