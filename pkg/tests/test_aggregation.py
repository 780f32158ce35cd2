import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from switchkf.aggregation import (
    RegretLedger, check_weights, ewa_update, kf_agg_run, make_m_alpha, markov_hedge_update,
    mix_predictions, regret_report, uniform_weights,
)
from switchkf.errors import NumericalError
from switchkf.statespace import CovarianceBank, kf_run
from switchkf.synthdata import Q1, Q2, gen_regimes

HALF = np.array([0.5, 0.5])
E = np.exp(-1.0)


def test_ewa_closed_form():
    p = ewa_update(HALF, np.array([0.0, 1.0]), 1.0)
    np.testing.assert_allclose(p, [1 / (1 + E), E / (1 + E)], rtol=1e-15)
    np.testing.assert_allclose(p, [0.7311, 0.2689], atol=5e-5)


def test_ewa_fixed_points(rng):
    p = rng.dirichlet(np.ones(4))
    np.testing.assert_allclose(ewa_update(p, np.full(4, 3.7), 2.0), p, rtol=1e-14)
    np.testing.assert_allclose(ewa_update(p, rng.normal(size=4), 0.0), p, rtol=1e-14)


def test_markov_hedge_closed_form():
    p = markov_hedge_update(HALF, np.array([0.0, 1.0]), 1.0, make_m_alpha(2, 0.1))
    w = 1 / (1 + E)
    np.testing.assert_allclose(p, [0.9 * w + 0.1 * (1 - w), 0.1 * w + 0.9 * (1 - w)], rtol=1e-14)
    np.testing.assert_allclose(p, [0.6848, 0.3152], atol=5e-5)


def test_markov_hedge_extremes(rng):
    p = rng.dirichlet(np.ones(3))
    losses = rng.normal(size=3)
    np.testing.assert_allclose(markov_hedge_update(p, losses, 1.3, np.eye(3)),
                               ewa_update(p, losses, 1.3), atol=1e-14, rtol=0)
    np.testing.assert_allclose(markov_hedge_update(p, losses, 1.3, np.full((3, 3), 1 / 3)),
                               np.full(3, 1 / 3), atol=1e-15)


@given(arrays(float, st.integers(2, 6), elements=st.floats(0, 1e6)),
       st.floats(0.01, 10), st.floats(0, 1))
def test_weights_stay_on_simplex(losses, eta, alpha):
    K = losses.size
    p = uniform_weights(K)
    m = make_m_alpha(K, alpha)
    for _ in range(3):
        p = markov_hedge_update(p, losses, eta, m)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-12


def test_non_finite_losses_raise():
    with pytest.raises(NumericalError):
        ewa_update(HALF, np.array([np.inf, 0.0]), 1.0)


def test_m_alpha_examples():
    np.testing.assert_array_equal(make_m_alpha(3, 0.0), np.eye(3))
    np.testing.assert_allclose(make_m_alpha(2, 0.01), [[0.99, 0.01], [0.01, 0.99]])
    with pytest.raises(ValueError):
        make_m_alpha(1, 0.1)
    with pytest.raises(ValueError):
        make_m_alpha(2, 1.5)


@given(st.integers(2, 12), st.floats(0, 1))
def test_m_alpha_doubly_stochastic(K, alpha):
    m = make_m_alpha(K, alpha)
    np.testing.assert_allclose(m.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(m.sum(axis=0), 1, atol=1e-12)
    assert m.min() >= 0 and m.max() <= 1


def test_mix_predictions_examples():
    assert mix_predictions(np.array([0.0, 1.0, 0.0]), np.array([4.0, 5.0, 6.0])) == 5.0
    assert mix_predictions(HALF, np.array([1.0, 3.0])) == 2.0
    assert mix_predictions(np.array([0.7311, 0.2689]), np.array([1.0, 0.0])) == pytest.approx(0.7311)


def test_check_weights_rejects_off_simplex():
    with pytest.raises(ValueError):
        check_weights(np.array([0.6, 0.6]))


def test_regret_of_learner_against_itself_is_zero():
    rng = np.random.default_rng(1)
    ell = rng.uniform(size=(50, 2))
    comp = gen_regimes(50, 2, 0.1, rng)
    learner = ell[np.arange(50), comp]
    regret, _ = regret_report(RegretLedger(learner, ell), comp, 1.0, make_m_alpha(2, 0.1))
    assert regret == 0.0


def test_constant_competitor_bound_closed_form():
    T, K, eta, alpha = 40, 3, 0.7, 0.05
    led = RegretLedger(np.zeros(T), np.zeros((T, K)))
    _, bound = regret_report(led, np.full(T, 2), eta, make_m_alpha(K, alpha))
    want = np.log(K) / eta + (T - 1) / eta * np.log(1 / (1 - alpha)) + eta * T / 8
    assert bound == pytest.approx(want, rel=1e-13)


def test_switch_count():
    assert RegretLedger.switch_count([0, 0, 1, 1, 0, 2]) == 3
    with pytest.raises(IndexError):
        RegretLedger(np.zeros(3), np.zeros((3, 2))).competitor_cumloss([0, 1, 2])


def run_hedge(ell, eta, m):
    p = uniform_weights(ell.shape[1])
    learner = np.empty(ell.shape[0])
    for t, row in enumerate(ell):
        learner[t] = p @ row
        p = markov_hedge_update(p, row, eta, m)
    return learner


@pytest.mark.parametrize("seed", range(20))
def test_regret_within_bound_clipped(seed):
    rng = np.random.default_rng(seed)
    T, alpha, eta = 300, 0.02, 0.5
    z = gen_regimes(T, 2, alpha, rng)
    ell = np.clip(rng.uniform(0.2, 1.0, size=(T, 2)) - 0.3 * np.eye(2)[z], 0, 1)
    m = make_m_alpha(2, alpha)
    led = RegretLedger(run_hedge(ell, eta, m), ell)
    for comp in (np.zeros(T, int), np.ones(T, int), z):
        regret, bound = regret_report(led, comp, eta, m)
        assert regret <= bound


def test_agg_single_expert_equals_kf(ws_episode):
    bank = CovarianceBank(Q1[None])
    agg = kf_agg_run(bank, ws_episode, sigma2=1.0)
    kf = kf_run(ws_episode.xs, ws_episode.ys, Q1, 1.0)
    np.testing.assert_allclose(agg.y_hat, kf.y_hat, rtol=1e-14, atol=1e-14)


def test_agg_identical_experts_keep_uniform_weights(ws_episode):
    bank = CovarianceBank(np.stack([Q2, Q2]))
    agg = kf_agg_run(bank, ws_episode, sigma2=1.0, m=make_m_alpha(2, 0.01))
    np.testing.assert_allclose(agg.weights, 0.5, atol=1e-15)


def test_agg_weights_follow_markov_hedge(ws_episode):
    bank = CovarianceBank(np.stack([Q1, Q2]))
    m = make_m_alpha(2, 0.01)
    agg = kf_agg_run(bank, ws_episode, eta=0.5, m=m, sigma2=1.0)
    ell = agg.meta["expert_losses"]
    p = uniform_weights(2)
    for t in range(ws_episode.T):
        np.testing.assert_allclose(agg.weights[t], p, atol=1e-14)
        p = markov_hedge_update(p, ell[t], 0.5, m)
