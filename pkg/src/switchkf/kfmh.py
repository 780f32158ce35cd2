"""Kalman filtering with Markov-Hedge aggregation over state-noise covariances.

Instead of mixing the forecasts of independent filters, the learner runs a
single filter whose state covariance at each step is the weight-mixed
``Q_hat = sum_k p(k) Q^(k)``. The weights come from Markov-Hedge on the losses
of window experts: expert k restarts from the learner's filtered state
``tau + 1`` steps back and replays the window using ``Q^(k)`` throughout. The
observation-noise standard deviation is learned separately by ADAM on the
predictive log-likelihood.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .aggregation import markov_hedge_update, mix_predictions, transition_for, uniform_weights
from .errors import DimensionError, NumericalError
from .statespace import (
    CovarianceBank,
    GaussianState,
    Observation,
    initial_state,
    kf_filter_step,
    kf_forecast,
    kf_predict_step,
    nll_grad_sigma,
    nll_loss,
    predictive_variance,
)
from .trace import KfmhTrace

SIGMA_MIN = 1e-3


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray | float = 0.0
    v: np.ndarray | float = 0.0
    step_count: int = 0
    alpha1: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(st: AdamState, grad, sigma, sigma_min=SIGMA_MIN):
    """One bias-corrected ADAM descent step on ``sigma``.

    Returns the new state and the updated ``sigma``, clamped at ``sigma_min``.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.isfinite(grad).all():
        raise NumericalError("non-finite gradient")
    n = st.step_count + 1
    m = st.beta1 * st.m + (1.0 - st.beta1) * grad
    v = st.beta2 * st.v + (1.0 - st.beta2) * grad**2
    m_hat = m / (1.0 - st.beta1**n)
    v_hat = v / (1.0 - st.beta2**n)
    sigma = np.maximum(sigma - st.alpha1 * m_hat / (np.sqrt(v_hat) + st.eps), sigma_min)
    return replace(st, m=m, v=v, step_count=n), sigma


def mixture_q(p, bank: CovarianceBank) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != bank.K:
        raise DimensionError(f"{p.shape[-1]} weights for a bank of {bank.K}")
    return np.einsum("...k,kij->...ij", p, bank.qs)


class WindowBuffer:
    """Trailing observations and the learner state the window experts restart from.

    After ``push`` has been called for steps ``1..t``, the buffer holds
    observations ``t-tau+1..t`` and the anchor is the learner's filtered state
    at ``t - tau``. Before the window fills, the anchor is the initial prior
    and every observation so far is replayed.
    """

    def __init__(self, tau: int, init: GaussianState):
        if tau < 1:
            raise ValueError("tau must be at least 1")
        self.tau = tau
        self.init = init
        self.obs = deque(maxlen=tau)
        self._posts = deque(maxlen=tau + 1)

    def push(self, obs: Observation, posterior: GaussianState):
        self.obs.append(obs)
        self._posts.append(posterior)

    @property
    def anchor_is_prior(self) -> bool:
        return len(self._posts) <= self.tau

    @property
    def anchor(self) -> GaussianState:
        return self.init if self.anchor_is_prior else self._posts[0]

    def __len__(self):
        return len(self.obs)


def window_expert_predict(buf: WindowBuffer, q_k, sigma2) -> GaussianState:
    """Prior at the current step for an expert that used ``q_k`` over the window.

    ``q_k`` may carry extra leading axes (e.g. all K experts at once); they
    broadcast against the buffer's batch axes.
    """
    q_k = np.asarray(q_k, dtype=float)
    state = buf.anchor
    lead = np.broadcast_shapes(q_k.shape[:-2], state.cov.shape[:-2])
    state = GaussianState(np.broadcast_to(state.mean, lead + state.mean.shape[-1:]),
                          np.broadcast_to(state.cov, lead + state.cov.shape[-2:]))
    if not buf.anchor_is_prior:
        state = kf_predict_step(state, q_k)
    for obs in buf.obs:
        state = kf_predict_step(kf_filter_step(state, obs, sigma2), q_k)
    return state


def _expert_axis(a):
    return np.moveaxis(a, 0, -1)


def _setup(bank, data, init, p0, m, alpha):
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    if xs.shape[-1] != bank.dim:
        raise DimensionError(f"data dimension {xs.shape[-1]} does not match bank dimension {bank.dim}")
    batch = xs.shape[1:-1]
    m = transition_for(bank.K, alpha=alpha, m=m)
    base = init if init is not None else initial_state(bank.dim)
    state = initial_state(bank.dim, base.mean, base.cov, batch_shape=batch)
    p = uniform_weights(bank.K, batch) if p0 is None else np.broadcast_to(p0, batch + (bank.K,)).copy()
    return xs, ys, batch, m, state, p


def kfmh_run(bank: CovarianceBank, data, eta=1.0, m=None, tau=5, sigma0=0.8,
             adam: AdamState | None = None, alpha=0.01, init=None, p0=None,
             learn_sigma=True) -> KfmhTrace:
    """Deterministic variance aggregation with window experts and ADAM on sigma.

    Per step t: every expert replays the window with its own covariance and is
    scored by the negative log predictive density of ``y_t`` at the current
    sigma; Markov-Hedge updates the weights; the learner filters ``y_t`` and
    predicts with the mixed covariance under the updated weights; sigma takes
    one ADAM step on the gradient of the learner's own loss.

    ``m`` overrides the ``M_alpha`` transition matrix built from ``alpha``.
    """
    xs, ys, batch, m, state, p = _setup(bank, data, init, p0, m, alpha)
    T = xs.shape[0]
    if T < 1:
        raise ValueError("empty episode")
    adam = adam if adam is not None else AdamState()
    sigma = np.full(batch, float(sigma0))
    if np.any(sigma <= 0):
        raise ValueError("sigma0 must be positive")
    buf = WindowBuffer(tau, state)
    expert_qs = bank.qs[(slice(None),) + (None,) * len(batch)]

    K, d = bank.K, bank.dim
    y_hat = np.empty(ys.shape)
    pred_var = np.empty(ys.shape)
    nll = np.empty(ys.shape)
    sigmas = np.empty(ys.shape)
    weights = np.empty((T,) + batch + (K,))
    qhat_diag = np.empty((T,) + batch + (d,))
    expert_losses = np.empty((T,) + batch + (K,))
    for t in range(T):
        obs = Observation(xs[t], ys[t])
        s2 = sigma**2
        sigmas[t] = sigma
        weights[t] = p
        qhat_diag[t] = np.diagonal(mixture_q(p, bank), axis1=-2, axis2=-1)
        y_hat[t] = kf_forecast(state, xs[t])
        pred_var[t] = predictive_variance(state, xs[t], s2)
        nll[t] = nll_loss(state, obs, s2)

        experts = window_expert_predict(buf, expert_qs, s2)
        ell = _expert_axis(nll_loss(experts, obs, s2))
        if not (np.isfinite(ell).all() and np.isfinite(nll[t]).all()):
            raise NumericalError("non-finite loss", step=t + 1)
        expert_losses[t] = ell
        p = markov_hedge_update(p, ell, eta, m)

        post = kf_filter_step(state, obs, s2)
        buf.push(obs, post)
        if learn_sigma:
            grad = nll_grad_sigma(state, obs, sigma)
            adam, sigma = adam_step(adam, grad, sigma)
        state = kf_predict_step(post, mixture_q(p, bank))
    return KfmhTrace(
        y=ys, y_hat=y_hat, sq_loss=(ys - y_hat) ** 2, nll_loss=nll, pred_var=pred_var,
        weights=weights, sigma=sigmas, qhat_diag=qhat_diag, expert_losses=expert_losses,
        meta={"method": "kfmh", "eta": eta, "tau": tau, "sigma0": sigma0,
              "final_sigma": sigma},
    )


def _rngs(rng_seed, batch):
    n = int(np.prod(batch)) if batch else 1
    seeds = np.atleast_1d(np.asarray(rng_seed, dtype=np.int64)).ravel()
    if seeds.size == 1 and n > 1:
        return np.random.default_rng(int(seeds[0])), None
    if seeds.size != n:
        raise ValueError(f"need 1 or {n} seeds, got {seeds.size}")
    return None, [np.random.default_rng(int(s)) for s in seeds]


def kfmh_randomized_run(bank: CovarianceBank, sigma2, data, eta=1.0, m=None, rng_seed=0,
                        alpha=0.01, init=None, p0=None) -> KfmhTrace:
    """Randomized variance aggregation with independent constant-Q experts.

    After the Markov-Hedge update on the experts' quadratic losses the learner
    draws ``Q^(k)`` with probability ``p_{t+1}(k)`` for its own time update.

    ``rng_seed`` is one seed, or one per replication for batched data.
    ``expected_loss[t]`` is the learner's squared error at t averaged over the
    draw that first influences it (the draw two steps earlier) while all
    other draws stay as realized.
    """
    xs, ys, batch, m, state, p = _setup(bank, data, init, p0, m, alpha)
    T, K, d = xs.shape[0], bank.K, bank.dim
    sigma2 = np.asarray(sigma2, dtype=float)
    per_step = sigma2.ndim > 0
    shared_rng, row_rngs = _rngs(rng_seed, batch)
    expand = (slice(None),) + (None,) * len(batch)
    expert_qs = bank.qs[expand]
    experts = initial_state(d, state.mean[..., :], state.cov, batch_shape=(K,) + batch)

    y_hat = np.empty(ys.shape)
    pred_var = np.empty(ys.shape)
    nll = np.empty(ys.shape)
    weights = np.empty((T,) + batch + (K,))
    qhat_diag = np.empty((T,) + batch + (d,))
    expert_losses = np.empty((T,) + batch + (K,))
    expected = np.empty(ys.shape)
    chosen = np.empty((T,) + batch, dtype=int)
    # (posterior at the draw, the draw's weights) from two steps back
    lagged = deque(maxlen=2)
    for t in range(T):
        s2 = sigma2[t] if per_step else sigma2
        obs = Observation(xs[t], ys[t])
        weights[t] = p
        y_hat[t] = kf_forecast(state, xs[t])
        pred_var[t] = predictive_variance(state, xs[t], s2)
        nll[t] = nll_loss(state, obs, s2)
        sq = (ys[t] - y_hat[t]) ** 2
        if len(lagged) == 2:
            post_draw, p_draw, s2_next = lagged[0]
            cf = kf_predict_step(post_draw, expert_qs)
            cf = kf_filter_step(cf, Observation(xs[t - 1], ys[t - 1]), s2_next)
            cf_sq = _expert_axis((ys[t] - kf_forecast(cf, xs[t])) ** 2)
            expected[t] = mix_predictions(p_draw, cf_sq)
        else:
            expected[t] = sq

        ell = _expert_axis((ys[t] - kf_forecast(experts, xs[t])) ** 2)
        expert_losses[t] = ell
        try:
            p = markov_hedge_update(p, ell, eta, m)
        except NumericalError as exc:
            raise NumericalError(str(exc), step=t + 1) from None
        experts = kf_predict_step(kf_filter_step(experts, obs, s2), expert_qs)

        post = kf_filter_step(state, obs, s2)
        if shared_rng is not None:
            u = shared_rng.random(batch)
        else:
            u = np.array([r.random() for r in row_rngs]).reshape(batch)
        k = (np.cumsum(p, axis=-1) <= u[..., None]).sum(axis=-1)
        k = np.minimum(k, K - 1)
        chosen[t] = k
        qhat_diag[t] = np.diagonal(bank.qs[k], axis1=-2, axis2=-1)
        s2_next = (sigma2[t + 1] if t + 1 < T else sigma2[t]) if per_step else sigma2
        lagged.append((post, p, s2_next))
        state = kf_predict_step(post, bank.qs[k])
    return KfmhTrace(
        y=ys, y_hat=y_hat, sq_loss=(ys - y_hat) ** 2, nll_loss=nll, pred_var=pred_var,
        weights=weights, qhat_diag=qhat_diag, expert_losses=expert_losses,
        expected_loss=expected,
        meta={"method": "kfmh-randomized", "eta": eta, "rng_seed": rng_seed,
              "chosen": chosen},
    )


def grid_search(data, bank: CovarianceBank, eta_grid, alpha_grid, criterion="nll", **fixed):
    """Pick ``(eta, alpha)`` minimizing the cumulative loss of :func:`kfmh_run`.

    Ties go to the smaller alpha, then the smaller eta. ``criterion`` is
    ``"nll"`` (the loss the method optimizes) or ``"sq"``.

    Returns:
        ``(eta, alpha, scores)`` where ``scores`` maps each pair to its loss.
    """
    eta_grid, alpha_grid = sorted(eta_grid), sorted(alpha_grid)
    if not eta_grid or not alpha_grid:
        raise ValueError("grids must be non-empty")
    if criterion not in ("nll", "sq"):
        raise ValueError(f"unknown criterion {criterion!r}")
    best, best_loss, scores = None, np.inf, {}
    for alpha, eta in product(alpha_grid, eta_grid):
        tr = kfmh_run(bank, data, eta=eta, alpha=alpha, **fixed)
        loss = float((tr.nll_loss if criterion == "nll" else tr.sq_loss).sum())
        scores[(eta, alpha)] = loss
        if best is None or loss < best_loss:
            best, best_loss = (eta, alpha), loss
    return best[0], best[1], scores
