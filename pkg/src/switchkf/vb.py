"""Variational Bayes for the Markov-switching variance model.

The posterior over states and regimes is approximated by ``q_theta x q_Z``:

* E-theta: given regime marginals, the states follow a Kalman model with
  precision-averaged variances; smoothing gives the moments ``mu``, ``V`` and
  the lag-one cross-covariances ``W``.
* E-Z: given those moments, the regimes form an HMM with unary potentials
  ``rho`` and pairwise potentials ``gamma``, solved by forward-backward.

Potentials are handled in the log domain throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import logsumexp

from .aggregation import check_transition, check_weights
from .errors import DataError, DimensionError, NumericalError
from .statespace import (
    GaussianState,
    Observation,
    initial_state,
    kf_filter_step,
    kf_predict_step,
    kf_run,
)
from .trace import PredictionTrace

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class RegimeBank:
    """Per-regime variances, transition matrix and initial regime law."""

    sigma2s: np.ndarray
    qs: np.ndarray
    transition: np.ndarray
    prior: np.ndarray | None = None

    def __post_init__(self):
        s2 = np.asarray(self.sigma2s, dtype=float)
        qs = np.asarray(self.qs, dtype=float)
        K = s2.shape[0]
        if qs.shape[0] != K or qs.ndim != 3:
            raise DimensionError("need one covariance per regime")
        if np.any(s2 <= 0):
            raise ValueError("regime variances must be positive")
        if np.linalg.eigvalsh(qs).min() <= 0:
            raise ValueError("regime covariances must be positive definite")
        prior = np.full(K, 1.0 / K) if self.prior is None else check_weights(self.prior)
        object.__setattr__(self, "sigma2s", s2)
        object.__setattr__(self, "qs", qs)
        object.__setattr__(self, "transition", check_transition(self.transition))
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "_qinv", np.linalg.inv(qs))
        object.__setattr__(self, "_logdet", np.linalg.slogdet(qs)[1])

    @property
    def K(self) -> int:
        return self.sigma2s.shape[0]


@dataclass
class SoftAssignments:
    marginals: np.ndarray
    pairwise: np.ndarray | None = None

    @classmethod
    def uniform(cls, T, K):
        return cls(np.full((T, K), 1.0 / K))


@dataclass
class SmoothedMoments:
    """Smoothed means ``mu``, covariances ``v`` and lag-one ``w[s] = Cov(theta_s, theta_{s+1})``.

    ``pred_mean``/``pred_cov`` keep the one-step-ahead filter priors used for
    forecasting.
    """

    mu: np.ndarray
    v: np.ndarray
    w: np.ndarray
    pred_mean: np.ndarray | None = None
    pred_cov: np.ndarray | None = None


def averaged_variances(assign: SoftAssignments, bank: RegimeBank):
    """Precision-averaged variances per step.

    ``1/sigma2_bar_s = sum_k q_s(k) / sigma2_k`` and
    ``inv(Q_bar_s) = sum_k q_s(k) inv(Q_k)``.
    """
    q = np.asarray(assign.marginals, dtype=float)
    if q.shape[-1] != bank.K:
        raise DimensionError("assignments and bank disagree on K")
    sigma2_bar = 1.0 / (q @ (1.0 / bank.sigma2s))
    q_bar = np.linalg.inv(np.einsum("sk,kij->sij", q, bank._qinv))
    return sigma2_bar, 0.5 * (q_bar + np.swapaxes(q_bar, -1, -2))


def e_theta_step(data, sigma2_bar, q_bar, init: GaussianState | None = None) -> SmoothedMoments:
    """Filter with the averaged variances, then smooth (RTS) with lag-one terms.

    ``q_bar[s]`` drives ``theta_{s+1} - theta_s``; ``init`` is the prior of
    ``theta_1``.
    """
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    T, d = xs.shape
    state = init if init is not None else initial_state(d)
    pm, pc = np.empty((T, d)), np.empty((T, d, d))
    fm, fc = np.empty((T, d)), np.empty((T, d, d))
    for s in range(T):
        if s > 0:
            state = kf_predict_step(state, q_bar[s - 1])
        pm[s], pc[s] = state.mean, state.cov
        state = kf_filter_step(state, Observation(xs[s], ys[s]), sigma2_bar[s])
        fm[s], fc[s] = state.mean, state.cov
    if not (np.isfinite(fm).all() and np.isfinite(fc).all()):
        raise NumericalError("non-finite filtered moments")
    mu, v = fm.copy(), fc.copy()
    w = np.empty((max(T - 1, 0), d, d))
    for s in range(T - 2, -1, -1):
        # gain J = P_{s|s} inv(P_{s+1|s})
        gain = np.linalg.solve(pc[s + 1], fc[s]).T
        mu[s] = fm[s] + gain @ (mu[s + 1] - pm[s + 1])
        v[s] = fc[s] + gain @ (v[s + 1] - pc[s + 1]) @ gain.T
        v[s] = 0.5 * (v[s] + v[s].T)
        w[s] = gain @ v[s + 1]
    return SmoothedMoments(mu, v, w, pred_mean=pm, pred_cov=pc)


def e_z_potentials(data, mom: SmoothedMoments, bank: RegimeBank):
    """Log unary and pairwise potentials of the regime HMM.

    Returns:
        ``log_rho`` of shape ``(T, K)`` and ``log_gamma`` of shape
        ``(T-1, K, K)`` where ``log_gamma[s-1, j, k]`` scores the move from
        regime j at s-1 to regime k at s. Both are shifted so each step's
        maximum is zero; factors of ``rho_1`` that do not depend on the
        regime are dropped for the same reason.
    """
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    T = xs.shape[0]
    if mom.mu.shape[0] != T:
        raise DimensionError("moments and data lengths differ")
    s2 = bank.sigma2s
    resid2 = (ys - np.einsum("si,si->s", mom.mu, xs)) ** 2
    xvx = np.einsum("si,sij,sj->s", xs, mom.v, xs)
    log_rho = (-0.5 * (_LOG_2PI + np.log(s2))[None, :]
               - (resid2 + xvx)[:, None] / (2.0 * s2[None, :]))

    if T > 1:
        w = 0.5 * (mom.w + np.swapaxes(mom.w, -1, -2))
        diff = mom.mu[1:] - mom.mu[:-1]
        spread = mom.v[1:] + mom.v[:-1] - 2.0 * w
        maha = np.einsum("si,jik,sk->sj", diff, bank._qinv, diff)
        trace = np.einsum("jik,ski->sj", bank._qinv, spread)
        d = xs.shape[1]
        from_j = -0.5 * (d * _LOG_2PI + bank._logdet[None, :] + maha + trace)
        with np.errstate(divide="ignore"):
            log_gamma = from_j[:, :, None] + np.log(bank.transition)[None, :, :]
        log_gamma = log_gamma - log_gamma.max(axis=(1, 2), keepdims=True)
    else:
        log_gamma = np.empty((0, bank.K, bank.K))
    log_rho = log_rho - log_rho.max(axis=1, keepdims=True)
    return log_rho, log_gamma


def forward_backward(log_rho, log_gamma, prior) -> SoftAssignments:
    """Regime marginals of the chain ``prior(z_1) rho_1(z_1) prod_s gamma_s(z_{s-1}, z_s) rho_s(z_s)``."""
    log_rho = np.asarray(log_rho, dtype=float)
    log_gamma = np.asarray(log_gamma, dtype=float)
    T, K = log_rho.shape
    if log_gamma.shape != (max(T - 1, 0), K, K):
        raise DimensionError(f"log_gamma has shape {log_gamma.shape}, expected {(T - 1, K, K)}")
    with np.errstate(divide="ignore"):
        log_prior = np.log(np.asarray(prior, dtype=float))
    la = np.empty((T, K))
    lb = np.zeros((T, K))
    la[0] = log_prior + log_rho[0]
    la[0] -= logsumexp(la[0])
    for s in range(1, T):
        la[s] = log_rho[s] + logsumexp(la[s - 1][:, None] + log_gamma[s - 1], axis=0)
        la[s] -= logsumexp(la[s])
    for s in range(T - 2, -1, -1):
        lb[s] = logsumexp(log_gamma[s] + (lb[s + 1] + log_rho[s + 1])[None, :], axis=1)
        lb[s] -= logsumexp(lb[s])
    post = la + lb
    norm = logsumexp(post, axis=1, keepdims=True)
    if not np.isfinite(norm).all():
        raise NumericalError("forward-backward lost all mass")
    marginals = np.exp(post - norm)
    pair = la[:-1, :, None] + log_gamma + (log_rho[1:] + lb[1:])[:, None, :]
    if T > 1:
        pair = np.exp(pair - logsumexp(pair, axis=(1, 2), keepdims=True))
    return SoftAssignments(marginals, pair)


@dataclass
class VBResult:
    assign: SoftAssignments
    moments: SmoothedMoments
    trace: PredictionTrace


def vb_run(data, bank: RegimeBank, n_iter: int = 5, init_assign: SoftAssignments | None = None,
           init: GaussianState | None = None) -> VBResult:
    """Alternate E-theta and E-Z steps for ``n_iter`` rounds.

    The returned trace holds one-step-ahead forecasts from a final filtering
    pass with the last assignments. Note these assignments use the whole
    sequence, so the forecasts are not causal.
    """
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    xs = np.asarray(data.xs)
    if xs.ndim != 2:
        raise DataError("vb_run expects a single (unbatched) episode")
    T = xs.shape[0]
    assign = init_assign if init_assign is not None else SoftAssignments.uniform(T, bank.K)
    for it in range(n_iter):
        s2_bar, q_bar = averaged_variances(assign, bank)
        try:
            mom = e_theta_step(data, s2_bar, q_bar, init)
        except NumericalError as exc:
            raise NumericalError(f"VB round {it + 1}: {exc}") from None
        log_rho, log_gamma = e_z_potentials(data, mom, bank)
        assign = forward_backward(log_rho, log_gamma, bank.prior)
    s2_bar, q_bar = averaged_variances(assign, bank)
    mom = e_theta_step(data, s2_bar, q_bar, init)
    y_hat = np.einsum("si,si->s", mom.pred_mean, xs)
    pred_var = np.einsum("si,sij,sj->s", xs, mom.pred_cov, xs) + s2_bar
    trace = PredictionTrace.from_gaussian(np.asarray(data.ys, dtype=float), y_hat, pred_var,
                                          meta={"method": "vb", "n_iter": n_iter})
    return VBResult(assign, mom, trace)


def brute_force_posterior(data, bank: RegimeBank, init: GaussianState | None = None,
                          max_T: int = 10) -> np.ndarray:
    """Exact regime marginals by enumerating every regime sequence.

    Each sequence is weighted by its prior probability times the Kalman
    evidence of the targets under that sequence's variances.
    """
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    T, d = xs.shape
    if T > max_T or bank.K ** T > 2 ** 16:
        raise ValueError(f"{bank.K}^{T} sequences is too many to enumerate")
    seqs = np.array(list(product(range(bank.K), repeat=T))).T  # (T, N)
    n = seqs.shape[1]
    with np.errstate(divide="ignore"):
        log_w = np.log(bank.prior[seqs[0]])
        log_w = log_w + np.log(bank.transition[seqs[:-1], seqs[1:]]).sum(axis=0)
    base = init if init is not None else initial_state(d)
    start = initial_state(d, base.mean, base.cov, batch_shape=(n,))
    tr = kf_run(np.broadcast_to(xs[:, None], (T, n, d)), np.broadcast_to(ys[:, None], (T, n)),
                bank.qs[seqs], bank.sigma2s[seqs], init=start)
    log_w = log_w - tr.nll_loss.sum(axis=0)
    w = np.exp(log_w - logsumexp(log_w))
    marg = np.zeros((T, bank.K))
    for k in range(bank.K):
        marg[:, k] = ((seqs == k) * w).sum(axis=1)
    return marg
