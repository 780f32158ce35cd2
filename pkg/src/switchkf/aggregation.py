"""Expert aggregation: exponential weights, Markov-Hedge and regret accounting.

Weight vectors are plain arrays whose last axis indexes experts. A transition
matrix ``m`` is row-stochastic with ``m[j, k]`` the probability of moving from
expert j to expert k.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, NumericalError
from .statespace import (
    CovarianceBank,
    Observation,
    initial_state,
    kf_filter_step,
    kf_forecast,
    kf_predict_step,
    nll_loss,
)
from .trace import PredictionTrace


def uniform_weights(K: int, batch_shape=()) -> np.ndarray:
    return np.full(tuple(batch_shape) + (K,), 1.0 / K)


def check_weights(p, atol=1e-12):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=atol, rtol=0):
        raise ValueError("weights must be non-negative and sum to one")
    return p


def check_transition(m, atol=1e-12):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"transition matrix must be square, got {m.shape}")
    if np.any(m < 0) or np.any(m > 1) or not np.allclose(m.sum(axis=1), 1.0, atol=atol, rtol=0):
        raise ValueError("transition matrix must be row-stochastic")
    return m


def ewa_update(p, losses, eta) -> np.ndarray:
    """Exponential-weights step ``p'(k) ~ p(k) exp(-eta * loss_k)``.

    Computed in log space with the maximum subtracted, so very large losses
    (quadratic or likelihood losses are unbounded) do not underflow.
    """
    p = np.asarray(p, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if p.shape[-1] != losses.shape[-1]:
        raise DimensionError(f"{p.shape[-1]} weights but {losses.shape[-1]} losses")
    if not np.isfinite(losses).all():
        raise NumericalError("non-finite expert loss")
    with np.errstate(divide="ignore"):
        logw = np.log(p) - eta * losses
    top = logw.max(axis=-1, keepdims=True)
    if not np.isfinite(top).all():
        raise NumericalError("all expert weights vanished")
    w = np.exp(logw - top)
    return w / w.sum(axis=-1, keepdims=True)


def markov_hedge_update(p, losses, eta, m) -> np.ndarray:
    """Exponential-weights step followed by ``p''(k) = sum_j m[j, k] p'(j)``."""
    m = np.asarray(m, dtype=float)
    w = ewa_update(p, losses, eta) @ m
    return w / w.sum(axis=-1, keepdims=True)


def make_m_alpha(K: int, alpha: float) -> np.ndarray:
    """Transition matrix with ``1 - alpha`` on the diagonal and ``alpha/(K-1)`` elsewhere."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    m = np.full((K, K), alpha / (K - 1))
    np.fill_diagonal(m, 1.0 - alpha)
    return m


def mix_predictions(p, preds) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if p.shape[-1] != preds.shape[-1]:
        raise DimensionError(f"{p.shape[-1]} weights but {preds.shape[-1]} predictions")
    return np.einsum("...k,...k->...", p, preds)


def transition_for(K: int, alpha: float | None = None, m=None) -> np.ndarray:
    """Resolve an explicit matrix or an ``M_alpha`` parameter (identity for K=1)."""
    if m is not None:
        return check_transition(m)
    if K == 1:
        return np.ones((1, 1))
    return make_m_alpha(K, 0.0 if alpha is None else alpha)


@dataclass
class RegretLedger:
    """Per-step learner and expert losses of one run."""

    learner_losses: np.ndarray
    expert_losses: np.ndarray

    def __post_init__(self):
        self.learner_losses = np.asarray(self.learner_losses, dtype=float)
        self.expert_losses = np.asarray(self.expert_losses, dtype=float)
        if self.expert_losses.shape[:1] != self.learner_losses.shape:
            raise DimensionError("learner and expert loss sequences differ in length")
        if not (np.isfinite(self.learner_losses).all() and np.isfinite(self.expert_losses).all()):
            raise NumericalError("cumulative losses must be finite")

    @property
    def T(self) -> int:
        return self.learner_losses.shape[0]

    @property
    def K(self) -> int:
        return self.expert_losses.shape[1]

    @property
    def learner_cumloss(self) -> float:
        return float(self.learner_losses.sum())

    @property
    def expert_cumloss(self) -> np.ndarray:
        return self.expert_losses.sum(axis=0)

    def competitor_cumloss(self, competitor) -> float:
        k = self._check_competitor(competitor)
        return float(self.expert_losses[np.arange(self.T), k].sum())

    @staticmethod
    def switch_count(competitor) -> int:
        k = np.asarray(competitor)
        return int(np.count_nonzero(k[1:] != k[:-1]))

    def _check_competitor(self, competitor):
        k = np.asarray(competitor, dtype=int)
        if k.shape != (self.T,):
            raise DimensionError(f"competitor has length {k.shape}, trace has {self.T}")
        if np.any(k < 0) or np.any(k >= self.K):
            raise IndexError("competitor expert index out of range")
        return k


def regret_report(ledger: RegretLedger, competitor, eta, m, prior=None):
    """Realized regret against an expert sequence and the Markov-Hedge bound.

    The bound is ``(1/eta) log(1/prior[k_1]) + (1/eta) sum_t log(1/m[k_{t-1}, k_t])
    + eta T / 8`` and holds for losses in [0, 1]. Paths through a zero
    transition give an infinite bound.
    """
    k = ledger._check_competitor(competitor)
    m = check_transition(m)
    prior = uniform_weights(ledger.K) if prior is None else check_weights(prior)
    regret = ledger.learner_cumloss - ledger.competitor_cumloss(k)
    with np.errstate(divide="ignore"):
        path = -np.log(prior[k[0]]) - np.log(m[k[:-1], k[1:]]).sum()
    bound = path / eta + eta * ledger.T / 8.0
    return regret, float(bound)


def _expert_axis(a):
    return np.moveaxis(a, 0, -1)


def kf_agg_run(bank: CovarianceBank, data, eta=1.0, m=None, sigma2=None,
               loss="quadratic", init=None, p0=None) -> PredictionTrace:
    """Aggregate K constant-covariance Kalman filters in prediction space.

    Each expert is an independent filter with its own ``Q^(k)``; the learner
    forecasts the weighted mean of their forecasts and reweights them with
    Markov-Hedge on quadratic or negative log-likelihood losses.

    ``sigma2`` is a scalar or a per-step array ``(T, ...)`` shared by all
    experts; when None the bank's per-expert ``sigma2s`` are used.
    """
    if loss not in ("quadratic", "nll"):
        raise ValueError(f"unknown loss {loss!r}")
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    T, d = xs.shape[0], xs.shape[-1]
    if d != bank.dim:
        raise DimensionError(f"data dimension {d} does not match bank dimension {bank.dim}")
    batch = xs.shape[1:-1]
    K = bank.K
    m = transition_for(K, m=m)
    expand = (slice(None),) + (None,) * len(batch)
    qs = bank.qs[expand]
    if sigma2 is None:
        if bank.sigma2s is None:
            raise ValueError("no observation variance given and bank has no sigma2s")
        s2_fixed = bank.sigma2s[expand]
        per_step = False
    else:
        sigma2 = np.asarray(sigma2, dtype=float)
        per_step = sigma2.ndim > 0
        s2_fixed = sigma2
    base = init if init is not None else initial_state(d)
    experts = initial_state(d, base.mean, base.cov, batch_shape=(K,) + batch)
    p = uniform_weights(K, batch) if p0 is None else np.broadcast_to(p0, batch + (K,)).copy()

    y_hat = np.empty(ys.shape)
    nll = np.empty(ys.shape)
    weights = np.empty((T,) + batch + (K,))
    expert_losses = np.empty((T,) + batch + (K,))
    for t in range(T):
        s2 = sigma2[t] if per_step else s2_fixed
        obs = Observation(xs[t], ys[t])
        preds = _expert_axis(kf_forecast(experts, xs[t]))
        expert_nll = _expert_axis(nll_loss(experts, obs, s2))
        weights[t] = p
        y_hat[t] = mix_predictions(p, preds)
        with np.errstate(divide="ignore"):
            nll[t] = -logsumexp(np.log(p) - expert_nll, axis=-1)
        ell = (ys[t][..., None] - preds) ** 2 if loss == "quadratic" else expert_nll
        expert_losses[t] = ell
        try:
            p = markov_hedge_update(p, ell, eta, m)
        except NumericalError as exc:
            raise NumericalError(str(exc), step=t + 1) from None
        experts = kf_predict_step(kf_filter_step(experts, obs, s2), qs)
    return PredictionTrace(
        y=ys, y_hat=y_hat, sq_loss=(ys - y_hat) ** 2, nll_loss=nll,
        weights=weights, meta={"method": "kf-agg", "loss": loss,
                               "expert_losses": expert_losses},
    )
