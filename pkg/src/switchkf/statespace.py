"""Linear Gaussian state-space model with random-walk state.

    y_t = theta_t^T x_t + eps_t,      eps_t ~ N(0, sigma_t^2)
    theta_{t+1} = theta_t + nu_t,     nu_t ~ N(0, Q_t)

Every operation broadcasts over leading batch axes: a state mean has shape
``(..., d)`` and its covariance ``(..., d, d)``. This lets one call advance many
independent filters at once (replications, experts), which is how the
benchmark stays fast on a single core.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError
from .trace import PredictionTrace

#: Lower clamp on the predictive variance ``sigma^2 + x^T P x``.
S_FLOOR = 1e-12

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianState:
    """Mean and covariance of the state at one filtering step."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim < 1 or cov.shape[-2:] != (mean.shape[-1],) * 2:
            raise DimensionError(
                f"mean {mean.shape} and cov {cov.shape} are not compatible"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def __getitem__(self, idx) -> "GaussianState":
        """Index the leading (batch) axes."""
        return GaussianState(self.mean[idx], self.cov[idx])


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: np.ndarray | float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


@dataclass(frozen=True)
class NoiseParams:
    """State noise covariance ``q`` and observation noise variance ``sigma2``."""

    q: np.ndarray
    sigma2: float

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise DimensionError(f"q must be square, got shape {q.shape}")
        if np.linalg.eigvalsh(0.5 * (q + q.T)).min() < -1e-10:
            raise ValueError("q is not positive semidefinite")
        object.__setattr__(self, "q", q)

    def normalized(self) -> "NoiseParams":
        """The pair ``(1, q / sigma2)``, which yields identical forecasts."""
        return NoiseParams(self.q / self.sigma2, 1.0)


@dataclass(frozen=True)
class CovarianceBank:
    """Candidate state-noise covariances, optionally paired with variances.

    ``qs`` has shape ``(K, d, d)``. ``sigma2s`` (length K) is only used when
    no observation-noise truth is available.
    """

    qs: np.ndarray
    sigma2s: np.ndarray | None = None

    def __post_init__(self):
        qs = np.asarray(self.qs, dtype=float)
        if qs.ndim != 3 or qs.shape[1] != qs.shape[2] or qs.shape[0] < 1:
            raise DimensionError(f"bank must have shape (K, d, d), got {qs.shape}")
        if not np.allclose(qs, np.swapaxes(qs, 1, 2), atol=1e-12):
            raise ValueError("bank matrices must be symmetric")
        if np.linalg.eigvalsh(qs).min() < -1e-10:
            raise ValueError("bank matrices must be positive semidefinite")
        object.__setattr__(self, "qs", qs)
        if self.sigma2s is not None:
            s2 = np.asarray(self.sigma2s, dtype=float)
            if s2.shape != (qs.shape[0],) or np.any(s2 <= 0):
                raise ValueError("sigma2s must be K positive values")
            object.__setattr__(self, "sigma2s", s2)

    @property
    def K(self) -> int:
        return self.qs.shape[0]

    @property
    def dim(self) -> int:
        return self.qs.shape[1]

    def mean_q(self) -> np.ndarray:
        return self.qs.mean(axis=0)


def initial_state(d: int, mean=None, cov=None, batch_shape=()) -> GaussianState:
    """Prior ``(theta_{1|0}, P_{1|0})``; defaults to ``N(0, I)``."""
    mean = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    cov = np.eye(d) if cov is None else np.asarray(cov, dtype=float)
    mean = np.broadcast_to(mean, tuple(batch_shape) + (d,)).copy()
    cov = np.broadcast_to(cov, tuple(batch_shape) + (d, d)).copy()
    return GaussianState(mean, cov)


def _symmetrize(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _check_dim(state: GaussianState, x: np.ndarray):
    if x.shape[-1] != state.dim:
        raise DimensionError(f"x has dimension {x.shape[-1]}, state has {state.dim}")


def _quad(state: GaussianState, x: np.ndarray):
    """Return ``P x`` and ``x^T P x``."""
    px = np.einsum("...ij,...j->...i", state.cov, x)
    return px, np.einsum("...i,...i->...", x, px)


def kf_filter_step(prior: GaussianState, obs: Observation, sigma2) -> GaussianState:
    """Measurement update with a scalar observation.

    ``P_post = P - P x x^T P / (x^T P x + sigma2)`` and
    ``mean_post = mean - (P_post / sigma2) x (mean^T x - y)``.
    """
    x, y = obs.x, obs.y
    _check_dim(prior, x)
    sigma2 = np.asarray(sigma2, dtype=float)
    if not (np.isfinite(x).all() and np.isfinite(y).all() and np.isfinite(sigma2).all()):
        raise NumericalError("non-finite observation or variance")
    if np.any(sigma2 <= 0):
        raise ValueError("sigma2 must be positive")
    px, xpx = _quad(prior, x)
    s = np.maximum(xpx + sigma2, S_FLOOR)
    cov = prior.cov - px[..., :, None] * px[..., None, :] / s[..., None, None]
    cov = _symmetrize(cov)
    resid = np.einsum("...i,...i->...", prior.mean, x) - y
    gain = np.einsum("...ij,...j->...i", cov, x) / sigma2[..., None]
    mean = prior.mean - gain * resid[..., None]
    return GaussianState(mean, cov)


def kf_predict_step(posterior: GaussianState, q) -> GaussianState:
    """Time update of the random walk: ``P_{t+1|t} = P_{t|t} + Q``."""
    q = np.asarray(q, dtype=float)
    if q.shape[-2:] != (posterior.dim, posterior.dim):
        raise DimensionError(f"q has shape {q.shape}, state dim is {posterior.dim}")
    cov = posterior.cov + q
    mean = np.broadcast_to(posterior.mean, cov.shape[:-1])
    return GaussianState(mean, cov)


def kf_forecast(prior: GaussianState, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dim(prior, x)
    return np.einsum("...i,...i->...", prior.mean, x)


def predictive_variance(prior: GaussianState, x, sigma2) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_dim(prior, x)
    _, xpx = _quad(prior, x)
    return np.maximum(xpx + sigma2, S_FLOOR)


def gaussian_nll(y, mean, var):
    """Negative log density of ``N(mean, var)`` at ``y``."""
    var = np.asarray(var, dtype=float)
    if np.any(var <= 0):
        raise NumericalError("degenerate predictive variance")
    return 0.5 * (_LOG_2PI + np.log(var)) + (y - mean) ** 2 / (2.0 * var)


def nll_loss(prior: GaussianState, obs: Observation, sigma2) -> np.ndarray:
    """Negative log predictive density of ``y`` under the prior state.

    The predictive distribution is ``N(mean^T x, sigma2 + x^T P x)``; the full
    ``log(2 pi)`` constant is kept.
    """
    _check_dim(prior, obs.x)
    _, xpx = _quad(prior, obs.x)
    s = xpx + np.asarray(sigma2, dtype=float)
    if np.any(s <= 0):
        raise NumericalError("predictive variance is not positive")
    s = np.maximum(s, S_FLOOR)
    return gaussian_nll(obs.y, kf_forecast(prior, obs.x), s)


def nll_grad_sigma(prior: GaussianState, obs: Observation, sigma) -> np.ndarray:
    """Derivative of :func:`nll_loss` with respect to ``sigma`` (not ``sigma^2``).

    ``d/dsigma = sigma / s - sigma r^2 / s^2`` with ``s = sigma^2 + x^T P x``.
    """
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    _, xpx = _quad(prior, obs.x)
    s = np.maximum(sigma**2 + xpx, S_FLOOR)
    r = obs.y - kf_forecast(prior, obs.x)
    return sigma / s - sigma * r**2 / s**2


def kf_run(xs, ys, q, sigma2, init: GaussianState | None = None) -> PredictionTrace:
    """Run a Kalman filter over a whole sequence.

    Args:
        xs: designs, shape ``(T, ..., d)``.
        ys: targets, shape ``(T, ...)``.
        q: a constant ``(d, d)`` covariance, or one per step with shape
            ``(T, ..., d, d)``; ``q[t]`` drives ``theta_{t+1} - theta_t``.
        sigma2: scalar, or per-step array indexed along axis 0.
        init: prior at t=1, defaults to ``N(0, I)``.

    Returns:
        One-step-ahead forecasts with their predictive variances.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    q = np.asarray(q, dtype=float)
    sigma2 = np.asarray(sigma2, dtype=float)
    T, d = xs.shape[0], xs.shape[-1]
    const_q = q.ndim == 2
    const_s = sigma2.ndim == 0
    state = init if init is not None else initial_state(d, batch_shape=xs.shape[1:-1])
    y_hat = np.empty(ys.shape)
    pred_var = np.empty(ys.shape)
    for t in range(T):
        s2 = sigma2 if const_s else sigma2[t]
        obs = Observation(xs[t], ys[t])
        y_hat[t] = kf_forecast(state, xs[t])
        pred_var[t] = predictive_variance(state, xs[t], s2)
        state = kf_filter_step(state, obs, s2)
        state = kf_predict_step(state, q if const_q else q[t])
    return PredictionTrace.from_gaussian(ys, y_hat, pred_var)
