"""Synthetic episodes: switching (WS) and sinusoidal-variance (MS) models.

Regime ids are 0-based in memory; CSV files store them 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError

DESIGN_KINDS = ("gaussian", "uniform", "noniid")
MODEL_KINDS = ("ws", "ms")

#: Innovation variance of the reflected random-walk design.
NONIID_STEP_VAR = 1e-3


def delta(a, b, c) -> np.ndarray:
    """3x3 diagonal matrix with entries ``a, b, c``."""
    return np.diag([float(a), float(b), float(c)])


Q1 = delta(1e-4, 1e-1, 1e-2)
Q2 = delta(1e-1, 1e-4, 1e-2)


@dataclass
class EpisodeData:
    """A sequence of designs and targets, with ground truth when simulated.

    Arrays are time-major. A batch of episodes stacked with :meth:`stack`
    has ``xs`` of shape ``(T, B, d)``.
    """

    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray | None = None
    regimes: np.ndarray | None = None
    sigma_true: np.ndarray | None = None
    mix_coef: np.ndarray | None = None
    seed: int | None = None
    scenario: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        if self.xs.ndim < 2 or self.xs.shape[:-1] != self.ys.shape:
            raise DataError(f"xs {self.xs.shape} and ys {self.ys.shape} do not align")
        for name in ("thetas", "regimes", "sigma_true", "mix_coef"):
            arr = getattr(self, name)
            if arr is not None and np.asarray(arr).shape[:1] != (self.T,):
                raise DataError(f"{name} has length {np.asarray(arr).shape[:1]}, expected {self.T}")

    @property
    def T(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.xs.shape[1:-1]

    @property
    def has_truth(self) -> bool:
        return self.sigma_true is not None and (
            self.regimes is not None or self.mix_coef is not None)

    def sigma2_true(self) -> np.ndarray:
        if self.sigma_true is None:
            raise DataError("episode has no observation-noise truth")
        return np.asarray(self.sigma_true) ** 2

    def true_q(self, qs) -> np.ndarray:
        """Per-step state covariance driving ``theta_{t+1} - theta_t``.

        Args:
            qs: the generating bank, shape ``(K, d, d)``.
        """
        qs = np.asarray(qs, dtype=float)
        if self.regimes is not None:
            return qs[np.asarray(self.regimes)]
        if self.mix_coef is not None:
            c = np.asarray(self.mix_coef)[..., None, None]
            return c * qs[0] + (1.0 - c) * qs[1]
        raise DataError("episode has no state-noise truth")

    @classmethod
    def stack(cls, episodes) -> "EpisodeData":
        """Stack single episodes along a new batch axis 1."""
        episodes = list(episodes)
        if not episodes:
            raise DataError("nothing to stack")

        def cat(name):
            vals = [getattr(e, name) for e in episodes]
            if any(v is None for v in vals):
                return None
            return np.stack(vals, axis=1)

        return cls(
            xs=cat("xs"), ys=cat("ys"), thetas=cat("thetas"), regimes=cat("regimes"),
            sigma_true=cat("sigma_true"), mix_coef=cat("mix_coef"),
            scenario=episodes[0].scenario,
            meta={"seeds": [e.seed for e in episodes]},
        )

    def replication(self, b: int) -> "EpisodeData":
        """Slice replication ``b`` out of a batch built by :meth:`stack`."""
        if not self.batch_shape:
            raise DataError("episode is not batched")

        def pick(a):
            return None if a is None else np.asarray(a)[:, b]

        seeds = self.meta.get("seeds")
        return EpisodeData(
            xs=pick(self.xs), ys=pick(self.ys), thetas=pick(self.thetas),
            regimes=pick(self.regimes), sigma_true=pick(self.sigma_true),
            mix_coef=pick(self.mix_coef), seed=None if seeds is None else seeds[b],
            scenario=self.scenario,
        )

    def without_truth(self) -> "EpisodeData":
        return replace(self, thetas=None, regimes=None, sigma_true=None, mix_coef=None)


@dataclass(frozen=True)
class ScenarioSpec:
    design: str = "gaussian"
    model: str = "ws"
    T: int = 1000
    d: int = 3
    alpha: float = 1e-2
    q1: np.ndarray = field(default_factory=lambda: Q1.copy())
    q2: np.ndarray = field(default_factory=lambda: Q2.copy())
    sigma: float = 1.0
    sigma_pair: tuple = (1.0, 2.0)

    def __post_init__(self):
        if self.design not in DESIGN_KINDS:
            raise ValueError(f"unknown design kind {self.design!r}")
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model!r}")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if np.shape(self.q1) != (self.d, self.d) or np.shape(self.q2) != (self.d, self.d):
            raise ValueError("bank matrices must be d x d")

    @property
    def bank(self) -> np.ndarray:
        return np.stack([self.q1, self.q2])


SCENARIOS = {
    "ws-gauss": ("gaussian", "ws"),
    "ws-unif": ("uniform", "ws"),
    "ws-noniid": ("noniid", "ws"),
    "ms-gauss": ("gaussian", "ms"),
    "ms-unif": ("uniform", "ms"),
    "ms-noniid": ("noniid", "ms"),
}


def scenario(name: str, **overrides) -> ScenarioSpec:
    try:
        design, model = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return ScenarioSpec(design=design, model=model, **overrides)


def reflect_unit(a):
    """Fold values outside [0, 1] back with ``ceil(a) - a``."""
    a = np.asarray(a, dtype=float)
    inside = (a >= 0.0) & (a <= 1.0)
    return np.where(inside, a, np.ceil(a) - a)


def gen_design(kind: str, T: int, rng: np.random.Generator, d: int = 3) -> np.ndarray:
    if kind == "gaussian":
        return rng.standard_normal((T, d))
    if kind == "uniform":
        return rng.random((T, d))
    if kind == "noniid":
        xs = np.empty((T, d))
        if T == 0:
            return xs
        xs[0] = rng.random(d)
        steps = rng.normal(0.0, np.sqrt(NONIID_STEP_VAR), size=(T, d))
        for t in range(1, T):
            xs[t] = reflect_unit(xs[t - 1] + steps[t])
        return xs
    raise ValueError(f"unknown design kind {kind!r}")


def _psd_sqrt(q):
    """Symmetric square root of (a stack of) PSD matrices."""
    w, v = np.linalg.eigh(q)
    return (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def _simulate(xs, q_steps, sigmas, rng):
    """Random-walk states and noisy targets; ``q_steps[t]`` drives theta_{t+1}."""
    T, d = xs.shape
    noise = np.einsum("tij,tj->ti", _psd_sqrt(q_steps), rng.standard_normal((T, d)))
    thetas = np.zeros((T, d))
    if T > 1:
        thetas[1:] = np.cumsum(noise[:-1], axis=0)
    ys = np.einsum("ti,ti->t", thetas, xs) + sigmas * rng.standard_normal(T)
    return thetas, ys


def gen_regimes(T: int, K: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Markov chain with ``M_alpha`` transitions and a uniform start."""
    z = np.empty(T, dtype=int)
    if T == 0:
        return z
    z[0] = rng.integers(K)
    stay = rng.random(T) >= alpha
    jumps = rng.integers(K - 1, size=T) if K > 1 else np.zeros(T, dtype=int)
    for t in range(1, T):
        if stay[t]:
            z[t] = z[t - 1]
        else:
            z[t] = jumps[t] + (jumps[t] >= z[t - 1])
    return z


def gen_ws(spec: ScenarioSpec, rng: np.random.Generator, seed=None, name=None) -> EpisodeData:
    if spec.model != "ws":
        raise ValueError("gen_ws needs a WS scenario")
    xs = gen_design(spec.design, spec.T, rng, spec.d)
    z = gen_regimes(spec.T, 2, spec.alpha, rng)
    sigmas = np.full(spec.T, float(spec.sigma))
    thetas, ys = _simulate(xs, spec.bank[z], sigmas, rng)
    return EpisodeData(xs, ys, thetas=thetas, regimes=z, sigma_true=sigmas,
                       seed=seed, scenario=name)


def ms_mix_coef(t, T):
    """Weight of ``Q^(1)``: ``cos^2(3 pi t / T)``."""
    return np.cos(3.0 * np.pi * np.asarray(t, dtype=float) / T) ** 2


def ms_q(t, T, q1=Q1, q2=Q2):
    c = np.asarray(ms_mix_coef(t, T))[..., None, None]
    return c * np.asarray(q1) + (1.0 - c) * np.asarray(q2)


def ms_sigma(t, T, sigma1=1.0, sigma2=2.0):
    """Observation-noise standard deviation of the sinusoidal model."""
    c = np.cos(5.0 * np.pi * np.asarray(t, dtype=float) / T) ** 2
    return sigma1 * c + sigma2 * (1.0 - c)


def gen_ms(spec: ScenarioSpec, rng: np.random.Generator, seed=None, name=None) -> EpisodeData:
    if spec.model != "ms":
        raise ValueError("gen_ms needs an MS scenario")
    xs = gen_design(spec.design, spec.T, rng, spec.d)
    t = np.arange(1, spec.T + 1)
    coef = ms_mix_coef(t, spec.T)
    sigmas = ms_sigma(t, spec.T, *spec.sigma_pair)
    thetas, ys = _simulate(xs, ms_q(t, spec.T, spec.q1, spec.q2), sigmas, rng)
    return EpisodeData(xs, ys, thetas=thetas, sigma_true=sigmas, mix_coef=coef,
                       seed=seed, scenario=name)


def generate(spec: ScenarioSpec | str, seed: int) -> EpisodeData:
    """Generate one episode from a fresh PCG64 stream seeded with ``seed``."""
    name = spec if isinstance(spec, str) else None
    if isinstance(spec, str):
        spec = scenario(spec)
    rng = np.random.default_rng(seed)
    gen = gen_ws if spec.model == "ws" else gen_ms
    return gen(spec, rng, seed=seed, name=name)
