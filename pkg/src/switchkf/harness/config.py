"""Experiment configuration: a flat ``key = value`` file.

A section header is optional; keys may sit at the top of the file. Every
key has a default equal to the reference operating point.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace

import numpy as np

from ..errors import ConfigError
from ..kfmh import AdamState
from ..statespace import CovarianceBank, initial_state
from ..synthdata import SCENARIOS

TABLE1_METHODS = ("kf-adaptive", "kf-q1", "kf-q2", "kf-qmean", "kf-agg", "kfmh")
ALL_METHODS = TABLE1_METHODS + ("kfmh-randomized", "vb")


@dataclass(frozen=True)
class ExperimentConfig:
    eta: float = 1.0
    alpha: float = 0.01
    tau: int = 5
    sigma0: float = 0.8
    adam_alpha1: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    T: int = 1000
    n_iter: int = 1000
    base_seed: int = 0
    # diagonal entries of the two candidate covariances
    q1: tuple = (1e-4, 1e-1, 1e-2)
    q2: tuple = (1e-1, 1e-4, 1e-2)
    # constant observation variances when the data carry no truth
    sigma2_1: float = 1.0
    sigma2_2: float = 1.0
    init_var: float = 1.0
    agg_loss: str = "quadratic"
    # -1 means max(tau + 1, 2)
    warmup: int = -1
    vb_n_iter: int = 5
    # "uniform" or "agg" (warm start from the kf-agg weights)
    vb_init: str = "uniform"
    grid_eta: tuple = (0.1, 0.3, 1.0, 3.0)
    grid_alpha: tuple = (1e-3, 1e-2, 1e-1)
    grid_criterion: str = "nll"
    scenarios: tuple = tuple(SCENARIOS)
    methods: tuple = TABLE1_METHODS
    chunk_size: int = 250
    workers: int = 1

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.tau < 1:
            raise ConfigError("tau must be at least 1")
        if self.sigma0 <= 0 or self.sigma2_1 <= 0 or self.sigma2_2 <= 0 or self.init_var <= 0:
            raise ConfigError("variances must be positive")
        if self.T < 1 or self.n_iter < 1 or self.chunk_size < 1 or self.workers < 1:
            raise ConfigError("T, n_iter, chunk_size and workers must be positive")
        if self.agg_loss not in ("quadratic", "nll"):
            raise ConfigError(f"agg_loss must be 'quadratic' or 'nll', got {self.agg_loss!r}")
        if self.vb_init not in ("uniform", "agg"):
            raise ConfigError(f"vb_init must be 'uniform' or 'agg', got {self.vb_init!r}")
        if self.grid_criterion not in ("nll", "sq"):
            raise ConfigError("grid_criterion must be 'nll' or 'sq'")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for s in self.scenarios:
            if s not in SCENARIOS:
                raise ConfigError(f"unknown scenario {s!r}")
        try:
            self.bank()
        except ValueError as exc:
            raise ConfigError(f"bad covariance bank: {exc}") from None

    @property
    def warmup_steps(self) -> int:
        return max(self.tau + 1, 2) if self.warmup < 0 else self.warmup

    def bank(self) -> CovarianceBank:
        return CovarianceBank(np.stack([_matrix(self.q1), _matrix(self.q2)]),
                              sigma2s=np.array([self.sigma2_1, self.sigma2_2]))

    @property
    def d(self) -> int:
        return self.bank().dim

    def adam(self) -> AdamState:
        return AdamState(alpha1=self.adam_alpha1, beta1=self.adam_beta1,
                         beta2=self.adam_beta2, eps=self.adam_eps)

    def init_state(self):
        return initial_state(self.d, cov=self.init_var * np.eye(self.d))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _matrix(values) -> np.ndarray:
    return np.diag(np.asarray(values, dtype=float).ravel())


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(name, raw):
    default = _FIELDS[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, str):
            return raw
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(s) for s in items)
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from None
    raise ConfigError(f"unsupported key {name}")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[experiment]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            name = key.strip()
            if name not in _FIELDS:
                raise ConfigError(f"unknown config key {name!r}")
            values[name] = _parse_value(name, raw)
    try:
        return ExperimentConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a config as the flat text format understood by :func:`parse_config`."""
    lines = []
    for name in _FIELDS:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = ", ".join(str(v) for v in val)
        lines.append(f"{name} = {val}")
    return "\n".join(lines) + "\n"
