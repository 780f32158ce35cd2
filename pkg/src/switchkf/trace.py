"""Per-step outputs of a forecasting run.

All arrays are time-major: axis 0 indexes the step, any further leading axes
index independent replications.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PredictionTrace:
    y: np.ndarray
    y_hat: np.ndarray
    sq_loss: np.ndarray
    nll_loss: np.ndarray
    pred_var: np.ndarray | None = None
    weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_gaussian(cls, y, y_hat, pred_var, **kw):
        from .statespace import gaussian_nll

        return cls(
            y=y,
            y_hat=y_hat,
            sq_loss=(y - y_hat) ** 2,
            nll_loss=gaussian_nll(y, y_hat, pred_var),
            pred_var=pred_var,
            **kw,
        )

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def mse(self, warmup: int = 0) -> np.ndarray:
        """Mean squared forecast error, skipping the first ``warmup`` steps."""
        return self.sq_loss[warmup:].mean(axis=0)

    def replication(self, b: int) -> "PredictionTrace":
        """Slice one replication out of a batched trace."""
        kw = {}
        for name in self._array_fields():
            arr = getattr(self, name)
            kw[name] = None if arr is None else arr[:, b]
        return type(self)(meta=dict(self.meta), **kw)

    def _array_fields(self):
        return [n for n in self.__dataclass_fields__ if n != "meta"]


@dataclass
class KfmhTrace(PredictionTrace):
    """Trace of a variance-aggregation run.

    ``weights[t]`` is the distribution in force when forecasting step t,
    ``sigma[t]`` the observation-noise std used at step t and ``qhat_diag[t]``
    the diagonal of the mixed covariance ``sum_k weights[t, k] Q^(k)``.
    """

    sigma: np.ndarray | None = None
    qhat_diag: np.ndarray | None = None
    expert_losses: np.ndarray | None = None
    expected_loss: np.ndarray | None = None
