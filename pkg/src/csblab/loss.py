"""Trajectory dissimilarity, the scalar explorer model and the uncertainty threshold."""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .core import TimeGrid, Trajectory, as_factor_vector
from .models import OK, IntegratorConfig, ModelDefinition, integrate, integrate_batch


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 1):
            raise ValueError(f"alpha must be finite and >= 1, got {self.alpha}")


@dataclass(frozen=True)
class ThresholdSpec:
    lam: float
    threshold_value: float


class EvalCounter:
    """Thread-safe tally of model evaluations."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._count += int(n)

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    def reset(self) -> int:
        with self._lock:
            value, self._count = self._count, 0
            return value


EVALS = EvalCounter()


def _residual_power(diff: np.ndarray, alpha: float) -> np.ndarray:
    a = np.abs(diff)
    if alpha == 2.0:
        return a * a
    if alpha == 1.0:
        return a
    return a ** alpha


def loss(y: Trajectory, y_hat: Trajectory, cfg: LossConfig | None = None) -> float:
    """Mean of |y_t - y_hat_t|**alpha over the grid."""
    cfg = cfg or LossConfig()
    if y.grid != y_hat.grid:
        raise ValueError("trajectories are sampled on different grids")
    return float(np.mean(_residual_power(y.values - y_hat.values, cfg.alpha)))


def loss_rows(values: np.ndarray, y_hat: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Row-wise loss of an (N, T) value array against a reference; NaN rows give +inf."""
    out = np.mean(_residual_power(values - y_hat[None, :], cfg.alpha), axis=1)
    out[~np.isfinite(out)] = np.inf
    return out


def threshold(y_hat: Trajectory, lam: float, cfg: LossConfig | None = None) -> ThresholdSpec:
    """Dissimilarity reached by inflating the nominal output ``lam``-fold."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return ThresholdSpec(float(lam), loss(y_hat.scaled(lam), y_hat, cfg))


def lambda_from_config(value: float, unit: str = "multiplier") -> float:
    """Accept the uncertainty level either as a percentage (30) or a multiplier (1.3)."""
    if unit == "percent":
        return 1.0 + float(value) / 100.0
    if unit == "multiplier":
        return float(value)
    raise ValueError(f"unknown lambda unit {unit!r}; use 'percent' or 'multiplier'")


class Explorer:
    """Scalar model: dissimilarity between any factor vector and a fixed nominal.

    The nominal trajectory is integrated once. Integration failures evaluate to
    ``+inf`` so that sorting pushes them to the tail.
    """

    def __init__(self, model: ModelDefinition, x_hat, grid: TimeGrid,
                 loss_cfg: LossConfig | None = None,
                 integrator: IntegratorConfig | None = None,
                 counter: EvalCounter | None = None):
        self.model = model
        self.x_hat = as_factor_vector(x_hat, model.k)
        self.grid = grid
        self.loss_cfg = loss_cfg or LossConfig()
        self.integrator = integrator or IntegratorConfig()
        self.counter = counter if counter is not None else EVALS
        self.nominal = integrate(model, self.x_hat, grid, self.integrator)
        self.counter.add(1)

    def threshold(self, lam: float) -> ThresholdSpec:
        return threshold(self.nominal, lam, self.loss_cfg)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        values, status = integrate_batch(self.model, X, self.grid, self.integrator)
        self.counter.add(X.shape[0])
        out = loss_rows(values, self.nominal.values, self.loss_cfg)
        out[status != OK] = np.inf
        return out

    def one(self, x) -> float:
        return float(self(np.asarray(x, dtype=float)[None, :])[0])


def dissimilarity(model: ModelDefinition, x, x_hat, grid: TimeGrid,
                  cfg: LossConfig | None = None,
                  integrator: IntegratorConfig | None = None) -> float:
    """Loss between the trajectories of ``x`` and ``x_hat``; counts one evaluation."""
    x = as_factor_vector(x, model.k)
    x_hat = as_factor_vector(x_hat, model.k)
    values, status = integrate_batch(model, np.vstack([x, x_hat]), grid, integrator)
    EVALS.add(1)
    if status[1] != OK:
        raise ValueError("nominal factor vector cannot be integrated")
    if status[0] != OK:
        return float("inf")
    return float(loss_rows(values[:1], values[1], cfg or LossConfig())[0])
