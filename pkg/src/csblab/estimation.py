"""Multi-start factor estimation, loss filtering and median confidence intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import Interval, Orthotope, TimeGrid, Trajectory
from .loss import EVALS, EvalCounter, LossConfig, loss_rows
from .models import OK, IntegratorConfig, ModelDefinition, integrate_batch

MAX_EVALS_PER_FIT = 1000
Z_95 = 1.96


@dataclass(frozen=True)
class FitResult:
    x_star: np.ndarray
    final_loss: float
    start_point: np.ndarray
    converged: bool
    eval_count: int


@dataclass(frozen=True)
class MedianCi:
    intervals: tuple[Interval, ...]
    n_filtered: int
    sigma: np.ndarray


class _BudgetExhausted(Exception):
    pass


class DataObjective:
    """Loss of the model observable against fixed data, on the unit-scaled box."""

    def __init__(self, model: ModelDefinition, data: Trajectory, box: Orthotope,
                 loss_cfg: LossConfig | None = None,
                 integrator: IntegratorConfig | None = None,
                 counter: EvalCounter | None = None):
        self.model = model
        self.data = data
        self.box = box
        self.loss_cfg = loss_cfg or LossConfig()
        self.integrator = integrator or IntegratorConfig()
        self.counter = counter if counter is not None else EVALS
        self.lower = box.lower
        self.widths = box.widths

    def to_factors(self, u) -> np.ndarray:
        return self.lower + np.clip(u, 0.0, 1.0) * self.widths

    def __call__(self, x) -> float:
        values, status = integrate_batch(self.model, np.asarray(x, dtype=float)[None, :],
                                         self.data.grid, self.integrator)
        self.counter.add(1)
        if status[0] != OK:
            return math.inf
        return float(loss_rows(values, self.data.values, self.loss_cfg)[0])


def _fit_one(obj: DataObjective, u0: np.ndarray, tol: float, budget: int) -> FitResult:
    k = u0.size
    used = 0
    best_u, best_f = u0.copy(), math.inf

    def f(u):
        nonlocal used, best_u, best_f
        if used >= budget:
            raise _BudgetExhausted
        used += 1
        value = obj(obj.to_factors(u))
        if value < best_f:
            best_u, best_f = np.array(u, dtype=float), value
        return value

    converged = False
    start = u0
    try:
        while used < budget:
            before = best_f
            res = minimize(f, start, method="Nelder-Mead", bounds=[(0.0, 1.0)] * k,
                           options={"maxfev": budget - used, "fatol": tol, "xatol": 1e-8,
                                    "adaptive": k > 4})
            if not res.success:
                break
            # simplex collapsed: restart around the best point until no further gain
            if before - best_f <= tol:
                converged = True
                break
            start = best_u
    except _BudgetExhausted:
        pass
    return FitResult(obj.to_factors(best_u), best_f, obj.to_factors(u0), converged, used)


def multi_start_fit(model: ModelDefinition, data: Trajectory, box: Orthotope,
                    n_starts: int, tol: float = 1e-6, seed=0,
                    loss_cfg: LossConfig | None = None,
                    integrator: IntegratorConfig | None = None,
                    max_evals: int = MAX_EVALS_PER_FIT) -> list[FitResult]:
    """Minimize the data loss from ``n_starts`` uniform random starting points in ``box``.

    Each run is a bounded Nelder-Mead search in box-normalized coordinates with
    restarts on simplex collapse, capped at ``max_evals`` model evaluations.
    Results are ordered by start index.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    rng = np.random.default_rng(seed)
    starts = rng.random((n_starts, box.k))
    obj = DataObjective(model, data, box, loss_cfg, integrator)
    return [_fit_one(obj, u0, tol, max_evals) for u0 in starts]


def filter_fits(results, tolerance_fraction: float = 0.10) -> list[FitResult]:
    """Keep fits whose loss is within ``tolerance_fraction`` of the best one."""
    results = list(results)
    if not results:
        raise ValueError("no fit results to filter")
    best = min(r.final_loss for r in results)
    cutoff = (1.0 + tolerance_fraction) * best
    return [r for r in results if r.final_loss <= cutoff]


def median_ci_from_samples(X) -> tuple[np.ndarray, MedianCi]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise ValueError("at least two filtered estimates are needed")
    med = np.median(X, axis=0)
    sigma = X.std(axis=0, ddof=1)
    half = Z_95 * math.sqrt(math.pi / 2) * sigma / math.sqrt(n)
    ivs = tuple(Interval(m - h, m + h) for m, h in zip(med, half))
    return med, MedianCi(ivs, n, sigma)


def median_ci(filtered) -> tuple[np.ndarray, MedianCi]:
    """Per-factor median and its 95% interval from the filtered estimates."""
    return median_ci_from_samples([r.x_star for r in filtered])


def synthetic_data(model: ModelDefinition, x, grid: TimeGrid, noise: float = 0.0,
                   seed=0, integrator: IntegratorConfig | None = None) -> Trajectory:
    """Simulated observations at ``x`` with optional multiplicative log-normal noise."""
    values, status = integrate_batch(model, np.asarray(x, dtype=float)[None, :], grid, integrator)
    if status[0] != OK:
        raise ValueError("cannot simulate synthetic data at the given factors")
    y = values[0]
    if noise > 0:
        y = y * np.random.default_rng(seed).lognormal(0.0, noise, size=y.size)
    return Trajectory(grid, y)
