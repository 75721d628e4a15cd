"""Variance-based sensitivity of the dissimilarity surface.

First-order indices use the Saltelli (2010) estimator, total-order indices the
Jansen estimator, both from the radial A / B / A_B^(i) design.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Orthotope
from .sampling import unit_lhs

OK = "ok"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class SaltelliDesign:
    A: np.ndarray
    B: np.ndarray
    AB: np.ndarray   # shape (k, n, k): AB[i] is A with column i taken from B

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[1]

    def stacked(self) -> np.ndarray:
        """All n*(k+2) rows: A, B, then each A_B^(i) block."""
        return np.vstack([self.A, self.B, self.AB.reshape(-1, self.k)])


@dataclass(frozen=True)
class SensitivityReport:
    s_first: np.ndarray
    s_total: np.ndarray
    sample_size: int
    box: Orthotope | None
    eval_count: int
    status: str = OK
    variance: float = float("nan")

    @property
    def sum_first(self) -> float:
        return float(np.sum(self.s_first))

    @property
    def sum_abs_first(self) -> float:
        return float(np.sum(np.abs(self.s_first)))

    @property
    def sum_total(self) -> float:
        return float(np.sum(self.s_total))


@dataclass
class ConvergenceSeries:
    sizes: list[int] = field(default_factory=list)
    reports: list[SensitivityReport] = field(default_factory=list)

    @property
    def sum_first(self) -> np.ndarray:
        return np.array([r.sum_first for r in self.reports])

    @property
    def sum_abs_first(self) -> np.ndarray:
        return np.array([r.sum_abs_first for r in self.reports])

    @property
    def sum_total(self) -> np.ndarray:
        return np.array([r.sum_total for r in self.reports])

    @property
    def total_indices(self) -> np.ndarray:
        """(len(sizes), k) total-order trajectories."""
        return np.array([r.s_total for r in self.reports])

    def coincidence(self) -> np.ndarray:
        """|sum S - sum |S|| / sum |S| per size (0 means no negative first-order estimate)."""
        sa = self.sum_abs_first
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.abs(self.sum_first - sa) / sa


def saltelli_design(box: Orthotope, n: int, seed, independent: bool = False) -> SaltelliDesign:
    """A and B from one 2k-column Latin hypercube (or two independent ones)."""
    if n < 16:
        raise ValueError("Saltelli designs need n >= 16")
    rng = np.random.default_rng(seed)
    k = box.k
    if independent:
        U = np.hstack([unit_lhs(n, k, rng), unit_lhs(n, k, rng)])
    else:
        U = unit_lhs(n, 2 * k, rng)
    A = box.lower + U[:, :k] * box.widths
    B = box.lower + U[:, k:] * box.widths
    AB = np.repeat(A[None, :, :], k, axis=0)
    for i in range(k):
        AB[i, :, i] = B[:, i]
    return SaltelliDesign(A, B, AB)


def sobol_indices(f_A, f_B, f_AB, box: Orthotope | None = None) -> SensitivityReport:
    """First- and total-order indices from outputs on A, B and each A_B^(i).

    ``f_AB`` has shape (k, n). A constant output gives a ``degenerate`` report
    with NaN indices instead of raising.
    """
    f_A = np.asarray(f_A, dtype=float)
    f_B = np.asarray(f_B, dtype=float)
    f_AB = np.atleast_2d(np.asarray(f_AB, dtype=float))
    k, n = f_AB.shape
    if not (np.all(np.isfinite(f_A)) and np.all(np.isfinite(f_B)) and np.all(np.isfinite(f_AB))):
        raise ValueError("sensitivity outputs must be finite")
    evals = n * (k + 2)
    pooled = np.concatenate([f_A, f_B])
    V = np.var(pooled, ddof=1)
    # rounding in the mean leaves ~eps^2 variance on a constant output
    if not V > (16 * np.finfo(float).eps * np.max(np.abs(pooled))) ** 2:
        nan = np.full(k, np.nan)
        return SensitivityReport(nan, nan.copy(), n, box, evals, DEGENERATE, float(V))
    s_first = np.mean(f_B[None, :] * (f_AB - f_A[None, :]), axis=1) / V
    s_total = 0.5 * np.mean((f_A[None, :] - f_AB) ** 2, axis=1) / V
    return SensitivityReport(s_first, s_total, n, box, evals, OK, float(V))


def analyse(func: Callable[[np.ndarray], np.ndarray], box: Orthotope, n: int,
            seed) -> SensitivityReport:
    """Evaluate ``func`` (rows -> scalar outputs) on a Saltelli design and return indices."""
    design = saltelli_design(box, n, seed)
    y = np.asarray(func(design.stacked()), dtype=float)
    f_A, f_B = y[:n], y[n:2 * n]
    f_AB = y[2 * n:].reshape(design.k, n)
    return sobol_indices(f_A, f_B, f_AB, box)


def convergence_analysis(func: Callable[[np.ndarray], np.ndarray], box: Orthotope,
                         sizes, seed) -> ConvergenceSeries:
    """One analysis per sample size; each size gets its own sub-seed."""
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sample sizes must be strictly increasing")
    series = ConvergenceSeries()
    for j, size in enumerate(sizes):
        sub = np.random.SeedSequence([int(seed), j]) if isinstance(seed, (int, np.integer)) else seed
        series.sizes.append(size)
        series.reports.append(analyse(func, box, size, sub))
    return series
