"""Latin-hypercube designs, Monte-Carlo runs on the dissimilarity surface, uncertainty summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Orthotope
from .loss import Explorer, ThresholdSpec
from .models import OK, integrate_batch


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class McResult:
    outputs: np.ndarray   # ascending
    matrix: DesignMatrix  # rows aligned with outputs
    eval_count: int


@dataclass(frozen=True)
class UaSummary:
    fraction_below: float
    exceeding: np.ndarray             # indices into the sorted Monte-Carlo result
    times: np.ndarray | None = None
    envelope: dict | None = None      # name -> per-time array (min, q05, q50, q95, max)
    nominal: np.ndarray | None = None


def unit_lhs(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Latin-hypercube plan on the unit cube: (P - R) / n with P column permutations of 1..n."""
    if n < 1:
        raise ValueError("sample size must be at least 1")
    P = np.empty((n, k))
    for j in range(k):
        P[:, j] = rng.permutation(n) + 1
    R = rng.random((n, k))
    while np.any(R == 0.0):
        zero = R == 0.0
        R[zero] = rng.random(int(zero.sum()))
    return (P - R) / n


def latin_hypercube(box: Orthotope, n: int, seed) -> DesignMatrix:
    """Uniform Latin-hypercube design over ``box`` (inverse-CDF map of the unit plan)."""
    rng = np.random.default_rng(seed)
    S = unit_lhs(n, box.k, rng)
    rows = box.lower + S * box.widths
    return DesignMatrix(rows, seed if isinstance(seed, (int, np.integer)) else None)


def monte_carlo(explorer: Explorer, box: Orthotope, n: int, seed) -> McResult:
    """Evaluate an LHS design on the explorer and sort rows by ascending dissimilarity."""
    if box.k != explorer.model.k:
        raise ValueError(f"box has {box.k} factors, model {explorer.model.name} has {explorer.model.k}")
    design = latin_hypercube(box, n, seed)
    y = explorer(design.rows)
    order = np.argsort(y, kind="stable")
    return McResult(y[order], DesignMatrix(design.rows[order], design.seed), n)


def fraction_below(outputs, thr: ThresholdSpec | float) -> float:
    value = thr.threshold_value if isinstance(thr, ThresholdSpec) else float(thr)
    outputs = np.asarray(outputs)
    return float(np.count_nonzero(outputs <= value)) / outputs.size


def uncertainty_analysis(mc: McResult, thr: ThresholdSpec | float,
                         explorer: Explorer | None = None,
                         quantiles=(0.05, 0.5, 0.95)) -> UaSummary:
    """Share of samples inside the contour plus, given an explorer, the trajectory envelope.

    The envelope recomputes the observable for every design row (counted as
    model evaluations) and is split into within-threshold and exceeding sets.
    """
    value = thr.threshold_value if isinstance(thr, ThresholdSpec) else float(thr)
    exceeding = np.flatnonzero(mc.outputs > value)
    frac = fraction_below(mc.outputs, value)
    if explorer is None:
        return UaSummary(frac, exceeding)

    values, status = integrate_batch(explorer.model, mc.matrix.rows, explorer.grid,
                                     explorer.integrator)
    explorer.counter.add(mc.matrix.n)
    finite = status == OK
    envelope = {}
    for label, mask in (("all", finite),
                        ("below", finite & (mc.outputs <= value)),
                        ("above", finite & (mc.outputs > value))):
        if not mask.any():
            continue
        v = values[mask]
        envelope[f"{label}_min"] = v.min(axis=0)
        for q in quantiles:
            envelope[f"{label}_q{int(round(q * 100)):02d}"] = np.quantile(v, q, axis=0)
        envelope[f"{label}_max"] = v.max(axis=0)
    return UaSummary(frac, exceeding, explorer.grid.points.copy(), envelope,
                     explorer.nominal.values.copy())
