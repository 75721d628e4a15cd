"""Uncertainty-based interval shrinking: the confidence sub-contour box estimator.

Each outer iteration samples the current box with a Latin hypercube, keeps the
samples with the lowest dissimilarity, and per factor drops histogram bins that
the kept samples have deserted. The loop stops once a fraction ``delta`` of a
fresh sample falls inside the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Interval, Orthotope, contains
from .loss import Explorer
from .sampling import monte_carlo

MIN_KEPT = 20


@dataclass(frozen=True)
class ShrinkConfig:
    lam: float = 1.3
    n: int = 1000
    imax: int = 500
    eta: float = 0.5
    xi: float = 0.65
    delta: float = 0.95
    seed: int = 0
    # stall = no bin dropped for any factor; False restores the literal box-equality test
    require_cut: bool = True

    def __post_init__(self):
        if self.n < 20:
            raise ValueError("sample size per iteration must be at least 20")
        if self.imax < 1:
            raise ValueError("imax must be at least 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        bin_count_candidates(self.n)


@dataclass
class ShrinkTrace:
    records: list[dict] = field(default_factory=list)
    eval_count: int = 0
    reason: str = ""

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def bin_count_candidates(n: int) -> list[int]:
    """Divisors r of ``n`` with 2 <= r <= n/10, ascending."""
    out = [r for r in range(2, n // 10 + 1) if n % r == 0]
    if not out:
        raise ValueError(f"sample size {n} has no divisor between 2 and n/10")
    return out


def csb_histogram(samples, n_bins: int, xi: float, current: Interval) -> Interval:
    return _histogram_cut(samples, n_bins, xi, current)[0]


def _histogram_cut(samples, n_bins: int, xi: float, current: Interval):
    """Cut bins holding fewer than ``xi`` times the fullest bin's count.

    Bins partition ``current`` into equal widths (left-closed, last bin closed).
    The new interval spans the smallest and largest sample in a surviving bin.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("no samples to build a histogram from")
    if n_bins < 2:
        raise ValueError("at least two bins are required")
    width = current.upper - current.lower
    if width == 0:
        return current, 0
    idx = np.floor((samples - current.lower) / width * n_bins).astype(np.int64)
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    keep = counts >= xi * counts.max()
    kept = samples[keep[idx]]
    return Interval(kept.min(), kept.max()), int(n_bins - keep.sum())


def protect_criteria(lower: float, upper: float, x_hat_i: float) -> tuple[float, float]:
    """Slide an interval that lost the nominal value back over it."""
    if lower <= x_hat_i <= upper:
        raise ValueError("nominal value already inside the interval; nothing to protect")
    if lower > x_hat_i:
        shift = 0.1 * (x_hat_i + upper) / 2
        return x_hat_i - shift, upper - shift
    shift = 0.1 * (x_hat_i + lower) / 2
    return lower + shift, x_hat_i + shift


def _protect(lower: float, upper: float, x_hat_i: float, max_halvings: int = 30):
    """protect_criteria with a guard: halve the shift until the result is valid."""
    lo, hi = protect_criteria(lower, upper, x_hat_i)
    if lo <= x_hat_i <= hi:
        return lo, hi, 0
    for retry in range(1, max_halvings + 1):
        if lower > x_hat_i:
            shift = 0.1 * (x_hat_i + upper) / 2 / 2 ** retry
            lo, hi = x_hat_i - shift, upper - shift
        else:
            shift = 0.1 * (x_hat_i + lower) / 2 / 2 ** retry
            lo, hi = lower + shift, x_hat_i + shift
        if lo <= x_hat_i <= hi:
            return lo, hi, retry
    return min(lower, x_hat_i), max(upper, x_hat_i), -1


def change_parameters(psi: int, tau: int, n_bins_list, n: int) -> tuple[int, int]:
    """Next (tau, psi) after a stalled cut: finer bins first, then fewer kept samples."""
    if tau + 1 <= len(n_bins_list):
        return tau + 1, psi
    new_psi = _round_half_up(n * (psi / n) ** 1.1)
    return 1, min(psi, max(MIN_KEPT, new_psi))


def csb_estimate(explorer: Explorer, promissory: Orthotope,
                 cfg: ShrinkConfig | None = None) -> tuple[Orthotope, ShrinkTrace]:
    """Shrink ``promissory`` until ``cfg.delta`` of the samples lie inside the contour."""
    cfg = cfg or ShrinkConfig()
    x_hat = explorer.x_hat
    if not contains(promissory, x_hat):
        raise ValueError("nominal point lies outside the promissory box")
    thr = explorer.threshold(cfg.lam).threshold_value
    eta_n = _round_half_up(cfg.eta * cfg.n)
    n_bins = bin_count_candidates(cfg.n)
    names = promissory.factor_names
    theta = promissory
    trace = ShrinkTrace()

    for c in range(cfg.imax):
        seed = cfg.seed + c
        mc = monte_carlo(explorer, theta, cfg.n, seed)
        trace.eval_count += mc.eval_count
        eps = int(np.count_nonzero(mc.outputs <= thr))
        record = {
            "iteration": c + 1,
            "seed": seed,
            "lower": theta.lower.tolist(),
            "upper": theta.upper.tolist(),
            "fraction_below": eps / cfg.n,
        }
        if eps / cfg.n >= cfg.delta:
            trace.records.append(record)
            trace.reason = "converged"
            return theta, trace

        psi = max(eps, eta_n)
        tau = 1
        reparameterizations = 0
        tried_at_floor = 0
        while True:
            kept = mc.matrix.rows[:psi]
            ivs, protected, discarded = [], [], 0
            for i in range(theta.k):
                cut, dropped = _histogram_cut(kept[:, i], n_bins[tau - 1], cfg.xi, theta[i])
                discarded += dropped
                lo, hi = cut.lower, cut.upper
                if lo > x_hat[i] or hi < x_hat[i]:
                    lo, hi, retries = _protect(lo, hi, float(x_hat[i]))
                    protected.append({"factor": names[i], "retries": retries})
                ivs.append(Interval(lo, hi))
            phi = Orthotope(tuple(ivs), names)
            if phi != theta and (discarded > 0 or not cfg.require_cut):
                break
            if psi == MIN_KEPT:
                tried_at_floor += 1
                if tried_at_floor > len(n_bins):
                    break
            tau, psi = change_parameters(psi, tau, n_bins, cfg.n)
            reparameterizations += 1

        record.update({
            "epsilon": eps,
            "psi": psi,
            "n_bins": n_bins[tau - 1],
            "reparameterizations": reparameterizations,
            "protected": protected,
            "changed": [names[i] for i in range(theta.k) if phi[i] != theta[i]],
        })
        trace.records.append(record)
        theta = phi

    trace.reason = "imax"
    return theta, trace
