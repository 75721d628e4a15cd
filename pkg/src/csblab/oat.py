"""One-at-a-time construction of the promissory search box.

Starting from the nominal point, each factor is pushed up and down a geometric
ladder (all other factors held at nominal) until its dissimilarity leaves the
uncertainty band; the crossing is then refined by bisection between the last
two rungs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import Interval, Orthotope
from .loss import Explorer, ThresholdSpec


@dataclass(frozen=True)
class OatConfig:
    lam: float = 1.3
    up: float = 1.5
    down: float = 0.7
    imax: int = 100
    band: float = 1.1

    def __post_init__(self):
        if not 1 < self.up <= 2:
            raise ValueError("up must lie in (1, 2]")
        if not 0 < self.down < 1:
            raise ValueError("down must lie in (0, 1)")
        if self.imax < 1:
            raise ValueError("imax must be at least 1")
        if self.band <= 1:
            raise ValueError("band must exceed 1")


@dataclass
class BoundSearch:
    factor: str
    direction: str      # "up" or "down"
    value: float
    phi: float
    resolved: bool
    rungs: int
    bisection_steps: int
    evaluations: int


@dataclass
class OatResult:
    box: Orthotope
    threshold: ThresholdSpec
    searches: list[BoundSearch]

    @property
    def unresolved(self) -> list[BoundSearch]:
        return [s for s in self.searches if not s.resolved]

    def diagnostics(self) -> dict:
        out = {"threshold": self.threshold.threshold_value, "lambda": self.threshold.lam,
               "factors": {}}
        for s in self.searches:
            d = asdict(s)
            name, direction = d.pop("factor"), d.pop("direction")
            out["factors"].setdefault(name, {})[direction] = d
        return out


class InvalidBracket(ValueError):
    pass


def _probe(explorer: Explorer, index: int, value: float) -> float:
    x = explorer.x_hat.copy()
    x[index] = value
    return explorer.one(x)


def bisection(explorer: Explorer, index: int, inner: float, outer: float,
              thr: ThresholdSpec, band: float = 1.1, imax: int = 100,
              phi_inner: float | None = None, phi_outer: float | None = None):
    """Refine a bound between a rung inside the contour and one beyond the band.

    Returns ``(value, phi, resolved, steps)``. A resolved value satisfies
    ``thr < phi <= band * thr``; otherwise the last midpoint after ``imax``
    halvings is returned with ``resolved=False``.
    """
    t = thr.threshold_value
    if phi_inner is None:
        phi_inner = _probe(explorer, index, inner)
    if phi_outer is None:
        phi_outer = _probe(explorer, index, outer)
    if not (phi_inner <= t and phi_outer > band * t):
        raise InvalidBracket(f"no crossing between {inner} (phi={phi_inner}) "
                             f"and {outer} (phi={phi_outer}) for threshold {t}")
    a, b = inner, outer
    mid, phi = 0.5 * (a + b), np.inf
    for step in range(1, imax + 1):
        mid = 0.5 * (a + b)
        phi = _probe(explorer, index, mid)
        if t < phi <= band * t:
            return mid, phi, True, step
        if phi <= t:
            a = mid
        else:
            b = mid
    return mid, phi, False, imax


def _ladder(x0: float, direction: str, cfg: OatConfig, width: float):
    gamma = cfg.up if direction == "up" else cfg.down
    if x0 != 0.0:
        return lambda m: gamma ** m * x0
    # a zero nominal cannot be scaled: step additively through the search width
    step = (cfg.up - 1.0) * width if direction == "up" else -(1.0 - cfg.down) * width
    return lambda m: x0 + m * step


def search_bound(explorer: Explorer, index: int, direction: str, thr: ThresholdSpec,
                 cfg: OatConfig, width: float = 1.0) -> BoundSearch:
    t = thr.threshold_value
    x0 = float(explorer.x_hat[index])
    rung = _ladder(x0, direction, cfg, width)
    name = explorer.model.factor_names[index]
    evals = 0
    prev, phi_prev = x0, 0.0
    value = phi = None
    for m in range(1, cfg.imax + 1):
        value = rung(m)
        phi = _probe(explorer, index, value)
        evals += 1
        if phi <= t:
            prev, phi_prev = value, phi
            continue
        if phi > cfg.band * t:
            bval, bphi, ok, steps = bisection(explorer, index, prev, value, thr, cfg.band,
                                              cfg.imax, phi_prev, phi)
            return BoundSearch(name, direction, bval, bphi, ok, m, steps, evals + steps)
        return BoundSearch(name, direction, value, phi, True, m, 0, evals)
    return BoundSearch(name, direction, value, phi, False, cfg.imax, 0, evals)


def promissory_box(explorer: Explorer, cfg: OatConfig | None = None,
                   search_box: Orthotope | None = None) -> OatResult:
    """Build the promissory box around ``explorer.x_hat``.

    ``search_box`` only supplies widths for the additive ladder used when a
    nominal factor is exactly zero; the result is not clipped to it.
    """
    cfg = cfg or OatConfig()
    thr = explorer.threshold(cfg.lam)
    searches, lower, upper = [], [], []
    for i, x0 in enumerate(explorer.x_hat):
        width = float(search_box.widths[i]) if search_box is not None else 1.0
        up = search_bound(explorer, i, "up", thr, cfg, width)
        down = search_bound(explorer, i, "down", thr, cfg, width)
        searches += [up, down]
        lo, hi = sorted((up.value, down.value))
        lower.append(min(lo, x0))
        upper.append(max(hi, x0))
    box = Orthotope(tuple(Interval(lo, hi) for lo, hi in zip(lower, upper)),
                    explorer.model.factor_names)
    return OatResult(box, thr, searches)
