"""Shared value types: intervals, boxes, factor vectors, time grids, trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when a vector and a box disagree on the number of factors."""


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError(f"interval bounds must be finite, got [{lo}, {hi}]")
        if lo > hi:
            raise ValueError(f"interval lower bound {lo} exceeds upper bound {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def __contains__(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class Orthotope:
    """A k-dimensional box, one closed interval per named factor.

    Column order of every design matrix built from the box follows
    ``factor_names``.
    """

    intervals: tuple[Interval, ...]
    factor_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        intervals = tuple(self.intervals)
        if len(intervals) < 1:
            raise ValueError("an orthotope needs at least one interval")
        names = tuple(self.factor_names) or tuple(f"x{i + 1}" for i in range(len(intervals)))
        if len(names) != len(intervals):
            raise ValueError("one factor name per interval is required")
        if len(set(names)) != len(names):
            raise ValueError(f"factor names must be unique: {names}")
        object.__setattr__(self, "intervals", intervals)
        object.__setattr__(self, "factor_names", names)

    @classmethod
    def from_bounds(cls, lower: Iterable[float], upper: Iterable[float],
                    names: Sequence[str] = ()) -> "Orthotope":
        ivs = tuple(Interval(lo, hi) for lo, hi in zip(lower, upper, strict=True))
        return cls(ivs, tuple(names))

    @property
    def k(self) -> int:
        return len(self.intervals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([iv.lower for iv in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([iv.upper for iv in self.intervals])

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def midpoint(self) -> np.ndarray:
        return np.array([iv.midpoint for iv in self.intervals])

    def replace(self, index: int, interval: Interval) -> "Orthotope":
        ivs = list(self.intervals)
        ivs[index] = interval
        return Orthotope(tuple(ivs), self.factor_names)

    def __len__(self) -> int:
        return self.k

    def __getitem__(self, index: int) -> Interval:
        return self.intervals[index]


def as_factor_vector(values: Iterable[float], k: int | None = None) -> np.ndarray:
    """Coerce ``values`` to a finite 1-D float array, optionally of length ``k``."""
    x = np.array(values, dtype=float).reshape(-1)
    if k is not None and x.size != k:
        raise DimensionError(f"expected {k} factors, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("factor vector contains non-finite values")
    return x


@dataclass(frozen=True)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        if pts.size < 2:
            raise ValueError("a time grid needs at least two points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("time grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, start: float, stop: float, count: int) -> "TimeGrid":
        return cls(np.linspace(start, stop, count))

    def __len__(self) -> int:
        return self.points.size

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != len(self.grid):
            raise ValueError(f"{vals.size} values for a grid of {len(self.grid)} points")
        if not np.all(np.isfinite(vals)):
            raise ValueError("trajectory contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.grid, factor * self.values)


def contains(box: Orthotope, x) -> bool:
    """True iff every coordinate of ``x`` lies in the matching closed interval."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != box.k:
        raise DimensionError(f"box has {box.k} factors, vector has {x.size}")
    return bool(np.all(box.lower <= x) and np.all(x <= box.upper))


def normalize_interval(target: Interval, reference: Interval) -> Interval:
    """Express ``target`` in units of ``reference`` (its lower bound maps to 0, upper to 1)."""
    width = reference.upper - reference.lower
    if not width > 0:
        raise ValueError("reference interval has zero width")
    return Interval((target.lower - reference.lower) / width,
                    (target.upper - reference.lower) / width)
