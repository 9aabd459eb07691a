"""Piecewise-constant functions of time (demands) or of cumulative quantity (marginal costs).

Functions are right-continuous: piece ``j`` covers ``[b_{j-1}, b_j)`` and the last
piece is closed at ``domain_end``.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BREAKPOINT_TOL = 1e-12


class DomainError(ValueError):
    """Argument outside the domain of a piecewise-constant function."""


class PieceCountError(ValueError):
    """The requested over-approximation needs more pieces than allowed."""

    def __init__(self, required: int, cap: int):
        super().__init__(f"over-approximation needs k={required} pieces, cap is {cap}")
        self.required = required
        self.cap = cap


@dataclass(frozen=True)
class PiecewiseConstantFn:
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]
    domain_end: float

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        end = float(self.domain_end)
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "domain_end", end)
        if not (end > 0 and math.isfinite(end)):
            raise ValueError(f"domain_end must be positive and finite, got {end}")
        if len(vals) != len(bps) + 1:
            raise ValueError(f"need {len(bps) + 1} values for {len(bps)} breakpoints, got {len(vals)}")
        prev = 0.0
        for b in bps:
            if not (prev < b < end):
                raise ValueError(f"breakpoints must be strictly increasing inside (0, {end}): {bps}")
            prev = b
        if any(v < 0 or not math.isfinite(v) for v in vals):
            raise ValueError(f"values must be finite and non-negative: {vals}")

    @classmethod
    def constant(cls, value: float, domain_end: float) -> "PiecewiseConstantFn":
        return cls((), (value,), domain_end)

    @property
    def n_pieces(self) -> int:
        return len(self.values)

    @property
    def bounds(self) -> tuple[float, ...]:
        return (0.0, *self.breakpoints, self.domain_end)

    def pieces(self) -> list[tuple[float, float, float]]:
        """(start, end, value) for every piece."""
        b = self.bounds
        return [(b[j], b[j + 1], self.values[j]) for j in range(self.n_pieces)]

    def max_value(self) -> float:
        return max(self.values)

    def is_non_decreasing(self) -> bool:
        return all(a <= b for a, b in zip(self.values, self.values[1:]))

    def __call__(self, t: float) -> float:
        return evaluate(self, t)


def evaluate(f: PiecewiseConstantFn, t: float) -> float:
    if not (0.0 <= t <= f.domain_end):
        raise DomainError(f"t={t} outside [0, {f.domain_end}]")
    return f.values[bisect_right(f.breakpoints, t)]


def integrate(f: PiecewiseConstantFn, a: float, b: float) -> float:
    if a > b:
        raise DomainError(f"reversed bounds a={a} > b={b}")
    if a < 0.0 or b > f.domain_end:
        raise DomainError(f"[{a}, {b}] not inside [0, {f.domain_end}]")
    total = 0.0
    for start, end, value in f.pieces():
        lo, hi = max(start, a), min(end, b)
        if hi > lo:
            total += value * (hi - lo)
    return total


@dataclass(frozen=True)
class TimeGrid:
    """Consecutive intervals tiling ``[0, T]``; stored as their boundaries."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        bs = tuple(float(b) for b in self.boundaries)
        object.__setattr__(self, "boundaries", bs)
        if len(bs) < 2 or bs[0] != 0.0:
            raise ValueError("a grid needs boundaries starting at 0 and at least one interval")
        if any(b <= a for a, b in zip(bs, bs[1:])):
            raise ValueError(f"interval lengths must be positive: {bs}")

    @classmethod
    def uniform(cls, horizon: float, k: int) -> "TimeGrid":
        return cls(tuple(horizon * i / k for i in range(k)) + (float(horizon),))

    @property
    def horizon(self) -> float:
        return self.boundaries[-1]

    @property
    def k(self) -> int:
        return len(self.boundaries) - 1

    @property
    def intervals(self) -> list[tuple[float, float]]:
        b = self.boundaries
        return [(b[i], b[i + 1]) for i in range(self.k)]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))

    @property
    def index_min(self) -> int:
        return int(np.argmin(self.lengths))

    @property
    def min_length(self) -> float:
        return float(self.lengths.min())

    def midpoints(self) -> np.ndarray:
        b = np.asarray(self.boundaries)
        return 0.5 * (b[:-1] + b[1:])

    def sample(self, f: PiecewiseConstantFn) -> np.ndarray:
        """Value of ``f`` on each interval (``f`` must be constant on every interval)."""
        return np.array([evaluate(f, m) for m in self.midpoints()])


def _dedupe(points: Iterable[float], tol: float) -> list[float]:
    out: list[float] = []
    for p in sorted(points):
        if not out or p - out[-1] > tol:
            out.append(p)
    return out


def common_refinement(fs: Sequence[PiecewiseConstantFn], horizon: float | None = None,
                      tol: float = BREAKPOINT_TOL) -> TimeGrid:
    if not fs and horizon is None:
        raise ValueError("need at least one function or an explicit horizon")
    T = fs[0].domain_end if horizon is None else float(horizon)
    for f in fs:
        if abs(f.domain_end - T) > tol:
            raise ValueError(f"functions disagree on the horizon: {f.domain_end} vs {T}")
    inner = _dedupe((b for f in fs for b in f.breakpoints), tol)
    inner = [b for b in inner if tol < b < T - tol]
    return TimeGrid((0.0, *inner, T))


def sufficient_piece_count(c_prime_max: float, horizon: float, eps: float,
                           lipschitz_sum: float, iota_product: float = 1.0) -> int:
    """Equal-length pieces needed so that rounding demands up costs at most eps/2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    raw = c_prime_max * horizon / (eps / 2.0) * lipschitz_sum * iota_product
    # guard against 8.000000000001 -> 9
    return max(1, math.ceil(raw - 1e-9 * max(1.0, raw)))


def over_approximate(curves: Mapping[str, Callable[[np.ndarray], np.ndarray]],
                     lipschitz: Mapping[str, float], eps: float, *, horizon: float,
                     c_prime_max: float, iota_product: float = 1.0,
                     breakpoints: Sequence[float] = (), k: int | None = None,
                     max_pieces: int = 100_000) -> tuple[TimeGrid, dict[str, PiecewiseConstantFn]]:
    """Step functions dominating smooth demand curves.

    Each differentiable stretch between ``breakpoints`` is cut into ``k`` equal
    intervals (``k`` from :func:`sufficient_piece_count` unless given). On an
    interval ``[a, b]`` a curve with Lipschitz constant ``L`` satisfies
    ``sup <= (d(a) + d(b) + L (b - a)) / 2``, which is what each piece stores.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if k is None:
        k = sufficient_piece_count(c_prime_max, horizon, eps,
                                   sum(lipschitz[s] for s in curves), iota_product)
    stretches = [0.0, *_dedupe((b for b in breakpoints if 0 < b < horizon), BREAKPOINT_TOL), horizon]
    total = k * (len(stretches) - 1)
    if total > max_pieces:
        raise PieceCountError(total, max_pieces)
    bounds: list[float] = [0.0]
    for a, b in zip(stretches, stretches[1:]):
        bounds.extend(a + (b - a) * (i + 1) / k for i in range(k))
    bounds[-1] = horizon
    grid = TimeGrid(tuple(bounds))
    lo, hi = np.asarray(grid.boundaries[:-1]), np.asarray(grid.boundaries[1:])
    out = {}
    for sink, d in curves.items():
        L = float(lipschitz[sink])
        da, db = np.asarray(d(lo), dtype=float), np.asarray(d(hi), dtype=float)
        vals = 0.5 * (da + db + L * (hi - lo))
        # never below the sampled endpoints, even if L was given too small
        vals = np.maximum(vals, np.maximum(da, db))
        out[sink] = PiecewiseConstantFn(grid.boundaries[1:-1], tuple(np.maximum(vals, 0.0)), horizon)
    return grid, out
