"""Damped Newton centering with backtracking line search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
from scipy import linalg

from .config import BarrierConfig, ConvergenceError, NumericalError

STALL_LEVEL = 1e-6


class CenteringObjective(Protocol):
    def value(self, w: np.ndarray) -> float: ...

    def newton(self, w: np.ndarray) -> tuple[np.ndarray, float]: ...


@dataclass
class CenterResult:
    w: np.ndarray
    steps: int
    decrement_sq: float
    decrements: list[float] = field(default_factory=list)
    stalled: bool = False
    stopped: bool = False


def _change(obj, w, dw, alpha):
    if hasattr(obj, "change"):
        return obj.change(w, dw, alpha)
    return obj.value(w + alpha * dw) - obj.value(w)


def newton_center(obj: CenteringObjective, w0: np.ndarray, config: BarrierConfig,
                  stop: Optional[Callable[[np.ndarray], bool]] = None) -> CenterResult:
    """Minimise ``obj`` from the strictly interior point ``w0``.

    Stops once ``decrement^2 / 2 <= config.newton_tol``. ``stop`` is checked after
    every accepted step and ends centering early when it returns True.
    A line search that cannot make progress at a tiny decrement, or a tiny
    decrement that stops shrinking, is treated as converged to working
    precision (``stalled``).
    """
    w = np.array(w0, dtype=float)
    if not math.isfinite(obj.value(w)):
        raise NumericalError("starting point is outside the barrier domain")
    decs: list[float] = []
    for step in range(config.max_newton + 1):
        dw, lam_sq = obj.newton(w)
        if not math.isfinite(lam_sq) or not np.all(np.isfinite(dw)):
            raise NumericalError("non-finite Newton direction")
        lam_sq = max(lam_sq, 0.0)
        decs.append(lam_sq)
        if lam_sq / 2.0 <= config.newton_tol:
            return CenterResult(w, step, lam_sq, decs)
        # inside the quadratic region a decrement that stops shrinking is rounding noise
        if lam_sq < STALL_LEVEL and len(decs) >= 3 and lam_sq > 0.5 * decs[-3]:
            return CenterResult(w, step, lam_sq, decs, stalled=True)
        if step == config.max_newton:
            break
        alpha = 1.0
        if hasattr(obj, "max_step"):
            alpha = min(1.0, 0.99 * obj.max_step(w, dw))
        slope = -lam_sq
        accepted = False
        while alpha > 1e-14:
            d = _change(obj, w, dw, alpha)
            if math.isfinite(d) and d <= config.alpha * alpha * slope:
                accepted = True
                break
            alpha *= config.beta
        if not accepted:
            if lam_sq < STALL_LEVEL:
                return CenterResult(w, step, lam_sq, decs, stalled=True)
            raise NumericalError(f"line search failed at decrement^2 = {lam_sq:.3e}")
        w = w + alpha * dw
        if stop is not None and stop(w):
            dw, lam_sq = obj.newton(w)
            return CenterResult(w, step + 1, max(lam_sq, 0.0), decs, stopped=True)
    raise ConvergenceError(f"centering did not converge in {config.max_newton} Newton steps", best=w)


class DenseObjective:
    """Centering objective from plain callables (value returns inf outside the domain)."""

    def __init__(self, f: Callable, grad: Callable, hess: Callable, reg: float = 1e-12):
        self.f, self.grad, self.hess, self.reg = f, grad, hess, reg

    def value(self, w):
        try:
            v = float(self.f(w))
        except (ValueError, FloatingPointError):
            return math.inf
        return v if math.isfinite(v) else math.inf

    def newton(self, w):
        g = np.atleast_1d(np.asarray(self.grad(w), dtype=float))
        H = np.atleast_2d(np.asarray(self.hess(w), dtype=float))
        dw = -solve_spd(H, g, self.reg)
        return dw.reshape(np.shape(w)), float(-(g @ dw))


def solve_spd(H: np.ndarray, rhs: np.ndarray, reg: float = 1e-12) -> np.ndarray:
    """Cholesky solve; on failure retry with a small diagonal shift."""
    try:
        return linalg.cho_solve(linalg.cho_factor(H, check_finite=False), rhs, check_finite=False)
    except linalg.LinAlgError:
        shift = reg * (1.0 + np.abs(H).sum(axis=1).max())
        try:
            c = linalg.cho_factor(H + shift * np.eye(H.shape[0]), check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("Newton system is not positive definite") from exc
        return linalg.cho_solve(c, rhs, check_finite=False)
