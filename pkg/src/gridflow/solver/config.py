from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import numpy as np

from ..qcqp import FlowPoint


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    """The slack program's optimum is provably positive."""

    def __init__(self, lower_bound: float, duals: Optional[np.ndarray] = None):
        super().__init__(f"instance infeasible: slack optimum >= {lower_bound:.3e} > 0")
        self.lower_bound = lower_bound
        self.duals = duals

    def certificate(self) -> dict:
        return {"slack_lower_bound": self.lower_bound}


class NotStrictlyFeasibleError(SolverError):
    pass


class ConvergenceError(SolverError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class NumericalError(SolverError):
    pass


class DegenerateInstanceError(SolverError):
    pass


@dataclass
class BarrierConfig:
    t0: float = 1.0
    mu: Optional[float] = None  # None: 1 + 1/sqrt(m+1)
    alpha: float = 0.1
    beta: float = 0.7
    newton_tol: float = 1e-10  # stop centering when decrement^2 / 2 <= this
    final_newton_tol: float = 1e-16  # the last center, whose duals get reported
    max_newton: int = 200
    max_outer: int = 1_000_000
    reg: float = 1e-12
    precision_floor: float = 1e-10  # smallest gap asked of the engine, relative to max(1, F)
    eps_floor_factor: float = 1e-12  # eps' search gives up below this times Q_eps
    max_halvings: int = 200

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if self.mu is not None and not self.mu > 1:
            raise ValueError("mu must exceed 1")
        if not 0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.newton_tol > 0 or self.max_newton < 1:
            raise ValueError("bad Newton limits")

    def mu_for(self, m: int) -> float:
        return self.mu if self.mu is not None else 1.0 + 1.0 / math.sqrt(m + 1)

    @classmethod
    def aggressive(cls, **kw) -> "BarrierConfig":
        return cls(mu=10.0, **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BarrierConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class PathFollowConfig:
    kappa1: Optional[float] = None  # None: 1 + 1/(8 sqrt(nu))
    kappa2: Optional[float] = None
    switch_decrement: float = 1.0 / 6.0
    target_decrement: float = 0.25
    max_steps: int = 2_000_000
    min_precision: float = 1e-13  # relative to W

    def kappa(self, nu: int) -> tuple[float, float]:
        default = 1.0 + 1.0 / (8.0 * math.sqrt(nu))
        return (self.kappa1 or default, self.kappa2 or default)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PathFollowConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class SolveReport:
    engine: str
    point: FlowPoint
    objective: float
    eps: float
    max_residual: float
    eps_prime: Optional[float] = None
    hardening: float = 0.0
    s: Optional[float] = None
    duals: Optional[np.ndarray] = None
    t: Optional[float] = None
    gap: Optional[float] = None
    bound: Optional[float] = None  # certified objective - OPT upper bound, when known
    newton_steps: dict[str, int] = field(default_factory=dict)
    halvings: int = 0
    wall_time: float = 0.0
    history: list[tuple[float, float]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {
            "engine": self.engine,
            "objective": self.objective,
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            "hardening": self.hardening,
            "max_residual": self.max_residual,
            "gap": self.gap,
            "t": self.t,
            "bound": self.bound,
            "newton_steps": dict(self.newton_steps),
            "halvings": self.halvings,
            "wall_time": self.wall_time,
            "notes": list(self.notes),
        }
