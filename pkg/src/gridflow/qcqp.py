"""Convex QCQP form of a time-expanded generalized flow network.

Variables are the per-arc in-flows ``x`` and out-flows ``y`` (stacked as
``w = [x, y]``). Constraint rows, in canonical order::

    loss      r_a x_a^2 - rho_a x_a + y_a        <= 0   (arc order)
    capacity  x_a - u_a                          <= 0   (arc order)
    nonneg    -y_a                               <= 0   (arc order)
    conserve  sum_out x - sum_in y               <= 0   (transit nodes, by node id)
    demand    d_v - sum_in y                     <= 0   (sinks, by node id)

A hardened instance adds the same constant ``offset`` to every row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse

FAMILIES = ("loss", "capacity", "nonneg", "conservation", "demand")


@dataclass(frozen=True, eq=False)
class QcqpInstance:
    tail: np.ndarray
    head: np.ndarray
    rho: np.ndarray
    r: np.ndarray
    u: np.ndarray
    c_lin: np.ndarray
    c_quad: np.ndarray
    n_nodes: int
    sinks: np.ndarray
    demand: np.ndarray
    offset: float = 0.0
    node_names: tuple[str, ...] = ()
    source: int = 0

    def __post_init__(self):
        for name in ("tail", "head", "sinks"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).reshape(-1))
        for name in ("rho", "r", "u", "c_lin", "c_quad", "demand"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        n = self.tail.size
        for name in ("head", "rho", "r", "u", "c_lin", "c_quad"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} has {getattr(self, name).size} entries, expected {n}")
        if self.sinks.size != self.demand.size:
            raise ValueError("one demand per sink required")
        if np.any(np.diff(self.sinks) <= 0):
            order = np.argsort(self.sinks)
            object.__setattr__(self, "sinks", self.sinks[order])
            object.__setattr__(self, "demand", self.demand[order])
        if n and (self.tail.max() >= self.n_nodes or self.head.max() >= self.n_nodes):
            raise ValueError("arc endpoint out of range")
        if np.any(self.head == self.source):
            raise ValueError("the super-source must not have in-arcs")
        if np.any(np.isin(self.tail, self.sinks)):
            raise ValueError("sinks must not have out-arcs")
        if np.any(self.u <= 0) or np.any(self.r < 0) or np.any(self.c_lin < 0) or np.any(self.c_quad < 0):
            raise ValueError("need u > 0 and r, c_lin, c_quad >= 0")
        if np.any(self.rho < 0) or np.any(self.rho > 1):
            raise ValueError("rho must lie in [0, 1]")
        if np.any(self.demand < 0):
            raise ValueError("demands must be non-negative")

    @property
    def n_arcs(self) -> int:
        return int(self.tail.size)

    @property
    def n_vars(self) -> int:
        return 2 * self.n_arcs

    @cached_property
    def transit(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.source] = False
        mask[self.sinks] = False
        return np.flatnonzero(mask)

    @property
    def n_rows(self) -> int:
        return 3 * self.n_arcs + self.n_nodes - 1

    @cached_property
    def node_row(self) -> np.ndarray:
        """Position of each node among the node rows (-1 for the super-source)."""
        pos = np.full(self.n_nodes, -1, dtype=np.int64)
        pos[self.transit] = np.arange(self.transit.size)
        pos[self.sinks] = self.transit.size + np.arange(self.sinks.size)
        return pos

    @cached_property
    def node_matrix(self) -> sparse.csr_matrix:
        """Jacobian of the conservation and demand rows with respect to ``[x, y]``."""
        nA = self.n_arcs
        row = self.node_row
        has_tail = row[self.tail] >= 0
        r_idx = np.concatenate([row[self.tail][has_tail], row[self.head]])
        c_idx = np.concatenate([np.flatnonzero(has_tail), nA + np.arange(nA)])
        vals = np.concatenate([np.ones(int(has_tail.sum())), -np.ones(nA)])
        return sparse.csr_matrix((vals, (r_idx, c_idx)), shape=(self.n_nodes - 1, 2 * nA))

    def family_slices(self) -> dict[str, slice]:
        nA, nT, nS = self.n_arcs, self.transit.size, self.sinks.size
        bounds = np.cumsum([0, nA, nA, nA, nT, nS])
        return {f: slice(int(bounds[i]), int(bounds[i + 1])) for i, f in enumerate(FAMILIES)}

    def gamma(self, x):
        return self.rho * x - self.r * x * x

    def with_arrays(self, **changes) -> "QcqpInstance":
        return replace(self, **changes)

    def out_arcs(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.tail == v)

    def in_arcs(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.head == v)

    def name(self, v: int) -> str:
        return self.node_names[v] if self.node_names else str(v)


@dataclass
class FlowPoint:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")

    @classmethod
    def zeros(cls, n: int) -> "FlowPoint":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_vector(cls, w) -> "FlowPoint":
        w = np.asarray(w, dtype=float)
        n = w.size // 2
        return cls(w[:n].copy(), w[n:].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def copy(self) -> "FlowPoint":
        return FlowPoint(self.x.copy(), self.y.copy())


def objective(inst: QcqpInstance, z: FlowPoint) -> float:
    return float(inst.c_lin @ z.x + inst.c_quad @ (z.x * z.x))


def residuals(inst: QcqpInstance, z: FlowPoint) -> np.ndarray:
    x, y = z.x, z.y
    if x.size != inst.n_arcs:
        raise ValueError(f"point has {x.size} arcs, instance has {inst.n_arcs}")
    out_x = np.bincount(inst.tail, weights=x, minlength=inst.n_nodes)
    in_y = np.bincount(inst.head, weights=y, minlength=inst.n_nodes)
    g = np.concatenate([
        inst.r * x * x - inst.rho * x + y,
        x - inst.u,
        -y,
        out_x[inst.transit] - in_y[inst.transit],
        inst.demand - in_y[inst.sinks],
    ])
    return g + inst.offset


def evaluate(inst: QcqpInstance, z: FlowPoint) -> tuple[float, np.ndarray]:
    """Objective value and canonical residual vector; feasible iff all residuals <= 0."""
    return objective(inst, z), residuals(inst, z)


@dataclass
class Derivatives:
    obj_grad: np.ndarray
    obj_hess: np.ndarray
    jac: sparse.csr_matrix
    # every constraint Hessian is diagonal with at most one nonzero
    hess_rows: np.ndarray
    hess_vars: np.ndarray
    hess_vals: np.ndarray

    def constraint_hessian_diag(self, i: int, n_vars: int) -> np.ndarray:
        h = np.zeros(n_vars)
        sel = self.hess_rows == i
        h[self.hess_vars[sel]] = self.hess_vals[sel]
        return h


def derivatives(inst: QcqpInstance, z: FlowPoint) -> Derivatives:
    nA = inst.n_arcs
    x = z.x
    ar = np.arange(nA)
    obj_grad = np.concatenate([inst.c_lin + 2 * inst.c_quad * x, np.zeros(nA)])
    obj_hess = np.concatenate([2 * inst.c_quad, np.zeros(nA)])
    rows = np.concatenate([ar, ar, nA + ar, 2 * nA + ar])
    cols = np.concatenate([ar, nA + ar, ar, nA + ar])
    vals = np.concatenate([2 * inst.r * x - inst.rho, np.ones(nA), np.ones(nA), -np.ones(nA)])
    arc_part = sparse.csr_matrix((vals, (rows, cols)), shape=(3 * nA, 2 * nA))
    jac = sparse.vstack([arc_part, inst.node_matrix], format="csr")
    return Derivatives(obj_grad, obj_hess, jac, ar.copy(), ar.copy(), 2 * inst.r)


def harden(inst: QcqpInstance, eps: float) -> QcqpInstance:
    """Shift every residual by ``+eps``."""
    if eps < 0:
        raise ValueError(f"hardening must be non-negative, got {eps}")
    if eps == 0:
        return inst
    return replace(inst, offset=inst.offset + float(eps))


@dataclass(frozen=True)
class SlackProgram:
    """``min s`` subject to ``g_i(z) + eps <= s`` for the rows of ``base``."""

    base: QcqpInstance
    eps: float = 0.0

    @property
    def n_vars(self) -> int:
        return self.base.n_vars + 1

    def residuals(self, z: FlowPoint, s: float) -> np.ndarray:
        return residuals(self.base, z) + self.eps - s

    def evaluate(self, z: FlowPoint, s: float) -> tuple[float, np.ndarray]:
        return float(s), self.residuals(z, s)

    def start(self) -> tuple[FlowPoint, float]:
        """Strictly feasible start: zero flow and ``s`` one above the worst row."""
        z = FlowPoint.zeros(self.base.n_arcs)
        g = residuals(self.base, z) + self.eps
        return z, float(g.max(initial=0.0)) + 1.0

    def lower_s(self) -> float:
        """No point has ``s`` below ``-u_max``."""
        return -float(self.base.u.max(initial=0.0))


def slack_program(inst: QcqpInstance, eps: float = 0.0) -> SlackProgram:
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    return SlackProgram(inst, float(eps))


@dataclass(frozen=True)
class InstanceConstants:
    sigma: float
    W: float
    F: float
    iota_product: float
    log_iota_product: float
    c_prime_max: float
    c_lin_min: float
    Gamma_bound: float
    R_bound: float
    M_bound: float
    n_nodes: int
    n_arcs: int

    def perturbation_factor_log(self) -> float:
        """log of c'_max (|V| + 3|A|) prod iota^-1 (``-inf`` when it is zero)."""
        base = self.c_prime_max * (self.n_nodes + 3 * self.n_arcs)
        if base <= 0:
            return -math.inf
        return math.log(base) + self.log_iota_product

    def q_eps(self, eps: float) -> float:
        lk = self.perturbation_factor_log()
        if lk == -math.inf:
            return float(eps)
        if lk > 700:
            return float(eps) * math.exp(-lk)
        return float(eps) / (1.0 + math.exp(lk))


def iota(inst: QcqpInstance) -> np.ndarray:
    """Minimum slope of each arc's loss function over ``[0, u]``."""
    return inst.rho - 2.0 * inst.r * inst.u


def constants(inst: QcqpInstance) -> InstanceConstants:
    nA = inst.n_arcs
    io = iota(inst)
    if np.any(io <= 0):
        bad = int(np.flatnonzero(io <= 0)[0])
        raise ValueError(f"arc {bad}: loss function not increasing on [0, u] (rho - 2ru = {io[bad]:g})")
    log_prod = float(-np.log(io).sum()) if nA else 0.0
    sigma = math.sqrt(2.0) * float(np.linalg.norm(inst.u))
    root = math.sqrt(2 * nA)
    u_max = float(inst.u.max(initial=0.0))
    d_max = float(inst.demand.max(initial=0.0))
    c_lin_max = float(inst.c_lin.max(initial=0.0))
    c_quad_max = float(inst.c_quad.max(initial=0.0))
    r_max = float(inst.r.max(initial=0.0))
    h = abs(inst.offset)
    W = max(root * c_lin_max * sigma + c_quad_max * sigma ** 2,
            2 * sigma + r_max * sigma ** 2 + h,
            sigma + u_max + h,
            root * sigma + d_max + h)
    src_arcs = inst.tail == inst.source
    F = float(inst.c_lin[src_arcs].min(initial=math.inf)) * float(inst.demand.sum()) if src_arcs.any() else 0.0
    if not math.isfinite(F):
        F = 0.0
    return InstanceConstants(
        sigma=sigma,
        W=W,
        F=F,
        iota_product=math.exp(log_prod) if log_prod < 709 else math.inf,
        log_iota_product=log_prod,
        c_prime_max=float(np.max(inst.c_lin + 2 * inst.c_quad * inst.u, initial=0.0)),
        c_lin_min=float(inst.c_lin.min(initial=0.0)),
        Gamma_bound=root,
        R_bound=root * u_max,
        M_bound=float(np.sum(inst.c_lin * inst.u + inst.c_quad * inst.u ** 2)),
        n_nodes=inst.n_nodes,
        n_arcs=nA,
    )
