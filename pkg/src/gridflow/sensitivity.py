"""Local sensitivities from barrier duals and global perturbation brackets.

Perturbation atoms are ``(kind, target, delta)`` with ``kind`` one of
``"demand"`` (target: sink node index of the QCQP) or ``"capacity"`` (target:
arc index). Brackets bound ``OPT(perturbed) - OPT(base)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .postprocess import gamma_inverse
from .qcqp import FlowPoint, QcqpInstance, constants
from .solver import BarrierConfig, SolveReport, SolverError, barrier_solve

KINDS = ("demand", "capacity")


@dataclass(frozen=True)
class ResidualGraph:
    inst: QcqpInstance
    x: np.ndarray
    y: np.ndarray

    @property
    def forward_capacity(self) -> np.ndarray:
        return self.inst.u - self.x

    @property
    def backward_capacity(self) -> np.ndarray:
        return self.y.copy()

    def forward_gamma(self, a: int, dx):
        """Extra out-flow from pushing ``dx`` more into arc ``a``."""
        i = self.inst
        x = self.x[a] + np.asarray(dx, float)
        return i.rho[a] * x - i.r[a] * x * x - self.y[a]

    def backward_gamma(self, a: int, dy):
        """In-flow released by taking ``dy`` out-flow back from arc ``a``."""
        i = self.inst
        return self.x[a] - gamma_inverse(i.rho[a], i.r[a], self.y[a] - np.asarray(dy, float))


def residual_graph(inst: QcqpInstance, z: FlowPoint, tol: float = 1e-9) -> ResidualGraph:
    gam = inst.gamma(z.x)
    bad = np.flatnonzero(np.abs(gam - z.y) > tol * np.maximum(1.0, inst.u))
    if bad.size:
        raise ValueError(f"residual graph needs a waste-free flow; arc {int(bad[0])} has y != gamma(x)")
    if np.any(z.x < -tol) or np.any(z.x > inst.u + tol):
        raise ValueError("flow outside [0, u]")
    return ResidualGraph(inst, z.x.copy(), z.y.copy())


@dataclass
class PerturbationBound:
    lower: float
    upper: float
    contributions: list[tuple[tuple, float, float]] = field(default_factory=list)

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    def __add__(self, other: "PerturbationBound") -> "PerturbationBound":
        return PerturbationBound(self.lower + other.lower, self.upper + other.upper,
                                 self.contributions + other.contributions)


@dataclass(frozen=True)
class _Factors:
    c_min: float
    c_max: float
    log_amp: float  # log of prod iota^-1

    def amplified(self, value: float) -> float:
        if value == 0:
            return 0.0
        lg = math.log(abs(value)) + self.log_amp
        return math.copysign(math.exp(lg) if lg < 709 else math.inf, value)


def _factors(inst: QcqpInstance) -> _Factors:
    c = constants(inst)  # raises when some iota <= 0
    # cheapest production: any extra unit delivered needs at least one more unit produced
    src = inst.tail == inst.source
    c_min = float(inst.c_lin[src].min()) if src.any() else 0.0
    return _Factors(c_min, c.c_prime_max, c.log_iota_product)


def demand_bound(inst: QcqpInstance, sink: int, delta: float, _f: Optional[_Factors] = None) -> PerturbationBound:
    """Bracket for raising the demand at ``sink`` by ``delta`` (assumes the result stays feasible)."""
    if sink not in set(inst.sinks.tolist()):
        raise ValueError(f"node {sink} is not a sink")
    f = _f or _factors(inst)
    if delta >= 0:
        lo, hi = f.c_min * delta, f.amplified(f.c_max * delta)
    else:
        lo, hi = f.amplified(f.c_max * delta), f.c_min * delta
    return PerturbationBound(lo, hi, [(("demand", sink, delta), lo, hi)])


def capacity_bound(inst: QcqpInstance, arc: int, delta: float, _f: Optional[_Factors] = None) -> PerturbationBound:
    if not 0 <= arc < inst.n_arcs:
        raise ValueError(f"arc {arc} out of range")
    f = _f or _factors(inst)
    if delta >= 0:
        lo, hi = -f.amplified(f.c_max * delta), 0.0
    else:
        lo, hi = 0.0, f.amplified(f.c_max * -delta)
    return PerturbationBound(lo, hi, [(("capacity", arc, delta), lo, hi)])


def composite_bound(inst: QcqpInstance, atoms: Iterable[tuple[str, int, float]]) -> PerturbationBound:
    atoms = list(atoms)
    total = PerturbationBound(0.0, 0.0)
    if not atoms:
        return total
    f = _factors(inst)
    for kind, target, delta in atoms:
        if kind == "demand":
            total = total + demand_bound(inst, target, delta, f)
        elif kind == "capacity":
            total = total + capacity_bound(inst, target, delta, f)
        else:
            raise ValueError(f"unknown perturbation kind {kind!r}")
    return total


def perturb(inst: QcqpInstance, atoms: Iterable[tuple[str, int, float]]) -> QcqpInstance:
    demand, u = inst.demand.copy(), inst.u.copy()
    pos = {int(s): j for j, s in enumerate(inst.sinks)}
    for kind, target, delta in atoms:
        if kind == "demand":
            demand[pos[target]] += delta
        elif kind == "capacity":
            u[target] += delta
        else:
            raise ValueError(f"unknown perturbation kind {kind!r}")
    if np.any(demand < 0) or np.any(u <= 0):
        raise ValueError("perturbation makes a demand negative or a capacity non-positive")
    return inst.with_arrays(demand=demand, u=u)


@dataclass
class LocalSensitivity:
    capacity: np.ndarray  # d OPT / d u_a
    demand_row: np.ndarray  # -lambda on demand rows (relaxation direction)
    resistance: np.ndarray  # d OPT / d r_a
    gap: float
    one_sided: np.ndarray  # capacity estimates valid only for tightening

    @property
    def demand(self) -> np.ndarray:
        """d OPT / d d_d: raising a demand tightens its row."""
        return -self.demand_row

    caveats: tuple[str, ...] = (
        "estimates from a central point; accurate up to the duality gap",
        "resistance sensitivity assumes the optimum moves continuously",
    )


def local_sensitivities(inst: QcqpInstance, report: SolveReport,
                        flow: Optional[FlowPoint] = None) -> LocalSensitivity:
    """Sensitivities from the report's duals.

    The resistance rule multiplies each loss dual by the squared in-flow. A
    central point may carry circulation on antiparallel arcs, so pass the merged,
    waste-free ``flow`` when one is at hand.
    """
    if report.duals is None or report.t is None:
        raise ValueError("report carries no duals; solve with the barrier engine")
    lam = np.asarray(report.duals)
    fam = inst.family_slices()
    x = (flow or report.point).x
    return LocalSensitivity(
        capacity=-lam[fam["capacity"]],
        demand_row=-lam[fam["demand"]],
        resistance=lam[fam["loss"]] * x * x,
        gap=float(report.gap if report.gap is not None else len(lam) / report.t),
        one_sided=np.ones(inst.n_arcs, dtype=bool),
    )


def global_lower_bound(report: SolveReport, omega: np.ndarray) -> float:
    """``-lambda . omega`` bounds ``OPT(rows <= omega) - OPT`` from below (up to the gap)."""
    return -float(np.asarray(report.duals) @ np.asarray(omega))


def row_shift(inst: QcqpInstance, atoms: Iterable[tuple[str, int, float]]) -> np.ndarray:
    """Right-hand-side vector ``omega`` equivalent to a list of atoms."""
    fam = inst.family_slices()
    omega = np.zeros(inst.n_rows)
    pos = {int(s): j for j, s in enumerate(inst.sinks)}
    for kind, target, delta in atoms:
        if kind == "demand":
            omega[fam["demand"].start + pos[target]] -= delta
        else:
            omega[fam["capacity"].start + target] += delta
    return omega


@dataclass
class EmpiricalCheck:
    bound: PerturbationBound
    base: float
    perturbed: Optional[float]
    delta_opt: Optional[float]
    eps: float
    status: str  # "ok" | "violated" | "perturbed-infeasible"

    @property
    def ok(self) -> bool:
        return self.status != "violated"


def validate_bound_empirically(inst: QcqpInstance, atom: tuple[str, int, float], delta: Optional[float] = None,
                               eps: float = 1e-6, config: Optional[BarrierConfig] = None,
                               base: Optional[SolveReport] = None) -> EmpiricalCheck:
    kind, target = atom[0], atom[1]
    d = atom[2] if delta is None else delta
    atoms = [(kind, target, d)]
    bound = composite_bound(inst, atoms)
    base = base or barrier_solve(inst, eps, config)
    try:
        pert = barrier_solve(perturb(inst, atoms), eps, config)
    except (SolverError, ValueError):
        return EmpiricalCheck(bound, base.objective, None, None, eps, "perturbed-infeasible")
    diff = pert.objective - base.objective
    status = "ok" if bound.contains(diff, 2 * eps) else "violated"
    return EmpiricalCheck(bound, base.objective, pert.objective, diff, eps, status)
