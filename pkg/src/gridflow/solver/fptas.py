"""Strictly feasible eps-solutions via hardening, and the relative-error wrapper."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..qcqp import FlowPoint, QcqpInstance, constants, harden, objective, residuals, slack_program
from .barrier import central_phase, precision_floor, slack_phase
from .config import (BarrierConfig, ConvergenceError, DegenerateInstanceError, InfeasibleError, NotStrictlyFeasibleError,
                     NumericalError, PathFollowConfig, SolveReport)
from .pathfollow import path_following_solve

ENGINES = ("barrier", "pathfollow")


@dataclass
class EpsSearch:
    eps_prime: float
    point: FlowPoint  # strictly feasible for the eps'-hardened instance
    halvings: int
    steps: int
    q_eps: float


def _check_engine(engine: str):
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {', '.join(ENGINES)}")


def numerical_floor(inst: QcqpInstance) -> float:
    """Smallest hardening double precision can tell apart from zero on this instance."""
    scale = max(1.0, float(inst.u.max(initial=0.0)), float(inst.demand.max(initial=0.0)))
    return 1e-11 * scale


def search_eps(inst: QcqpInstance, eps: float, engine: str = "barrier", config=None) -> EpsSearch:
    _check_engine(engine)
    if not eps > 0:
        raise ValueError("eps must be positive")
    q = constants(inst).q_eps(eps)
    ep = min(q, 1.0)
    barrier_cfg = config if isinstance(config, BarrierConfig) else BarrierConfig()
    floor = max(barrier_cfg.eps_floor_factor * q, numerical_floor(inst))
    halvings = steps = 0
    warm = None
    while True:
        try:
            if engine == "barrier":
                out = slack_phase(inst, 2 * ep, barrier_cfg, precision=ep, warm=warm)
                steps += out.steps
                if out.status == "feasible":
                    return EpsSearch(ep, FlowPoint.from_vector(out.w[:-1]), halvings, steps, q)
                if out.status == "infeasible":
                    raise InfeasibleError(out.lower_bound)
                warm = (out.w, out.t)
            else:
                cfg = config if isinstance(config, PathFollowConfig) else PathFollowConfig()
                rep = path_following_solve(slack_program(inst, 2 * ep), ep, cfg)
                steps += sum(rep.newton_steps.values())
                if rep.s is not None and rep.s <= 0:
                    return EpsSearch(ep, rep.point, halvings, steps, q)
        except (ConvergenceError, NumericalError) as exc:
            if halvings == 0:
                raise
            # after halving, a breakdown means the margin is at rounding level
            raise NotStrictlyFeasibleError(
                f"solver broke down at eps'={ep:.2e}; no strictly feasible margin is resolvable") from exc
        ep /= 2.0
        halvings += 1
        if ep < floor or halvings > barrier_cfg.max_halvings:
            raise NotStrictlyFeasibleError(
                f"eps' fell below {floor:.2e} without a certificate; "
                "the instance is not strictly feasible within tolerance")


def find_eps(inst: QcqpInstance, eps: float, engine: str = "barrier", config=None) -> float:
    """Largest halving of ``min(Q_eps, 1)`` whose doubly hardened slack program has ``s <= 0``."""
    return search_eps(inst, eps, engine, config).eps_prime


def _trivial(inst: QcqpInstance, eps: float, engine: str, start: float) -> Optional[SolveReport]:
    if inst.n_arcs == 0 and not np.any(inst.demand > 0):
        if inst.sinks.size:
            raise NotStrictlyFeasibleError("zero-demand sinks without arcs sit on the boundary")
        z = FlowPoint.zeros(0)
        return SolveReport(engine=engine, point=z, objective=0.0, eps=eps, max_residual=-math.inf,
                           eps_prime=0.0, duals=np.zeros(residuals(inst, z).size), gap=0.0, bound=0.0,
                           wall_time=time.perf_counter() - start)
    return None


def feasible_eps_solution(inst: QcqpInstance, eps: float, engine: str = "barrier",
                          config=None) -> SolveReport:
    """A point with every residual ``<= -eps'`` and objective within ``eps`` of OPT."""
    start = time.perf_counter()
    _check_engine(engine)
    done = _trivial(inst, eps, engine, start)
    if done is not None:
        return done
    found = search_eps(inst, eps, engine, config)
    ep = found.eps_prime
    hard = harden(inst, ep)
    notes = []
    if engine == "barrier":
        cfg = config if isinstance(config, BarrierConfig) else BarrierConfig()
        floor = precision_floor(inst, cfg)
        prec = max(ep / 2.0, floor)
        if prec > ep / 2.0:
            notes.append(f"precision clamped to {prec:.2e}; see bound for the certified error")
        cen = central_phase(hard, found.point, prec, cfg)
        z, t, gap = cen.z, cen.t, cen.gap
        g_hard = residuals(hard, z)
        duals = 1.0 / (t * -g_hard)
        bound = gap + ep * float(duals.sum())
        steps = {"search": found.steps, "phase2": cen.steps}
        history = cen.history
    else:
        cfg = config if isinstance(config, PathFollowConfig) else PathFollowConfig()
        rep = path_following_solve(hard, ep / 2.0, cfg)
        z, t, gap, duals, bound, history = rep.point, rep.t, None, None, None, []
        steps = {"search": found.steps, **rep.newton_steps}
    g = residuals(inst, z)
    return SolveReport(engine=engine, point=z, objective=objective(inst, z), eps=eps,
                       max_residual=float(g.max(initial=-math.inf)), eps_prime=ep, hardening=ep,
                       duals=duals, t=t, gap=gap, bound=bound, newton_steps=steps,
                       halvings=found.halvings, history=history,
                       wall_time=time.perf_counter() - start, notes=notes)


def relative_fptas(inst: QcqpInstance, eps_rel: float, engine: str = "barrier", config=None) -> SolveReport:
    """Feasible point with value at most ``(1 + eps_rel) OPT`` (uses ``OPT >= F``)."""
    if not eps_rel > 0:
        raise ValueError("eps_rel must be positive")
    F = constants(inst).F
    if F <= 0:
        raise DegenerateInstanceError("F = 0: relative error is undefined, use an absolute eps")
    rep = feasible_eps_solution(inst, eps_rel * F, engine, config)
    rep.notes.append(f"absolute target eps_rel*F = {eps_rel * F:.3e} (F = {F:.6g})")
    return rep
