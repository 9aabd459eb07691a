"""Short-step path-following engine on an extended space ``(w, q)``.

The program ``min f0(w) s.t. f_i(w) <= 0, |w| <= sigma`` is replaced by
minimising ``q`` over the set where ``q >= Omega (f0 + W)``, ``q >= f_i``,
``q <= 2W`` and ``|w| <= sigma`` with ``Omega = eps / (3W)``. Phase 1 walks an
auxiliary path from ``(0, 3W/2)`` toward the analytic center, phase 2 follows
``t q + F`` with increasing ``t``; each ``t`` update gets one pure Newton step.

Linear algebra is dense: the engine is meant for small instances and as an
independent cross-check of the barrier engine.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg

from ..qcqp import FlowPoint, QcqpInstance, SlackProgram, derivatives, objective, residuals
from .config import ConvergenceError, NumericalError, PathFollowConfig, SolveReport


@dataclass
class DiagQcqp:
    """``f0 = c.w + sum q0 w^2`` and rows ``A w + b + qval * w[qvar]^2``."""

    c: np.ndarray
    q0: np.ndarray
    A: np.ndarray
    b: np.ndarray
    qrow: np.ndarray
    qvar: np.ndarray
    qval: np.ndarray
    radius: float

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def rows(self, w):
        g = self.A @ w + self.b
        np.add.at(g, self.qrow, self.qval * w[self.qvar] ** 2)
        return g

    def f0(self, w):
        return float(self.c @ w + self.q0 @ (w * w))

    def bound_W(self) -> float:
        """Bound on |f0| and |f_i| over the ball."""
        sig = self.radius
        qmax = np.zeros(self.m)
        np.maximum.at(qmax, self.qrow, np.abs(self.qval))
        rows = np.linalg.norm(self.A, axis=1) * sig + np.abs(self.b) + qmax * sig ** 2
        obj = np.linalg.norm(self.c) * sig + float(np.abs(self.q0).max(initial=0.0)) * sig ** 2
        return float(max(obj, rows.max(initial=0.0), 1e-300))


def qcqp_as_diag(inst: QcqpInstance) -> DiagQcqp:
    nA = inst.n_arcs
    zero = FlowPoint.zeros(nA)
    d = derivatives(inst, zero)
    return DiagQcqp(
        c=np.concatenate([inst.c_lin, np.zeros(nA)]),
        q0=np.concatenate([inst.c_quad, np.zeros(nA)]),
        A=d.jac.toarray(),
        b=residuals(inst, zero),
        qrow=np.arange(nA), qvar=np.arange(nA), qval=inst.r.copy(),
        radius=math.sqrt(2.0) * float(np.linalg.norm(inst.u)),
    )


def slack_as_diag(sp: SlackProgram, s_max: float) -> DiagQcqp:
    """Slack program with the extra row ``s <= s_max`` so that it lives in a ball."""
    base = qcqp_as_diag(sp.base)
    n = base.n + 1
    A = np.zeros((base.m + 1, n))
    A[:base.m, :base.n] = base.A
    A[:base.m, -1] = -1.0
    A[-1, -1] = 1.0
    b = np.concatenate([base.b + sp.eps, [-s_max]])
    u, rho = sp.base.u, sp.base.rho
    with np.errstate(divide="ignore"):
        xb = np.maximum(u + s_max, np.where(rho > 0, 2 * s_max / rho, np.inf))
    yb = u + 2 * s_max
    sb = max(s_max, float(u.max(initial=0.0)))
    radius = 1.01 * math.sqrt(float(xb @ xb + yb @ yb) + sb * sb) + 1.0
    c = np.zeros(n)
    c[-1] = 1.0
    return DiagQcqp(c=c, q0=np.zeros(n), A=A, b=b, qrow=base.qrow, qvar=base.qvar, qval=base.qval,
                    radius=radius)


class _Extended:
    """The self-concordant barrier ``F`` on ``(w, q)``."""

    def __init__(self, P: DiagQcqp, W: float, eps: float):
        self.P, self.W = P, W
        self.Om = eps / (3.0 * W)
        self.nu = P.m + 3
        self.n = P.n

    def slacks(self, v):
        w, q = v[:-1], v[-1]
        P = self.P
        e0 = q / self.Om - self.W - P.f0(w)
        ei = q - P.rows(w)
        eb = P.radius ** 2 - w @ w
        eu = 2 * self.W - q
        return e0, ei, eb, eu

    def inside(self, v) -> bool:
        e0, ei, eb, eu = self.slacks(v)
        return e0 > 0 and eb > 0 and eu > 0 and bool(np.all(ei > 0))

    def grad_hess(self, v):
        P = self.P
        w = v[:-1]
        n = self.n
        e0, ei, eb, eu = self.slacks(v)
        # gradients of the slack expressions
        g0 = np.empty(n + 1)
        g0[:n] = -(P.c + 2 * P.q0 * w)
        g0[n] = 1.0 / self.Om
        Ji = np.empty((P.m, n + 1))
        row_quad = np.zeros((P.m, n))
        np.add.at(row_quad, (P.qrow, P.qvar), 2 * P.qval * w[P.qvar])
        Ji[:, :n] = -(P.A + row_quad)
        Ji[:, n] = 1.0
        gb = np.zeros(n + 1)
        gb[:n] = -2 * w
        grad = -g0 / e0 - Ji.T @ (1.0 / ei) - gb / eb
        grad[n] += 1.0 / eu
        Js = Ji / ei[:, None]
        H = Js.T @ Js
        H += np.outer(g0, g0) / e0 ** 2 + np.outer(gb, gb) / eb ** 2
        H[n, n] += 1.0 / eu ** 2
        diag = np.zeros(n + 1)
        diag[:n] += 2 * P.q0 / e0 + 2.0 / eb
        np.add.at(diag, P.qvar, 2 * P.qval / ei[P.qrow])
        H[np.diag_indices(n + 1)] += diag
        return grad, H


def _factor(H):
    try:
        return linalg.cho_factor(H, check_finite=False)
    except linalg.LinAlgError:
        shift = 1e-12 * (1.0 + np.abs(H).sum(axis=1).max())
        try:
            return linalg.cho_factor(H + shift * np.eye(H.shape[0]), check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("path-following Hessian not positive definite") from exc


def _damped(ext: _Extended, v, dv):
    alpha = 1.0
    while not ext.inside(v + alpha * dv):
        alpha *= 0.5
        if alpha < 1e-12:
            raise NumericalError("path-following step cannot stay inside the domain")
    return v + alpha * dv, alpha < 1.0


@dataclass
class PathResult:
    w: np.ndarray
    q: float
    steps1: int
    steps2: int
    t: float
    damped: int


def follow_path(P: DiagQcqp, eps: float, config: Optional[PathFollowConfig] = None,
                W: Optional[float] = None) -> PathResult:
    config = config or PathFollowConfig()
    W = W if W is not None else P.bound_W()
    if eps <= 0:
        raise ValueError("eps must be positive")
    eps = min(eps, W)
    ext = _Extended(P, W, eps)
    k1, k2 = config.kappa(ext.nu)
    v = np.zeros(P.n + 1)
    v[-1] = 1.5 * W
    if not ext.inside(v):
        raise NumericalError("phase-1 start is outside the extended domain")
    g_start, _ = ext.grad_hess(v)
    t = 1.0
    steps1 = steps2 = damped = 0
    # phase 1: minimise -t g_start.v + F with t shrinking
    while True:
        grad, H = ext.grad_hess(v)
        c = _factor(H)
        dF = linalg.cho_solve(c, grad, check_finite=False)
        lam_F = math.sqrt(max(grad @ dF, 0.0))
        if lam_F <= config.switch_decrement:
            break
        t /= k1
        dv = -linalg.cho_solve(c, grad - t * g_start, check_finite=False)
        v, was_damped = _damped(ext, v, dv)
        damped += was_damped
        steps1 += 1
        if steps1 > config.max_steps:
            raise ConvergenceError("path-following phase 1 step budget exhausted", best=v)
    # phase 2 entry: t with decrement of t q + F at most target_decrement
    eq = np.zeros(P.n + 1)
    eq[-1] = 1.0
    eq_norm = math.sqrt(max(eq @ linalg.cho_solve(c, eq, check_finite=False), 1e-300))
    t = (config.target_decrement - lam_F) / eq_norm
    target = eps * eps / (3.0 * W)
    nu = ext.nu
    while (nu + math.sqrt(nu)) / t > target:
        t *= k2
        grad, H = ext.grad_hess(v)
        grad[-1] += t
        dv = -linalg.cho_solve(_factor(H), grad, check_finite=False)
        v, was_damped = _damped(ext, v, dv)
        damped += was_damped
        steps2 += 1
        if steps2 > config.max_steps:
            raise ConvergenceError("path-following phase 2 step budget exhausted", best=v)
    return PathResult(v[:-1], float(v[-1]), steps1, steps2, t, damped)


def path_following_solve(program: Union[QcqpInstance, SlackProgram, DiagQcqp], eps: float,
                         config: Optional[PathFollowConfig] = None, s_max: Optional[float] = None) -> SolveReport:
    """eps-solution: every row violated by at most eps, objective within eps of optimal."""
    config = config or PathFollowConfig()
    start = time.perf_counter()
    if isinstance(program, QcqpInstance):
        if program.n_arcs == 0:
            z = FlowPoint.zeros(0)
            g = residuals(program, z)
            return SolveReport(engine="pathfollow", point=z, objective=0.0, eps=eps,
                               max_residual=float(g.max(initial=-math.inf)))
        P = qcqp_as_diag(program)
    elif isinstance(program, SlackProgram):
        if s_max is None:
            s_max = program.start()[1]
        P = slack_as_diag(program, s_max)
    else:
        P = program
    W = P.bound_W()
    if eps < config.min_precision * W:
        raise NumericalError(f"eps={eps:.2e} is below what the path-following engine can resolve "
                             f"(W={W:.2e}); use the barrier engine")
    res = follow_path(P, eps, config, W)
    notes = [f"{res.damped} damped steps"] if res.damped else []
    if isinstance(program, QcqpInstance):
        z = FlowPoint.from_vector(res.w)
        obj, g = objective(program, z), residuals(program, z)
        return SolveReport(engine="pathfollow", point=z, objective=obj, eps=eps,
                           max_residual=float(g.max(initial=-math.inf)), t=res.t,
                           hardening=program.offset,
                           newton_steps={"phase1": res.steps1, "phase2": res.steps2},
                           wall_time=time.perf_counter() - start, notes=notes)
    if isinstance(program, SlackProgram):
        z = FlowPoint.from_vector(res.w[:-1])
        s = float(res.w[-1])
        g = program.residuals(z, s)
        return SolveReport(engine="pathfollow", point=z, objective=s, s=s, eps=eps,
                           max_residual=float(g.max(initial=-math.inf)), t=res.t, hardening=program.eps,
                           newton_steps={"phase1": res.steps1, "phase2": res.steps2},
                           wall_time=time.perf_counter() - start, notes=notes)
    # a bare program has no flow structure: x carries its variables
    g = P.rows(res.w)
    return SolveReport(engine="pathfollow", point=FlowPoint(res.w, np.zeros_like(res.w)), objective=P.f0(res.w),
                       eps=eps,
                       max_residual=float(g.max(initial=-math.inf)), t=res.t,
                       newton_steps={"phase1": res.steps1, "phase2": res.steps2},
                       wall_time=time.perf_counter() - start, notes=notes)
