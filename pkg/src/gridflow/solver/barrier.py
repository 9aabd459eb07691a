"""Log-barrier interior-point engine specialised to the flow QCQP.

The Newton system has a 2x2 block per arc (loss, capacity and sign rows) plus one
rank-one term per node row. Eliminating the arc blocks leaves a sparse
node-by-node system, so a step costs one factorisation of size ``|V| - 1``
instead of ``2|A|``. The slack variable of the phase-I program is a dense
border handled by a second right-hand side.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from ..qcqp import FlowPoint, QcqpInstance, SlackProgram, derivatives, objective, residuals
from .config import (BarrierConfig, InfeasibleError, NotStrictlyFeasibleError, NumericalError,
                     SolveReport)
from .newton import newton_center

DENSE_LIMIT = 400
# relative residual above which a reduced Newton step is recomputed in full
STEP_CHECK = 1e-4


class _Factor:
    def __init__(self, K: sparse.spmatrix, reg: float):
        n = K.shape[0]
        self.dense = n <= DENSE_LIMIT
        if self.dense:
            Kd = K.toarray()
            try:
                self.f = linalg.cho_factor(Kd, check_finite=False)
            except linalg.LinAlgError:
                shift = reg * (1.0 + np.abs(Kd).sum(axis=1).max())
                try:
                    self.f = linalg.cho_factor(Kd + shift * np.eye(n), check_finite=False)
                except linalg.LinAlgError as exc:
                    raise NumericalError("reduced Newton system not positive definite") from exc
        else:
            K = K.tocsc()
            try:
                self.f = splinalg.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                       options={"SymmetricMode": True})
            except RuntimeError:
                shift = reg * (1.0 + abs(K).sum(axis=1).max())
                try:
                    self.f = splinalg.splu((K + shift * sparse.eye(n)).tocsc(), permc_spec="MMD_AT_PLUS_A",
                                           diag_pivot_thresh=0.0, options={"SymmetricMode": True})
                except RuntimeError as exc:
                    raise NumericalError("reduced Newton system is singular") from exc

    def solve(self, rhs):
        if self.dense:
            return linalg.cho_solve(self.f, rhs, check_finite=False)
        return self.f.solve(rhs)


class FlowBarrier:
    """``t f0(w) - sum log(-g_i(w))``.

    ``w = [x, y]`` for the QCQP itself, ``w = [x, y, s]`` for the slack program
    (objective ``s``, rows ``g_i + shift - s``).
    """

    def __init__(self, inst: QcqpInstance, shift: float = 0.0, slack: bool = False,
                 t: float = 1.0, reg: float = 1e-12):
        self.inst = inst
        self.shift = float(shift)
        self.slack = slack
        self.t = float(t)
        self.reg = reg
        nA = inst.n_arcs
        self.nA = nA
        self.nR = inst.n_nodes - 1
        self.m = 3 * nA + self.nR
        row = inst.node_row
        self.tail_row = row[inst.tail]
        self.head_row = row[inst.head]
        self.has_tail = self.tail_row >= 0
        self.ti = np.flatnonzero(self.has_tail)
        self.row_nodes = np.concatenate([inst.transit, inst.sinks])
        self.const = np.concatenate([
            np.zeros(nA), -inst.u, np.zeros(nA),
            np.zeros(inst.transit.size), inst.demand,
        ]) + inst.offset + self.shift
        # sparsity pattern of the reduced node system
        tr, hr = self.tail_row[self.ti], self.head_row[self.ti]
        self._k_rows = np.concatenate([np.arange(self.nR), tr, self.head_row, tr, hr])
        self._k_cols = np.concatenate([np.arange(self.nR), tr, self.head_row, hr, tr])

    # ---- pieces -------------------------------------------------------
    def split(self, w):
        nA = self.nA
        s = w[2 * nA] if self.slack else 0.0
        return w[:nA], w[nA:2 * nA], s

    def _node_lin(self, x, y):
        inst = self.inst
        out_x = np.bincount(inst.tail, weights=x, minlength=inst.n_nodes)
        in_y = np.bincount(inst.head, weights=y, minlength=inst.n_nodes)
        return (out_x - in_y)[self.row_nodes]

    def residuals(self, w) -> np.ndarray:
        x, y, s = self.split(w)
        inst = self.inst
        g = np.concatenate([inst.r * x * x - inst.rho * x + y, x, -y, self._node_lin(x, y)])
        return g + self.const - s

    def objective(self, w) -> float:
        x, _, s = self.split(w)
        if self.slack:
            return float(s)
        return float(self.inst.c_lin @ x + self.inst.c_quad @ (x * x))

    def value(self, w) -> float:
        g = self.residuals(w)
        if np.any(g >= 0):
            return math.inf
        return self.t * self.objective(w) - float(np.sum(np.log(-g)))

    def _directional(self, w, dw):
        """Linear and quadratic coefficients of the rows along ``dw``."""
        x, y, s = self.split(w)
        dx, dy, ds = self.split(dw)
        inst = self.inst
        lin = np.concatenate([(2 * inst.r * x - inst.rho) * dx + dy, dx, -dy, self._node_lin(dx, dy)]) - ds
        quad = inst.r * dx * dx
        return lin, quad

    def change(self, w, dw, alpha) -> float:
        g = self.residuals(w)
        lin, quad = self._directional(w, dw)
        dg = alpha * lin
        dg[:self.nA] += alpha * alpha * quad
        gn = g + dg
        if np.any(gn >= 0):
            return math.inf
        x, _, _ = self.split(w)
        dx, _, ds = self.split(dw)
        if self.slack:
            dobj = alpha * ds
        else:
            inst = self.inst
            dobj = alpha * float(inst.c_lin @ dx + inst.c_quad @ (2 * x * dx + alpha * dx * dx))
        ratio = dg / g
        if np.any(ratio <= -1.0):
            return math.inf
        return self.t * dobj - float(np.sum(np.log1p(ratio)))

    def max_step(self, w, dw) -> float:
        g = self.residuals(w)
        lin, quad = self._directional(w, dw)
        best = math.inf
        pos = lin > 0
        pos[:self.nA] = False
        if pos.any():
            best = float(np.min(-g[pos] / lin[pos]))
        gl, bl, cl = g[:self.nA], lin[:self.nA], quad
        with np.errstate(divide="ignore", invalid="ignore"):
            disc = np.sqrt(bl * bl - 4 * cl * gl)
            root = np.where(bl > 0, -2 * gl / (bl + disc), (disc - bl) / (2 * cl))
        root = np.where((cl > 0) | (bl > 0), root, math.inf)
        if root.size:
            best = min(best, float(np.min(root)))
        return best

    # ---- Newton -------------------------------------------------------
    # Arc blocks use the coordinates (dx, dl), dl = a dx + dy being the linearised
    # change of the loss row. The loss row's weight then sits alone on a diagonal
    # and the gradient along dx carries no loss term, so a nearly tight loss row
    # cannot cancel the step away in the back substitution.
    def _blocks(self, w):
        inst = self.inst
        x, _, _ = self.split(w)
        g = self.residuals(w)
        if np.any(g >= 0):
            raise NumericalError("Newton step requested outside the barrier domain")
        om = -1.0 / g
        nA = self.nA
        oL, oC, oN, oR = om[:nA], om[nA:2 * nA], om[2 * nA:3 * nA], om[3 * nA:]
        a = 2 * inst.r * x - inst.rho
        oRh = oR[self.head_row]
        gl = oL - oN - oRh
        gx = oC + a * (oN + oRh)
        gx[self.ti] += oR[self.tail_row[self.ti]]
        P = 2 * inst.r * oL + oC * oC
        if not self.slack:
            gx += self.t * (inst.c_lin + 2 * inst.c_quad * x)
            P = P + 2 * self.t * inst.c_quad
        oL2, oN2 = oL * oL, oN * oN
        det = P * (oL2 + oN2) + a * a * oN2 * oL2
        blk = _ArcBlocks(a, (oL2 + oN2) / det, a * oN2 / det, (P + a * a * oN2) / det,
                         (a * a * oL2 + P) / det, a * oL2 / det)
        return om, gx, gl, blk

    def _factor(self, om, blk):
        gR = -1.0 / om[3 * self.nA:]
        ti = self.ti
        vals = np.concatenate([gR * gR, blk.xx[ti], blk.hh, blk.th[ti], blk.th[ti]])
        K = sparse.coo_matrix((vals, (self._k_rows, self._k_cols)), shape=(self.nR, self.nR))
        return _Factor(K, self.reg)

    def _solve_zz(self, fac, blk, rx, rl):
        """Solve the arc-block plus node-row system in (dx, dl) coordinates."""
        ti = self.ti
        if rx.ndim == 1:
            ux = blk.xx * rx + blk.xl * rl
            ul = blk.xl * rx + blk.ll * rl
            bu = np.bincount(self.head_row, weights=blk.a * ux - ul, minlength=self.nR)
            bu += np.bincount(self.tail_row[ti], weights=ux[ti], minlength=self.nR)
            lam = fac.solve(bu)
            lh = lam[self.head_row]
            bx = blk.a * lh
            bx[ti] += lam[self.tail_row[ti]]
            return ux - (blk.xx * bx - blk.xl * lh), ul - (blk.xl * bx - blk.ll * lh)
        cols = [self._solve_zz(fac, blk, rx[:, j], rl[:, j]) for j in range(rx.shape[1])]
        return np.column_stack([c[0] for c in cols]), np.column_stack([c[1] for c in cols])

    def newton(self, w):
        om, gx, gl, blk = self._blocks(w)
        fac = self._factor(om, blk)
        nA = self.nA
        a = blk.a
        if not self.slack:
            vx, vl = self._solve_zz(fac, blk, -gx, -gl)
            dw = np.concatenate([vx, vl - a * vx])
            return self._checked(w, om, a, dw, np.concatenate([gx + a * gl, gl]))
        om2 = om * om
        oL2, oC2, oN2, oR2 = om2[:nA], om2[nA:2 * nA], om2[2 * nA:3 * nA], om2[3 * nA:]
        oR2h = oR2[self.head_row]
        hx = -oC2 - a * (oN2 + oR2h)
        hx[self.ti] -= oR2[self.tail_row[self.ti]]
        hl = -oL2 + oN2 + oR2h
        eta = float(om2.sum())
        gs = self.t - float(om.sum())
        px, pl = self._solve_zz(fac, blk, np.column_stack([-gx, hx]), np.column_stack([-gl, hl]))
        p_x, q_x, p_l, q_l = px[:, 0], px[:, 1], pl[:, 0], pl[:, 1]
        schur = eta - (hx @ q_x + hl @ q_l)
        if not schur > 0:
            schur = max(schur, self.reg * (1.0 + eta))
        ds = (-gs - (hx @ p_x + hl @ p_l)) / schur
        vx, vl = p_x - q_x * ds, p_l - q_l * ds
        dw = np.concatenate([vx, vl - a * vx, [ds]])
        return self._checked(w, om, a, dw, np.concatenate([gx + a * gl, gl, [gs]]))

    # The elimination above is fast but not backward stable: with a tight node
    # row next to a weakly held arc it can cancel every digit of the step. The
    # residual of the full system is cheap to form, so check it and fall back to
    # a sparse factorisation of the full Hessian when it is off.
    def _jt(self, a, v):
        nA = self.nA
        vL, vC, vN, vR = v[:nA], v[nA:2 * nA], v[2 * nA:3 * nA], v[3 * nA:]
        tx = a * vL + vC
        tx[self.ti] += vR[self.tail_row[self.ti]]
        ty = vL - vN - vR[self.head_row]
        out = [tx, ty, [-float(v.sum())]] if self.slack else [tx, ty]
        return np.concatenate(out)

    def _curvature(self, w, om):
        out = np.zeros(w.size)
        out[:self.nA] = 2 * self.inst.r * om[:self.nA]
        if not self.slack:
            out[:self.nA] += 2 * self.t * self.inst.c_quad
        return out

    def _checked(self, w, om, a, dw, grad):
        lin, _ = self._directional(w, dw)
        h_dw = self._jt(a, om * om * lin) + self._curvature(w, om) * dw
        lam_sq = float(-(grad @ dw))
        miss = float(np.linalg.norm(h_dw + grad))
        # a sound step has dw.H.dw == -g.dw > 0; huge steps in near-null directions can pass the residual test alone
        if (lam_sq > 0 and abs(float(dw @ h_dw) - lam_sq) <= STEP_CHECK * lam_sq
                and miss <= STEP_CHECK * (float(np.linalg.norm(h_dw)) + float(np.linalg.norm(grad)))):
            return dw, lam_sq
        return self._full_step(w, om, a, grad)

    def _full_step(self, w, om, a, grad):
        H = self._hessian(w, om, a)
        # barrier curvature spans many orders of magnitude; Jacobi scaling keeps the factor usable
        d = 1.0 / np.sqrt(np.maximum(H.diagonal(), np.finfo(float).tiny))
        D = sparse.diags(d)
        fac = _Factor((D @ H @ D).tocsc() if H.shape[0] > DENSE_LIMIT else D @ H @ D, self.reg)
        dw = -d * fac.solve(d * grad)
        return dw, float(-(grad @ dw))

    def _hessian(self, w, om, a):
        inst = self.inst
        nA, n = self.nA, w.size
        z = FlowPoint(w[:nA], w[nA:2 * nA])
        J = derivatives(inst, z).jac
        if self.slack:
            J = sparse.hstack([J, sparse.csr_matrix(-np.ones((J.shape[0], 1)))], format="csr")
        H = (J.T @ sparse.diags(om * om) @ J).tocsr() + sparse.diags(self._curvature(w, om))
        return H.tocsc() if n > DENSE_LIMIT else H

    def gradient(self, w) -> np.ndarray:
        """Full gradient in ``w`` coordinates (used by tests against finite differences)."""
        om, gx, gl, blk = self._blocks(w)
        g = np.concatenate([gx + blk.a * gl, gl])
        if self.slack:
            return np.concatenate([g, [self.t - float(om.sum())]])
        return g


@dataclass
class _ArcBlocks:
    """Per-arc inverse of the 2x2 block in (dx, dl) coordinates, plus the node-row products."""

    a: np.ndarray
    xx: np.ndarray
    xl: np.ndarray
    ll: np.ndarray
    hh: np.ndarray  # head row with itself
    th: np.ndarray  # tail row with head row


def extract_duals(inst: QcqpInstance, z: FlowPoint, t: float) -> tuple[np.ndarray, float]:
    """Barrier duals ``lambda_i = 1 / (t (-g_i))`` and the gap ``m / t``."""
    g = residuals(inst, z)
    if np.any(g >= 0):
        raise ValueError("duals need a strictly feasible point")
    return 1.0 / (t * -g), g.size / t


# ---- phases -------------------------------------------------------------

@dataclass
class SlackOutcome:
    status: str  # "feasible" | "infeasible" | "undecided"
    w: np.ndarray
    t: float
    steps: int
    lower_bound: float = -math.inf
    gap: float = math.inf

    @property
    def s(self) -> float:
        return float(self.w[-1])


def slack_phase(inst: QcqpInstance, shift: float, config: BarrierConfig, precision: float,
                warm: Optional[tuple[np.ndarray, float]] = None, stop_at_negative: bool = True) -> SlackOutcome:
    """Minimise the slack program of ``inst`` hardened by ``shift``.

    Ends as soon as an iterate has ``s < 0`` (``feasible``), when the lower
    bound ``s - m/t`` exceeds ``shift`` (``infeasible``: the unshifted slack
    optimum is positive), or when the gap falls below ``precision``.
    """
    fb = FlowBarrier(inst, shift=shift, slack=True, reg=config.reg)
    if warm is None:
        z0, s0 = SlackProgram(inst, shift).start()
        w = np.concatenate([z0.vector(), [s0]])
        t = config.t0
    else:
        w, t = warm
        w = w.copy()
        # a smaller shift only makes the warm point more interior
        if np.any(fb.residuals(w) >= 0):
            w[-1] = float(np.max(fb.residuals(w) + w[-1])) + 1.0
    mu = config.mu_for(fb.m)
    steps = 0
    stop = (lambda v: v[-1] < 0) if stop_at_negative else None
    for _ in range(config.max_outer):
        fb.t = t
        res = newton_center(fb, w, config, stop=stop)
        w, steps = res.w, steps + res.steps
        if stop_at_negative and w[-1] < 0:
            return SlackOutcome("feasible", w, t, steps)
        gap = fb.m / t
        lb = w[-1] - gap
        if stop_at_negative and lb > shift:
            return SlackOutcome("infeasible", w, t, steps, lower_bound=lb - shift, gap=gap)
        if gap <= precision:
            return SlackOutcome("undecided", w, t, steps, lower_bound=lb, gap=gap)
        t *= mu
    raise NumericalError("slack phase exceeded the outer iteration limit")


@dataclass
class CentralResult:
    z: FlowPoint
    t: float
    steps: int
    gap: float
    history: list[tuple[float, float]] = field(default_factory=list)


def central_phase(inst: QcqpInstance, z0: FlowPoint, eps: float, config: BarrierConfig) -> CentralResult:
    """Follow the central path from a strictly feasible point until ``m/t <= eps``."""
    fb = FlowBarrier(inst, reg=config.reg)
    w = z0.vector()
    if np.any(fb.residuals(w) >= 0):
        raise ValueError("central phase needs a strictly feasible start")
    t = config.t0
    mu = config.mu_for(fb.m)
    steps = 0
    history = []
    for _ in range(config.max_outer):
        fb.t = t
        res = newton_center(fb, w, config)
        w, steps = res.w, steps + res.steps
        history.append((t, fb.objective(w)))
        if fb.m / t <= eps:
            # a few extra quadratic steps make the barrier duals accurate
            res = newton_center(fb, w, replace(config, newton_tol=config.final_newton_tol))
            w, steps = res.w, steps + res.steps
            return CentralResult(FlowPoint.from_vector(w), t, steps, fb.m / t, history)
        t *= mu
    raise NumericalError("central phase exceeded the outer iteration limit")


def _empty_report(inst, eps, engine, start) -> SolveReport:
    z = FlowPoint.zeros(inst.n_arcs)
    g = residuals(inst, z)
    return SolveReport(engine=engine, point=z, objective=0.0, eps=eps,
                       max_residual=float(g.max(initial=-math.inf)), duals=np.zeros(g.size),
                       gap=0.0, bound=0.0, wall_time=time.perf_counter() - start)


def precision_floor(inst: QcqpInstance, config: BarrierConfig) -> float:
    from ..qcqp import constants
    return config.precision_floor * max(1.0, constants(inst).F)


def barrier_solve(program: Union[QcqpInstance, SlackProgram], eps: float,
                  config: Optional[BarrierConfig] = None) -> SolveReport:
    """Phase I on the slack program, then the central path to gap ``eps``.

    Raises :class:`InfeasibleError` when the slack optimum is certified
    positive and :class:`NotStrictlyFeasibleError` when no strictly feasible
    point shows up before the gap reaches the precision floor.
    """
    config = config or BarrierConfig()
    if eps <= 0:
        raise ValueError("eps must be positive")
    start = time.perf_counter()
    if isinstance(program, SlackProgram):
        inst = program.base
        out = slack_phase(inst, program.eps, config, eps, stop_at_negative=False)
        z = FlowPoint.from_vector(out.w[:-1])
        fb = FlowBarrier(inst, shift=program.eps, slack=True, t=out.t)
        g = fb.residuals(out.w)
        return SolveReport(engine="barrier", point=z, objective=out.s, eps=eps, s=out.s,
                           max_residual=float(g.max(initial=-math.inf)), duals=1.0 / (out.t * -g),
                           t=out.t, gap=out.gap, bound=out.gap, hardening=program.eps,
                           newton_steps={"slack": out.steps}, wall_time=time.perf_counter() - start)
    inst = program
    if inst.n_arcs == 0 and inst.sinks.size == 0:
        return _empty_report(inst, eps, "barrier", start)
    floor = precision_floor(inst, config)
    ph1 = slack_phase(inst, 0.0, config, floor)
    if ph1.status == "infeasible":
        raise InfeasibleError(ph1.lower_bound)
    if ph1.status == "undecided":
        raise NotStrictlyFeasibleError(
            f"no strictly feasible point found (slack optimum ~ {ph1.s:.3e}, gap {ph1.gap:.1e})")
    z0 = FlowPoint.from_vector(ph1.w[:-1])
    cen = central_phase(inst, z0, eps, config)
    obj, g = objective(inst, cen.z), residuals(inst, cen.z)
    return SolveReport(engine="barrier", point=cen.z, objective=obj, eps=eps,
                       max_residual=float(g.max(initial=-math.inf)), duals=1.0 / (cen.t * -g),
                       t=cen.t, gap=cen.gap, bound=cen.gap, hardening=inst.offset,
                       newton_steps={"phase1": ph1.steps, "phase2": cen.steps},
                       history=cen.history, wall_time=time.perf_counter() - start)
