"""From strictly feasible QCQP points back to waste-free dynamic flows."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .grid import Spgg, Upgg
from .pwfun import PiecewiseConstantFn, TimeGrid, integrate
from .qcqp import FlowPoint, QcqpInstance, objective, residuals
from .reduce import Reduction

WASTE_TOL = 1e-12


def gamma_inverse(rho, r, y):
    """Smaller root of ``rho x - r x^2 = y`` (``y / rho`` for linear arcs)."""
    rho, r, y = np.broadcast_arrays(np.asarray(rho, float), np.asarray(r, float), np.asarray(y, float))
    out = np.empty(rho.shape)
    lin = r == 0
    out[lin] = y[lin] / rho[lin]
    q = ~lin
    disc = np.maximum(rho[q] ** 2 - 4 * r[q] * y[q], 0.0)
    # rationalised form avoids cancellation for small r y
    out[q] = 2 * y[q] / (rho[q] + np.sqrt(disc))
    return out if out.ndim else float(out)


def invert_monotone(f: Callable[[float], float], y: float, hi: float, tol: float = 1e-14) -> float:
    """Bisection for increasing ``f`` on ``[0, hi]``; fallback for other concave losses."""
    lo = 0.0
    if y <= f(lo):
        return lo
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _gamma(inst, a, x):
    return inst.rho[a] * x - inst.r[a] * x * x


def _ginv(inst, a, y):
    return gamma_inverse(inst.rho[a], inst.r[a], max(y, 0.0))


def node_waste(inst: QcqpInstance, z: FlowPoint) -> np.ndarray:
    """``in - out - d`` per node (0 at the super-source)."""
    out_x = np.bincount(inst.tail, weights=z.x, minlength=inst.n_nodes)
    in_y = np.bincount(inst.head, weights=z.y, minlength=inst.n_nodes)
    d = np.zeros(inst.n_nodes)
    d[inst.sinks] = inst.demand
    w = in_y - out_x - d
    w[inst.source] = 0.0
    return w


def arc_waste(inst: QcqpInstance, z: FlowPoint) -> np.ndarray:
    """``x - gamma^-1(y)``: in-flow that produces no out-flow."""
    return z.x - gamma_inverse(inst.rho, inst.r, np.maximum(z.y, 0.0))


@dataclass
class RoundStats:
    events: int = 0
    arc_events: int = 0
    node_events: int = 0
    restarts: int = 0


def round_waste(inst: QcqpInstance, z: FlowPoint, tol: float = WASTE_TOL) -> tuple[FlowPoint, RoundStats]:
    """Remove all waste, never increasing any flow.

    Repeats a breadth-first search from the super-source over positive arcs.
    Each node records how much out-flow its tree path can still give up
    (``avail``); the first waste found is cut back along that path and the
    search restarts.
    """
    scale = max(1.0, float(inst.u.max(initial=0.0)))
    g = residuals(inst, z)
    if g.size and g.max() > 1e-9 * scale:
        raise ValueError(f"round_waste needs a feasible point (max residual {g.max():.3e})")
    x, y = z.x.copy(), z.y.copy()
    np.clip(x, 0.0, None, out=x)
    np.clip(y, 0.0, None, out=y)
    np.minimum(y, _gamma(inst, np.arange(inst.n_arcs), x), out=y)
    thr = tol * scale
    nA, nV = inst.n_arcs, inst.n_nodes
    limit = 2 * nA + nV
    out_arcs = [[] for _ in range(nV)]
    in_arcs = [[] for _ in range(nV)]
    for a in range(nA):
        out_arcs[int(inst.tail[a])].append(a)
        in_arcs[int(inst.head[a])].append(a)
    demand = np.zeros(nV)
    demand[inst.sinks] = inst.demand
    stats = RoundStats()

    def cut(parent, v, amount):
        # reduce the in-flow of v by ``amount`` and pass the x reduction upward
        while v != inst.source and amount > 0:
            p = parent[v]
            old = x[p]
            y[p] = max(y[p] - amount, 0.0)
            x[p] = min(old, _ginv(inst, p, y[p]))
            if x[p] <= thr * 1e-3:
                x[p] = y[p] = 0.0
            amount = old - x[p]
            v = int(inst.tail[p])

    while True:
        parent = np.full(nV, -1, dtype=np.int64)
        avail = np.zeros(nV)
        seen = np.zeros(nV, dtype=bool)
        seen[inst.source] = True
        avail[inst.source] = math.inf
        queue = deque([inst.source])
        event = None
        while queue and event is None:
            v = queue.popleft()
            if v != inst.source:
                w = sum(y[a] for a in in_arcs[v]) - sum(x[a] for a in out_arcs[v]) - demand[v]
                if w > thr:
                    delta = min(w, avail[v])
                    if delta > thr * 1e-3:
                        event = ("node", v, delta)
                        break
            for a in out_arcs[v]:
                if x[a] <= 0:
                    continue
                waste = x[a] - _ginv(inst, a, y[a])
                if waste > thr:
                    delta = min(waste, avail[v])
                    if delta > thr * 1e-3:
                        event = ("arc", a, delta)
                        break
                h = int(inst.head[a])
                if not seen[h]:
                    seen[h] = True
                    parent[h] = a
                    room = min(x[a], avail[v])
                    avail[h] = _gamma(inst, a, x[a]) - _gamma(inst, a, x[a] - room)
                    queue.append(h)
        if event is None:
            break
        stats.events += 1
        if stats.events > limit:
            raise RuntimeError(f"waste removal exceeded {limit} events")
        kind, where, delta = event
        if kind == "node":
            stats.node_events += 1
            cut(parent, where, delta)
        else:
            stats.arc_events += 1
            x[where] -= delta
            if x[where] <= thr * 1e-3:
                x[where] = y[where] = 0.0
            cut(parent, int(inst.tail[where]), delta)
        stats.restarts += 1
    return FlowPoint(x, y), stats


def antiparallel_pairs(inst: QcqpInstance) -> list[tuple[int, int]]:
    first = {}
    pairs = []
    for a in range(inst.n_arcs):
        key = (int(inst.tail[a]), int(inst.head[a]))
        rev = (key[1], key[0])
        if rev in first:
            pairs.append((first[rev], a))
        else:
            first.setdefault(key, a)
    return pairs


def merge_antiparallel(inst: QcqpInstance, z: FlowPoint,
                       pairs: Optional[list[tuple[int, int]]] = None) -> FlowPoint:
    """Cancel flow on antiparallel pairs; the arc with smaller out-flow goes to zero."""
    x, y = z.x.copy(), z.y.copy()
    for a, b in (antiparallel_pairs(inst) if pairs is None else pairs):
        if y[a] <= 0 and y[b] <= 0 and x[a] <= 0 and x[b] <= 0:
            continue
        lo, hi = sorted((a, b))
        small, big = (lo, hi) if y[lo] <= y[hi] else (hi, lo)
        if y[small] == 0 and x[small] == 0:
            continue
        x[big] = max(x[big] - y[small], 0.0)
        y[big] = _gamma(inst, big, x[big])
        x[small] = y[small] = 0.0
    return FlowPoint(x, y)


# ---- dynamic flows ------------------------------------------------------

@dataclass
class ArcFlow:
    edge: str
    direction: int
    x: float
    y: float


@dataclass
class IntervalFlow:
    start: float
    end: float
    arc_flows: list[ArcFlow] = field(default_factory=list)
    production: dict[str, float] = field(default_factory=dict)

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass
class DynamicFlow:
    intervals: list[IntervalFlow]
    objective: float = 0.0

    @property
    def grid(self) -> TimeGrid:
        if not self.intervals:
            raise ValueError("empty flow has no grid")
        return TimeGrid((self.intervals[0].start, *(iv.end for iv in self.intervals)))

    def production_schedule(self) -> dict[str, list[float]]:
        names = sorted({v for iv in self.intervals for v in iv.production})
        return {v: [iv.production.get(v, 0.0) for iv in self.intervals] for v in names}

    def is_empty(self) -> bool:
        return all(not iv.arc_flows and not any(iv.production.values()) for iv in self.intervals)


def _rate_cost(pi: PiecewiseConstantFn, rate: float) -> float:
    return integrate(pi, 0.0, min(max(rate, 0.0), pi.domain_end))


def dynamic_cost(instance: Union[Upgg, Spgg], flow: DynamicFlow) -> float:
    """Production cost of a dynamic flow under the instance's marginal cost curves."""
    total = 0.0
    if isinstance(instance, Upgg):
        for n in instance.nodes:
            if n.rate_cap is not None:
                total += sum(iv.length * _rate_cost(n.pi, iv.production.get(n.id, 0.0)) for iv in flow.intervals)
            elif n.budget is not None:
                cum = sum(iv.length * iv.production.get(n.id, 0.0) for iv in flow.intervals)
                total += _rate_cost(n.pi, cum)
    else:
        for s, src in instance.sources.items():
            cum = sum(iv.length * iv.production.get(s, 0.0) for iv in flow.intervals)
            total += _rate_cost(src.pi, cum)
    return total


def _network(instance: Union[Upgg, Spgg]):
    """(lines by id as (tail, head, capacity, r) per direction, demand fns, supply limits)."""
    if isinstance(instance, Upgg):
        lines = {}
        for e in instance.edges:
            lines[(e.id, 1)] = (e.u, e.v, e.capacity, e.resistance)
            lines[(e.id, -1)] = (e.v, e.u, e.capacity, e.resistance)
        demand = {n.id: n.demand for n in instance.nodes}
        rate = {n.id: n.rate_cap for n in instance.nodes if n.rate_cap is not None}
        budget = {n.id: n.budget for n in instance.nodes if n.budget is not None}
        return lines, demand, rate, budget
    lines = {(a.id, 1): (a.tail, a.head, a.capacity, a.resistance) for a in instance.arcs}
    demand = dict(instance.sinks)
    budget = {s: src.budget for s, src in instance.sources.items()}
    return lines, demand, {}, budget


def check_dynamic_flow(instance: Union[Upgg, Spgg], flow: DynamicFlow, tol: float = 1e-9) -> list[str]:
    """Violations of the original dynamic problem; empty when the flow is feasible."""
    lines, demand, rate, budget = _network(instance)
    problems = []
    nodes = set(demand) | {v for t, h, *_ in lines.values() for v in (t, h)} | set(budget)
    cum = {v: 0.0 for v in budget}
    for i, iv in enumerate(flow.intervals):
        mid = 0.5 * (iv.start + iv.end)
        bal = {v: 0.0 for v in nodes}
        used = {}
        for af in iv.arc_flows:
            key = (af.edge, af.direction)
            if key not in lines:
                problems.append(f"interval {i}: unknown line {af.edge} direction {af.direction}")
                continue
            t, h, cap, r = lines[key]
            if af.x < -tol or af.x > cap + tol:
                problems.append(f"interval {i}: {af.edge} flow {af.x:.6g} outside [0, {cap}]")
            if abs(af.y - (af.x - r * af.x * af.x)) > tol * max(1.0, cap):
                problems.append(f"interval {i}: {af.edge} out-flow {af.y:.12g} != loss law")
            if af.x > tol:
                if used.get(af.edge, 0) not in (0, af.direction):
                    problems.append(f"interval {i}: both directions of {af.edge} carry flow")
                used[af.edge] = af.direction
            bal[t] -= af.x
            bal[h] += af.y
        for v, p in iv.production.items():
            if p < -tol:
                problems.append(f"interval {i}: negative production at {v}")
            if v not in rate and v not in budget and p > tol:
                problems.append(f"interval {i}: production at {v}, which has no supply")
            if v in rate and p > rate[v] + tol:
                problems.append(f"interval {i}: production {p:.6g} at {v} exceeds rate cap {rate[v]}")
            if v in budget:
                cum[v] += iv.length * p
            bal[v] = bal.get(v, 0.0) + p
        for v in nodes:
            need = demand[v](mid) if v in demand else 0.0
            if bal[v] < need - tol * max(1.0, need):
                problems.append(f"interval {i}: node {v} receives {bal[v]:.9g} < demand {need:.9g}")
    for v, b in budget.items():
        if cum[v] > b + tol * max(1.0, b):
            problems.append(f"cumulative production {cum[v]:.9g} at {v} exceeds budget {b}")
    return problems


def to_dynamic_flow(red: Reduction, z: FlowPoint, instance: Union[Upgg, Spgg, None] = None,
                    merge: bool = True, rounding: bool = True) -> tuple[DynamicFlow, FlowPoint, Optional[RoundStats]]:
    """Merge antiparallel flows, remove waste and read the result per interval.

    Returns the dynamic flow, the processed static point and the rounding stats.
    """
    inst, prov = red.qcqp, red.provenance
    zz = z.copy()
    if merge:
        zz = merge_antiparallel(inst, zz, _grid_pairs(prov))
    stats = None
    if rounding:
        zz, stats = round_waste(inst, zz)
    intervals = [IntervalFlow(a, b) for a, b in red.grid.intervals]
    for a, tag in enumerate(prov.arc_tags):
        if tag.kind == "grid-edge":
            if zz.x[a] > 0 or zz.y[a] > 0:
                intervals[tag.interval].arc_flows.append(
                    ArcFlow(tag.ref, tag.direction, float(zz.x[a]), float(zz.y[a])))
        elif tag.kind == "delegation":
            prod = intervals[tag.interval].production
            prod[tag.ref] = prod.get(tag.ref, 0.0) + float(zz.y[a])
    flow = DynamicFlow(intervals)
    if instance is not None:
        flow.objective = dynamic_cost(instance, flow)
    else:
        flow.objective = objective(inst, zz)
    return flow, zz, stats


def _grid_pairs(prov) -> list[tuple[int, int]]:
    idx = {}
    for a, tag in enumerate(prov.arc_tags):
        if tag.kind == "grid-edge":
            idx[(tag.ref, tag.direction, tag.interval)] = a
    return [(a, idx[(ref, -1, i)]) for (ref, d, i), a in idx.items() if d == 1 and (ref, -1, i) in idx]
