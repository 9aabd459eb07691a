"""Instance model: undirected grids (UPGG) and their simplified directed form (SPGG)."""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Optional, Union

from .pwfun import PiecewiseConstantFn, integrate

HORIZON_TOL = 1e-12


@dataclass(frozen=True)
class GridNode:
    """A bus. ``rate_cap`` and ``budget`` are mutually exclusive supply limits;
    ``pi`` is the marginal cost over production rate (rate-capped) or over
    cumulative production (budget-capped)."""

    id: str
    demand: PiecewiseConstantFn
    rate_cap: Optional[float] = None
    budget: Optional[float] = None
    pi: Optional[PiecewiseConstantFn] = None

    @property
    def supply_kind(self) -> str:
        if self.rate_cap is not None:
            return "rate"
        if self.budget is not None:
            return "cumulative"
        return "none"


@dataclass(frozen=True)
class Edge:
    id: str
    u: str
    v: str
    capacity: float
    resistance: float = 0.0


@dataclass(frozen=True)
class Upgg:
    nodes: tuple[GridNode, ...]
    edges: tuple[Edge, ...]
    horizon: float

    def node(self, node_id: str) -> GridNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def edge(self, edge_id: str) -> Edge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)


@dataclass(frozen=True)
class Arc:
    id: str
    tail: str
    head: str
    capacity: float
    resistance: float = 0.0


@dataclass(frozen=True)
class Source:
    """Budget-capped producer; ``pi`` is defined on ``[0, budget]``."""

    budget: float
    pi: PiecewiseConstantFn


@dataclass(frozen=True)
class Spgg:
    nodes: tuple[str, ...]
    arcs: tuple[Arc, ...]
    sources: dict[str, Source]
    sinks: dict[str, PiecewiseConstantFn]
    horizon: float

    def out_arcs(self) -> dict[str, list[Arc]]:
        out = defaultdict(list)
        for a in self.arcs:
            out[a.tail].append(a)
        return out

    def in_arcs(self) -> dict[str, list[Arc]]:
        inn = defaultdict(list)
        for a in self.arcs:
            inn[a.head].append(a)
        return inn


GridInstance = Union[Upgg, Spgg]


@dataclass(frozen=True)
class Violation:
    where: str
    rule: str
    message: str

    def __str__(self):
        return f"{self.where}: [{self.rule}] {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, where: str, rule: str, message: str) -> None:
        self.violations.append(Violation(where, rule, message))

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def __str__(self):
        return "OK" if self.ok else "\n".join(map(str, self.violations))


def _check_line(rep: ValidationReport, where: str, capacity: float, resistance: float) -> None:
    if not (math.isfinite(capacity) and capacity > 0):
        rep.add(where, "capacity > 0", f"capacity {capacity} must be positive and finite")
    if not (math.isfinite(resistance) and resistance >= 0):
        rep.add(where, "resistance >= 0", f"resistance {resistance} must be non-negative")
    elif math.isfinite(capacity) and 2 * resistance * capacity >= 1:
        rep.add(where, "2ru < 1", f"2*r*u = {2 * resistance * capacity:g} >= 1, losses not increasing")


def _check_pi(rep: ValidationReport, where: str, pi: PiecewiseConstantFn, limit: float) -> None:
    if any(v <= 0 for v in pi.values):
        rep.add(where, "pi positive", f"marginal costs must be positive: {pi.values}")
    if not pi.is_non_decreasing():
        rep.add(where, "pi non-decreasing", f"marginal costs must be non-decreasing: {pi.values}")
    if abs(pi.domain_end - limit) > HORIZON_TOL * max(1.0, limit):
        rep.add(where, "pi domain", f"pi defined on [0, {pi.domain_end}] but supply limit is {limit}")


def _validate_upgg(g: Upgg, rep: ValidationReport) -> None:
    if not (g.horizon > 0 and math.isfinite(g.horizon)):
        rep.add("instance", "horizon > 0", f"horizon {g.horizon} must be positive")
    ids = [n.id for n in g.nodes]
    if len(set(ids)) != len(ids):
        rep.add("instance", "unique node ids", "duplicate node ids")
    known = set(ids)
    for n in g.nodes:
        where = f"node {n.id}"
        if abs(n.demand.domain_end - g.horizon) > HORIZON_TOL * max(1.0, g.horizon):
            rep.add(where, "demand horizon", f"demand defined on [0, {n.demand.domain_end}], horizon is {g.horizon}")
        if n.rate_cap is not None and n.budget is not None:
            rep.add(where, "rate xor cumulative", "node has both a rate cap and a cumulative budget")
            continue
        limit = n.rate_cap if n.rate_cap is not None else n.budget
        if limit is None:
            if n.pi is not None:
                rep.add(where, "pi without supply", "cost curve given for a node without supply")
            continue
        if not (limit > 0 and math.isfinite(limit)):
            rep.add(where, "supply > 0", f"supply limit {limit} must be positive and finite")
        if n.pi is None:
            rep.add(where, "pi required", "supplier without a marginal cost curve")
        else:
            _check_pi(rep, where, n.pi, limit)
    seen = set()
    eids = set()
    for e in g.edges:
        where = f"edge {e.id}"
        if e.id in eids:
            rep.add(where, "unique edge ids", "duplicate edge id")
        eids.add(e.id)
        if e.u not in known or e.v not in known:
            rep.add(where, "endpoints exist", f"unknown endpoint in ({e.u}, {e.v})")
        if e.u == e.v:
            rep.add(where, "simple graph", "self-loop")
        key = frozenset((e.u, e.v))
        if key in seen:
            rep.add(where, "simple graph", f"parallel edge between {e.u} and {e.v}")
        seen.add(key)
        _check_line(rep, where, e.capacity, e.resistance)


def _validate_spgg(g: Spgg, rep: ValidationReport) -> None:
    if not (g.horizon > 0 and math.isfinite(g.horizon)):
        rep.add("instance", "horizon > 0", f"horizon {g.horizon} must be positive")
    known = set(g.nodes)
    if len(known) != len(g.nodes):
        rep.add("instance", "unique node ids", "duplicate node ids")
    both = set(g.sources) & set(g.sinks)
    for v in sorted(both):
        rep.add(f"node {v}", "sources and sinks disjoint", "node is both a source and a sink")
    for v in list(g.sources) + list(g.sinks):
        if v not in known:
            rep.add(f"node {v}", "endpoints exist", "source/sink is not a node")
    for s, src in g.sources.items():
        if not (src.budget > 0 and math.isfinite(src.budget)):
            rep.add(f"node {s}", "supply > 0", f"budget {src.budget} must be positive and finite")
        _check_pi(rep, f"node {s}", src.pi, src.budget)
    for d, dem in g.sinks.items():
        if abs(dem.domain_end - g.horizon) > HORIZON_TOL * max(1.0, g.horizon):
            rep.add(f"node {d}", "demand horizon", f"demand defined on [0, {dem.domain_end}], horizon is {g.horizon}")
    for a in g.arcs:
        where = f"arc {a.id}"
        if a.tail not in known or a.head not in known:
            rep.add(where, "endpoints exist", f"unknown endpoint in ({a.tail}, {a.head})")
        if a.head in g.sources:
            rep.add(where, "sources have no in-arcs", f"arc enters source {a.head}")
        if a.tail in g.sinks:
            rep.add(where, "sinks have no out-arcs", f"arc leaves sink {a.tail}")
        _check_line(rep, where, a.capacity, a.resistance)
    reach = forward_reachable(g.arcs, g.sources)
    for v in g.nodes:
        if v not in reach:
            rep.add(f"node {v}", "reachable from sources", "node not reachable from any source")


def validate(instance: GridInstance) -> ValidationReport:
    rep = ValidationReport()
    if isinstance(instance, Upgg):
        _validate_upgg(instance, rep)
    elif isinstance(instance, Spgg):
        _validate_spgg(instance, rep)
    else:
        raise TypeError(f"cannot validate {type(instance).__name__}")
    return rep


def forward_reachable(arcs, starts) -> set[str]:
    out = defaultdict(list)
    for a in arcs:
        out[a.tail].append(a.head)
    seen = set(starts)
    queue = deque(seen)
    while queue:
        v = queue.popleft()
        for w in out[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def backward_reachable(arcs, ends) -> set[str]:
    rev = [Arc(a.id, a.head, a.tail, a.capacity, a.resistance) for a in arcs]
    return forward_reachable(rev, ends)


def trivial_self_supply_check(g: Upgg) -> bool:
    """True iff every node can cover its own demand with its own supply."""
    for n in g.nodes:
        peak = n.demand.max_value()
        if peak == 0:
            continue
        if n.rate_cap is not None:
            if n.rate_cap < peak:
                return False
        elif n.budget is not None:
            need = integrate(n.demand, 0.0, n.demand.domain_end)
            if n.budget < need or (n.pi is not None and n.pi.domain_end < need):
                return False
        else:
            return False
    return True
