"""Reductions from grid instances to the static QCQP.

``simplify_constant`` turns an undirected grid into a directed one with dedicated
source and sink nodes, ``time_expand`` copies it once per demand interval behind
a super-source, and ``build_qcqp`` chains the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .grid import Arc, Source, Spgg, Upgg, backward_reachable, forward_reachable, validate
from .pwfun import PiecewiseConstantFn, TimeGrid, common_refinement
from .qcqp import QcqpInstance

SUPER_SOURCE = "s*"

ARC_KINDS = ("grid-edge", "production", "delegation", "node-sink", "node-source")
NODE_KINDS = ("grid", "source", "sink", "piece", "super-source")


class ReductionError(ValueError):
    pass


@dataclass(frozen=True)
class Tag:
    """Where a reduced node or arc came from.

    ``ref`` is the edge id for grid edges, otherwise the node id of the grid
    node (or source) involved. ``direction`` is +1 for ``u -> v`` of an edge.
    """

    kind: str
    ref: str = ""
    direction: int = 0
    piece: int = -1
    interval: int = -1

    def at(self, interval: int) -> "Tag":
        return Tag(self.kind, self.ref, self.direction, self.piece, interval)


@dataclass(frozen=True)
class ProvenanceMap:
    arc_tags: tuple[Tag, ...]
    node_tags: tuple[Tag, ...]

    def arcs_of_kind(self, kind: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.arc_tags) if t.kind == kind], dtype=np.int64)


@dataclass(frozen=True)
class Reduction:
    """Everything ``build_qcqp`` produced, kept for mapping solutions back."""

    qcqp: QcqpInstance
    provenance: ProvenanceMap
    grid: TimeGrid
    spgg: Spgg
    spgg_provenance: ProvenanceMap


def sink_name(v: str) -> str:
    return f"{v}#d"


def source_name(v: str, piece: int | None = None) -> str:
    return f"{v}#s" if piece is None else f"{v}#s{piece}"


def _demand_grid(g: Upgg) -> TimeGrid:
    return common_refinement([n.demand for n in g.nodes], horizon=g.horizon)


def simplify_constant(g: Upgg) -> tuple[Spgg, ProvenanceMap]:
    rep = validate(g)
    if not rep.ok:
        raise ReductionError(f"invalid instance:\n{rep}")
    t_min = _demand_grid(g).min_length
    T = g.horizon
    nodes: list[str] = []
    node_tags: list[Tag] = []
    arcs: list[Arc] = []
    arc_tags: list[Tag] = []
    sources: dict[str, Source] = {}
    sinks: dict[str, PiecewiseConstantFn] = {}

    for n in g.nodes:
        nodes.append(n.id)
        node_tags.append(Tag("grid", n.id))
    for e in g.edges:
        arcs.append(Arc(f"{e.id}+", e.u, e.v, e.capacity, e.resistance))
        arc_tags.append(Tag("grid-edge", e.id, +1))
        arcs.append(Arc(f"{e.id}-", e.v, e.u, e.capacity, e.resistance))
        arc_tags.append(Tag("grid-edge", e.id, -1))
    for n in g.nodes:
        if n.rate_cap is not None:
            # one source per constant piece of the rate-dependent cost
            for j, (lo, hi, price) in enumerate(n.pi.pieces()):
                width = hi - lo
                s = source_name(n.id, j)
                nodes.append(s)
                node_tags.append(Tag("source", n.id, piece=j))
                sources[s] = Source(width * T, PiecewiseConstantFn.constant(price, width * T))
                arcs.append(Arc(f"{s}>", s, n.id, width, 0.0))
                arc_tags.append(Tag("node-source", n.id, piece=j))
        elif n.budget is not None:
            s = source_name(n.id)
            nodes.append(s)
            node_tags.append(Tag("source", n.id))
            sources[s] = Source(n.budget, n.pi)
            arcs.append(Arc(f"{s}>", s, n.id, n.budget / t_min, 0.0))
            arc_tags.append(Tag("node-source", n.id))
        if n.demand.max_value() > 0:
            d = sink_name(n.id)
            nodes.append(d)
            node_tags.append(Tag("sink", n.id))
            sinks[d] = n.demand
            arcs.append(Arc(f"{n.id}>{d}", n.id, d, 2 * n.demand.max_value(), 0.0))
            arc_tags.append(Tag("node-sink", n.id))

    fwd = forward_reachable(arcs, sources)
    for d in sinks:
        if d not in fwd:
            raise ReductionError(f"node {d[:-2]} has positive demand but no supply can reach it")
    keep = fwd & backward_reachable(arcs, sinks)
    kept_nodes = [(v, t) for v, t in zip(nodes, node_tags) if v in keep]
    kept_arcs = [(a, t) for a, t in zip(arcs, arc_tags) if a.tail in keep and a.head in keep]
    spgg = Spgg(
        nodes=tuple(v for v, _ in kept_nodes),
        arcs=tuple(a for a, _ in kept_arcs),
        sources={s: src for s, src in sources.items() if s in keep},
        sinks={d: dem for d, dem in sinks.items() if d in keep},
        horizon=T,
    )
    prov = ProvenanceMap(tuple(t for _, t in kept_arcs), tuple(t for _, t in kept_nodes))
    return spgg, prov


def identity_provenance(g: Spgg) -> ProvenanceMap:
    """Provenance for an instance that was directed to begin with."""
    node_tags = []
    for v in g.nodes:
        kind = "source" if v in g.sources else "sink" if v in g.sinks else "grid"
        node_tags.append(Tag(kind, v))
    return ProvenanceMap(tuple(Tag("grid-edge", a.id, +1) for a in g.arcs), tuple(node_tags))


def time_expand(g: Spgg, grid: TimeGrid, spgg_prov: ProvenanceMap | None = None,
                check: bool = True) -> tuple[QcqpInstance, ProvenanceMap]:
    if check:
        rep = validate(g)
        if not rep.ok:
            raise ReductionError(f"invalid directed instance:\n{rep}")
    if abs(grid.horizon - g.horizon) > 1e-12 * max(1.0, g.horizon):
        raise ReductionError(f"grid horizon {grid.horizon} != instance horizon {g.horizon}")
    if spgg_prov is None:
        spgg_prov = identity_provenance(g)
    k = grid.k
    lengths = grid.lengths
    t_min = grid.min_length
    nV = len(g.nodes)
    index = {v: j for j, v in enumerate(g.nodes)}

    names = [SUPER_SOURCE]
    node_tags = [Tag("super-source")]
    tails, heads, rhos, rs, us, cs = [], [], [], [], [], []
    arc_tags: list[Tag] = []

    def add_arc(t, h, rho, r, u, c, tag):
        tails.append(t)
        heads.append(h)
        rhos.append(rho)
        rs.append(r)
        us.append(u)
        cs.append(c)
        arc_tags.append(tag)

    # piece nodes come right after s*, copies after that
    pieces = []
    for s in g.nodes:
        if s not in g.sources:
            continue
        src_tag = spgg_prov.node_tags[index[s]]
        for j, (lo, hi, price) in enumerate(g.sources[s].pi.pieces()):
            pieces.append((s, j, hi - lo, price, len(names)))
            names.append(f"{s}[{j}]")
            node_tags.append(Tag("piece", src_tag.ref, piece=j if src_tag.piece < 0 else src_tag.piece))
    copy0 = len(names)

    def copy_of(v: str, i: int) -> int:
        return copy0 + i * nV + index[v]

    for i in range(k):
        for v, t in zip(g.nodes, spgg_prov.node_tags):
            names.append(f"{v}@{i}")
            node_tags.append(t.at(i))

    for s, j, width, price, p_node in pieces:
        tag = spgg_prov.node_tags[index[s]]
        piece = j if tag.piece < 0 else tag.piece
        add_arc(0, p_node, 1.0, 0.0, width / t_min, price * t_min, Tag("production", tag.ref, piece=piece))
    for s, j, width, price, p_node in pieces:
        tag = spgg_prov.node_tags[index[s]]
        piece = j if tag.piece < 0 else tag.piece
        for i in range(k):
            add_arc(p_node, copy_of(s, i), t_min / lengths[i], 0.0, width / t_min, 0.0,
                    Tag("delegation", tag.ref, piece=piece, interval=i))
    for i in range(k):
        for a, tag in zip(g.arcs, spgg_prov.arc_tags):
            add_arc(copy_of(a.tail, i), copy_of(a.head, i), 1.0, a.resistance, a.capacity, 0.0, tag.at(i))

    sink_nodes, demands = [], []
    for i in range(k):
        mid = 0.5 * (grid.boundaries[i] + grid.boundaries[i + 1])
        for d in g.nodes:
            if d in g.sinks:
                sink_nodes.append(copy_of(d, i))
                demands.append(g.sinks[d](mid))

    nA = len(tails)
    inst = QcqpInstance(
        tail=np.array(tails, dtype=np.int64), head=np.array(heads, dtype=np.int64),
        rho=np.array(rhos), r=np.array(rs), u=np.array(us),
        c_lin=np.array(cs), c_quad=np.zeros(nA),
        n_nodes=len(names), sinks=np.array(sink_nodes, dtype=np.int64), demand=np.array(demands),
        node_names=tuple(names),
    )
    return inst, ProvenanceMap(tuple(arc_tags), tuple(node_tags))


def build_qcqp(g: Union[Upgg, Spgg]) -> Reduction:
    if isinstance(g, Upgg):
        spgg, sprov = simplify_constant(g)
        grid = _demand_grid(g)
    else:
        rep = validate(g)
        if not rep.ok:
            raise ReductionError(f"invalid directed instance:\n{rep}")
        spgg, sprov = g, identity_provenance(g)
        grid = common_refinement(list(g.sinks.values()), horizon=g.horizon)
    if not spgg.nodes:
        empty = QcqpInstance(tail=[], head=[], rho=[], r=[], u=[], c_lin=[], c_quad=[],
                             n_nodes=1, sinks=[], demand=[], node_names=(SUPER_SOURCE,))
        return Reduction(empty, ProvenanceMap((), (Tag("super-source"),)), grid, spgg, sprov)
    inst, prov = time_expand(spgg, grid, sprov, check=False)
    return Reduction(inst, prov, grid, spgg, sprov)
