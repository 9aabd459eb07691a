"""Small hand-built instances shared by several test modules."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from gridflow.grid import Arc, Edge, GridNode, Source, Spgg, Upgg
from gridflow.pwfun import PiecewiseConstantFn as PCF
from gridflow.qcqp import FlowPoint, QcqpInstance

INSTANCES = Path(__file__).resolve().parent.parent / "instances"


def single_arc(c_lin=1.0, c_quad=0.0, u=10.0, d=4.0, rho=1.0, r=0.0) -> QcqpInstance:
    """``s* -> sink`` with one demand."""
    return QcqpInstance(tail=[0], head=[1], rho=[rho], r=[r], u=[u], c_lin=[c_lin], c_quad=[c_quad],
                        n_nodes=2, sinks=[1], demand=[d], node_names=("s*", "d"))


def two_arc_path(r2=0.1, u=(2.0, 2.0), d=0.5) -> QcqpInstance:
    """``s* -> v -> sink``; the second arc is lossy."""
    return QcqpInstance(tail=[0, 1], head=[1, 2], rho=[1.0, 1.0], r=[0.0, r2], u=list(u),
                        c_lin=[1.0, 0.0], c_quad=[0.0, 0.0], n_nodes=3, sinks=[2], demand=[d],
                        node_names=("s*", "v", "d"))


def random_qcqp(rng: np.random.Generator, n_mid: int = 3, extra: int = 3) -> QcqpInstance:
    """Random layered instance: s* feeds every middle node, middle nodes feed one sink.

    Feasible by construction (demand below the weakest path's delivery).
    """
    mid = list(range(1, n_mid + 1))
    sink = n_mid + 1
    tails, heads = [], []
    for v in mid:
        tails.append(0), heads.append(v)
        tails.append(v), heads.append(sink)
    for _ in range(extra):
        a, b = rng.choice(mid, size=2, replace=False)
        tails.append(int(a)), heads.append(int(b))
    n = len(tails)
    u = rng.uniform(1.0, 3.0, n)
    r = rng.uniform(0.0, 0.3, n) / u
    r[np.array(tails) == 0] = 0.0
    rho = np.where(np.array(tails) == 0, 1.0, rng.uniform(0.8, 1.0, n))
    c_lin = np.where(np.array(tails) == 0, rng.uniform(0.5, 2.0, n), rng.uniform(0.0, 0.2, n))
    c_quad = rng.uniform(0.0, 0.3, n) * (rng.random(n) < 0.5)
    demand = [0.3 * n_mid * float(rng.uniform(0.3, 0.8))]
    return QcqpInstance(tail=tails, head=heads, rho=rho, r=r, u=u, c_lin=c_lin, c_quad=c_quad,
                        n_nodes=n_mid + 2, sinks=[sink], demand=demand)


def greedy_spgg(L: float = 10.0) -> Spgg:
    """Two budget-limited producers feeding one consumer over two time units."""
    T = 2.0
    return Spgg(
        nodes=("s1", "s2", "d"),
        arcs=(Arc("a1", "s1", "d", 1.0), Arc("a2", "s2", "d", 0.5)),
        sources={"s1": Source(2.0, PCF((1.0,), (1.0, L), 2.0)), "s2": Source(2.0, PCF.constant(2.0, 2.0))},
        sinks={"d": PCF.constant(1.0, T)},
        horizon=T,
    )


def source_sink_spgg(k: int) -> Spgg:
    """One source with two cost pieces and one sink on a single arc, with ``k`` demand intervals."""
    bps = tuple(np.linspace(0, 1, k + 1)[1:-1])
    return Spgg(
        nodes=("s", "d"),
        arcs=(Arc("a", "s", "d", 2.0),),
        sources={"s": Source(2.0, PCF((1.0,), (1.0, 2.0), 2.0))},
        sinks={"d": PCF(bps, tuple(0.5 + 0.1 * i for i in range(k)), 1.0)},
        horizon=1.0,
    )


def two_node_upgg(k: int = 2) -> Upgg:
    """``u`` holds a cumulative budget, ``v`` a rate cap; both costs have one kink."""
    T = 2.0
    du = PCF((1.0,), (1.0, 0.5), T) if k == 2 else PCF.constant(1.0, T)
    return Upgg(
        nodes=(GridNode("u", du, budget=3.0, pi=PCF((1.5,), (1.0, 2.0), 3.0)),
               GridNode("v", PCF.constant(1.0, T), rate_cap=2.0, pi=PCF((1.0,), (1.5, 3.0), 2.0))),
        edges=(Edge("uv", "u", "v", 2.0, 0.1),),
        horizon=T,
    )


def ramp_upgg(demand: PCF, capacity: float = 2.0) -> Upgg:
    """Lossless line from a unit-price producer to a consumer with the given demand."""
    T = demand.domain_end
    return Upgg(
        nodes=(GridNode("g", PCF.constant(0.0, T), rate_cap=capacity, pi=PCF.constant(1.0, capacity)),
               GridNode("c", demand)),
        edges=(Edge("gc", "g", "c", capacity, 0.0),),
        horizon=T,
    )


def wasteful_point(inst: QcqpInstance, z, rng: np.random.Generator):
    """Down-scale a feasible point and pile waste onto super-source arcs.

    Scaling flows and demands by the same factor keeps every row feasible
    because each loss function is concave through the origin. Returns the
    rescaled instance and the wasteful point.
    """
    alpha = float(rng.uniform(0.3, 0.95))
    x, y = alpha * z.x, alpha * z.y
    out = inst.with_arrays(demand=alpha * inst.demand)
    for a in np.flatnonzero(inst.tail == inst.source):
        kind = rng.choice(["none", "arc", "node"])
        if kind == "none":
            continue
        x[a] += float(rng.uniform(0.0, 1.0)) * (inst.u[a] - x[a])
        if kind == "node":
            y[a] = inst.rho[a] * x[a] - inst.r[a] * x[a] ** 2
    return out, FlowPoint(x, y)
