import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridflow.grid import GridNode, Upgg
from gridflow.postprocess import (antiparallel_pairs, arc_waste, merge_antiparallel, node_waste, round_waste,
                                  to_dynamic_flow)
from gridflow.pwfun import PiecewiseConstantFn as PCF
from gridflow.qcqp import FlowPoint, QcqpInstance, objective, residuals
from gridflow.reduce import build_qcqp
from gridflow.solver import barrier_solve, relative_fptas

from builders import greedy_spgg, random_qcqp, two_arc_path, wasteful_point


def test_waste_free_point_is_unchanged():
    inst = two_arc_path(d=0.9 - 0.1 * 0.81)
    x = np.array([0.9, 0.9])
    z = FlowPoint(x, inst.gamma(x))
    out, stats = round_waste(inst, z)
    assert np.array_equal(out.x, z.x) and np.array_equal(out.y, z.y)
    assert stats.events == 0


def test_arc_waste_is_cut_back_to_the_source():
    inst = two_arc_path(r2=0.1, d=0.8)
    out, _ = round_waste(inst, FlowPoint([1.0, 1.0], [1.0, 0.8]))
    root = (1 - math.sqrt(0.68)) / 0.2  # x - 0.1 x^2 = 0.8
    assert out.x == pytest.approx([root, root], abs=1e-12)
    assert out.y == pytest.approx([root, 0.8], abs=1e-12)


def test_node_waste_is_removed_upstream():
    inst = two_arc_path(r2=0.0, d=0.6)
    out, stats = round_waste(inst, FlowPoint([1.0, 0.6], [1.0, 0.6]))
    assert out.x == pytest.approx([0.6, 0.6])
    assert out.y == pytest.approx([0.6, 0.6])
    assert stats.node_events >= 1


def test_round_rejects_infeasible_input():
    with pytest.raises(ValueError):
        round_waste(two_arc_path(d=0.8), FlowPoint([0.1, 0.1], [0.1, 0.1]))


def _pair_instance():
    # s* -> a, a <-> b, b -> sink
    return QcqpInstance(tail=[0, 1, 2, 2], head=[1, 2, 1, 3], rho=[1, 1, 1, 1], r=[0, 0, 0, 0],
                        u=[10, 10, 10, 10], c_lin=[1, 0, 0, 0], c_quad=[0, 0, 0, 0],
                        n_nodes=4, sinks=[3], demand=[1.0])


@pytest.mark.parametrize("ab,ba,new_ab,new_ba", [
    (5.0, 3.0, 2.0, 0.0),
    (0.0, 3.0, 0.0, 3.0),
    (4.0, 4.0, 0.0, 0.0),
])
def test_merge_examples(ab, ba, new_ab, new_ba):
    inst = _pair_instance()
    assert antiparallel_pairs(inst) == [(1, 2)]
    x = np.array([6.0, ab, ba, 1.0])
    out = merge_antiparallel(inst, FlowPoint(x, x.copy()))
    assert (out.x[1], out.y[1], out.x[2], out.y[2]) == (new_ab, new_ab, new_ba, new_ba)


def test_greedy_schedule():
    red = build_qcqp(greedy_spgg())
    rep = relative_fptas(red.qcqp, 0.02)
    flow, _, _ = to_dynamic_flow(red, rep.point, greedy_spgg())
    sched = flow.production_schedule()
    assert sched["s1"] == pytest.approx([0.5], abs=0.02)
    assert sched["s2"] == pytest.approx([0.5], abs=0.02)
    assert 3.0 - 1e-9 <= flow.objective <= 3.06


def test_zero_demand_gives_an_empty_flow():
    T = 1.0
    g = Upgg((GridNode("a", PCF.constant(0.0, T), rate_cap=1.0, pi=PCF.constant(1.0, 1.0)),), (), T)
    red = build_qcqp(g)
    flow, _, _ = to_dynamic_flow(red, FlowPoint.zeros(red.qcqp.n_arcs), g)
    assert flow.is_empty()
    assert flow.objective == 0.0


# ---- properties -----------------------------------------------------------

@lru_cache(maxsize=None)
def _solved(seed):
    inst = random_qcqp(np.random.default_rng(seed), n_mid=2 + seed % 3)
    return inst, barrier_solve(inst, 1e-6).point


@settings(max_examples=30)
@given(st.integers(0, 7), st.integers(0, 10_000))
def test_rounding_properties(which, seed):
    base, z0 = _solved(which)
    inst, z = wasteful_point(base, z0, np.random.default_rng(seed))
    assert residuals(inst, z).max() <= 1e-12
    out, stats = round_waste(inst, z)
    assert np.all(out.x <= z.x) and np.all(out.y <= z.y)
    assert objective(inst, out) <= objective(inst, z)
    assert np.all(np.abs(arc_waste(inst, out)) <= 1e-9)
    assert np.all(np.abs(node_waste(inst, out)) <= 1e-9)
    assert residuals(inst, out).max() <= 1e-9
    assert stats.events <= 2 * inst.n_arcs + inst.n_nodes


@settings(max_examples=30)
@given(st.lists(st.floats(0, 5), min_size=4, max_size=4), st.floats(0, 0.09))
def test_merge_properties(flows, r):
    inst = _pair_instance().with_arrays(r=np.array([0.0, r, r, 0.0]))
    x = np.array(flows)
    z = FlowPoint(x, inst.gamma(x))
    out = merge_antiparallel(inst, z)
    assert objective(inst, out) <= objective(inst, z)
    assert min(out.x[1], out.x[2]) == 0.0
    # the surviving direction never delivers more than before
    assert out.y[1] <= z.y[1] + 1e-15 and out.y[2] <= z.y[2] + 1e-15
