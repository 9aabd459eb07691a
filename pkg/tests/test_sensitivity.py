import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridflow.qcqp import FlowPoint, QcqpInstance
from gridflow.sensitivity import (capacity_bound, composite_bound, demand_bound, global_lower_bound,
                                  local_sensitivities, perturb, residual_graph, row_shift,
                                  validate_bound_empirically)
from gridflow.solver import barrier_solve

from builders import random_qcqp, single_arc


def _two_suppliers():
    """Cheap arc (price 1, cap 2) and dear arc (price 3, cap 10) into one sink with demand 3."""
    return QcqpInstance(tail=[0, 0], head=[1, 1], rho=[1, 1], r=[0, 0], u=[2, 10], c_lin=[1, 3],
                        c_quad=[0, 0], n_nodes=2, sinks=[1], demand=[3.0])


def _two_sinks():
    return QcqpInstance(tail=[0, 0], head=[1, 2], rho=[1, 1], r=[0, 0], u=[5, 5], c_lin=[1, 1],
                        c_quad=[0, 0], n_nodes=3, sinks=[1, 2], demand=[1.0, 1.0])


def test_residual_graph_of_zero_flow():
    inst = random_qcqp(np.random.default_rng(0))
    rg = residual_graph(inst, FlowPoint.zeros(inst.n_arcs))
    assert np.array_equal(rg.forward_capacity, inst.u)
    assert np.all(rg.backward_capacity == 0)


def test_residual_graph_identity_arc():
    rg = residual_graph(single_arc(u=5.0, d=1.0), FlowPoint([3.0], [3.0]))
    assert rg.forward_capacity[0] == 2.0 and rg.backward_capacity[0] == 3.0
    assert rg.forward_gamma(0, 1.5) == 1.5
    assert rg.backward_gamma(0, 2.0) == 2.0


def test_residual_graph_rejects_waste():
    with pytest.raises(ValueError, match="waste"):
        residual_graph(single_arc(), FlowPoint([3.0], [2.0]))


def test_demand_bound_examples():
    inst = single_arc()
    b = demand_bound(inst, 1, 0.0)
    assert (b.lower, b.upper) == (0.0, 0.0)
    b = demand_bound(inst, 1, 1.0)
    assert (b.lower, b.upper) == (1.0, 1.0)
    chk = validate_bound_empirically(inst, ("demand", 1, 1.0))
    assert chk.status == "ok"
    assert chk.delta_opt == pytest.approx(1.0, abs=2e-6)


def test_capacity_bound_examples():
    assert capacity_bound(single_arc(), 0, 1.0).upper == 0.0
    slack = validate_bound_empirically(single_arc(), ("capacity", 0, -1.0))
    assert slack.status == "ok" and abs(slack.delta_opt) <= 2e-6
    inst = _two_suppliers()
    tight = validate_bound_empirically(inst, ("capacity", 0, -1.0))
    assert tight.status == "ok"
    assert tight.delta_opt == pytest.approx(2.0, abs=2e-6)  # one unit moves from price 1 to price 3
    assert tight.delta_opt <= tight.bound.upper


def test_composite_bounds_add_up():
    inst = _two_sinks()
    assert composite_bound(inst, []).lower == composite_bound(inst, []).upper == 0.0
    both = composite_bound(inst, [("demand", 1, 1.0), ("demand", 2, 1.0)])
    one = demand_bound(inst, 1, 1.0)
    assert (both.lower, both.upper) == (2 * one.lower, 2 * one.upper)
    mixed = composite_bound(inst, [("demand", 1, 0.5), ("capacity", 0, -1.0)])
    parts = demand_bound(inst, 1, 0.5) + capacity_bound(inst, 0, -1.0)
    assert (mixed.lower, mixed.upper) == (parts.lower, parts.upper)
    with pytest.raises(ValueError):
        composite_bound(inst, [("resistance", 0, 1.0)])


def test_local_sensitivities_on_the_single_arc():
    inst = single_arc()
    rep = barrier_solve(inst, 1e-6)
    loc = local_sensitivities(inst, rep)
    assert loc.demand_row[0] == pytest.approx(-1.0, abs=10 * rep.gap)
    assert abs(loc.capacity[0]) <= 10 * rep.gap  # capacity 10 is far from binding


def test_resistance_sensitivity_vanishes_without_flow():
    inst = _two_suppliers().with_arrays(u=np.array([5.0, 10.0]))  # dear arc unused
    rep = barrier_solve(inst, 1e-8)
    assert local_sensitivities(inst, rep).resistance[1] == pytest.approx(0.0, abs=1e-6)


def test_local_sensitivity_needs_duals():
    rep = barrier_solve(single_arc(), 1e-6)
    rep.duals = None
    with pytest.raises(ValueError):
        local_sensitivities(single_arc(), rep)


def test_perturb_rejects_negative_demand():
    with pytest.raises(ValueError):
        perturb(single_arc(), [("demand", 1, -5.0)])


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.sampled_from(["demand", "capacity"]), st.sampled_from([-1, 1]))
def test_brackets_hold_on_random_instances(seed, kind, sign):
    rng = np.random.default_rng(seed)
    inst = random_qcqp(rng)
    base = barrier_solve(inst, 1e-6)
    if kind == "demand":
        target = int(inst.sinks[0])
        delta = sign * 0.1 * float(inst.demand[0])
    else:
        target = int(rng.integers(inst.n_arcs))
        delta = sign * 0.1 * float(inst.u[target])
    chk = validate_bound_empirically(inst, (kind, target, delta), base=base)
    assert chk.ok
    if chk.status == "ok":
        omega = row_shift(inst, [(kind, target, delta)])
        # convex duality: the central point's duals give a global lower bound
        assert chk.delta_opt >= global_lower_bound(base, omega) - base.gap - 2e-6
