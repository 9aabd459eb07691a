import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridflow.bench import FAMILIES, generate_bench_instance
from gridflow.grid import Arc, Edge, GridNode, Source, Spgg, Upgg, trivial_self_supply_check, validate
from gridflow.pwfun import PiecewiseConstantFn as PCF

from builders import greedy_spgg, two_node_upgg


def _pair(r, u):
    T = 1.0
    return Upgg((GridNode("a", PCF.constant(0, T), rate_cap=1.0, pi=PCF.constant(1, 1.0)),
                 GridNode("b", PCF.constant(0.5, T))), (Edge("ab", "a", "b", u, r),), T)


def test_loss_must_stay_increasing():
    rep = validate(_pair(0.3, 2.0))  # r*u = 0.6
    assert not rep.ok
    assert rep.rules() == {"2ru < 1"}
    assert "edge ab" in str(rep)


def test_greedy_instance_is_valid():
    assert validate(greedy_spgg()).ok


def test_rate_and_budget_are_exclusive():
    T = 1.0
    g = Upgg((GridNode("a", PCF.constant(0, T), rate_cap=1.0, budget=2.0, pi=PCF.constant(1, 1.0)),), (), T)
    assert "rate xor cumulative" in validate(g).rules()


def test_structural_rules():
    T = 1.0
    n = GridNode("a", PCF.constant(0, T))
    g = Upgg((n, n, GridNode("b", PCF.constant(0, 2.0))),
             (Edge("x", "a", "a", 1.0), Edge("y", "a", "zz", 1.0), Edge("z", "a", "b", 0.0, -1.0)), T)
    rules = validate(g).rules()
    assert {"unique node ids", "simple graph", "endpoints exist", "capacity > 0",
            "resistance >= 0", "demand horizon"} <= rules


def test_cost_curve_rules():
    T = 1.0
    g = Upgg((GridNode("a", PCF.constant(0, T), rate_cap=1.0, pi=PCF((0.5,), (2, 1), 1.0)),
              GridNode("b", PCF.constant(0, T), budget=1.0, pi=PCF.constant(1, 2.0)),
              GridNode("c", PCF.constant(0, T), rate_cap=1.0)), (), T)
    assert {"pi non-decreasing", "pi domain", "pi required"} <= validate(g).rules()


def test_directed_rules():
    T = 1.0
    g = Spgg(("s", "d", "x"), (Arc("a", "d", "s", 1.0),),
             {"s": Source(1.0, PCF.constant(1, 1.0))}, {"d": PCF.constant(1, T)}, T)
    rules = validate(g).rules()
    assert {"sources have no in-arcs", "sinks have no out-arcs", "reachable from sources"} <= rules


def test_validate_is_pure():
    g = two_node_upgg()
    assert str(validate(g)) == str(validate(g)) == "OK"


def test_self_supply():
    T = 1.0
    zero = Upgg((GridNode("a", PCF.constant(0, T)),), (), T)
    assert trivial_self_supply_check(zero)
    short = Upgg((GridNode("a", PCF.constant(2.0, T), rate_cap=1.0, pi=PCF.constant(1, 1.0)),), (), T)
    assert not trivial_self_supply_check(short)
    budget = Upgg((GridNode("a", PCF((0.5,), (1.0, 3.0), T), budget=2.0, pi=PCF.constant(1, 2.0)),), (), T)
    assert trivial_self_supply_check(budget)  # integral is exactly 2


@given(st.sampled_from(sorted(FAMILIES)), st.integers(0, 3), st.integers(0, 10_000))
def test_generated_instances_are_valid_and_self_supplied(family, extra, seed):
    n = FAMILIES[family] + 2 * extra
    g = generate_bench_instance(family, n, seed)
    assert validate(g).ok
    assert trivial_self_supply_check(g)
    for e in g.edges:
        xs = np.linspace(0, e.capacity, 5)
        assert np.all(1 - 2 * e.resistance * xs > 0)
