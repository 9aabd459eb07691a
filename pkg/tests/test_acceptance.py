"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test attaches a short ``detail`` property; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run. Run just this file with
``pytest tests/test_acceptance.py -v``.
"""

import csv
import io
import math
import time

import numpy as np
import pytest

from gridflow.bench import BenchSpec, generate_bench_instance, polyfit, run_bench
from gridflow.io import load_instance
from gridflow.postprocess import (antiparallel_pairs, arc_waste, merge_antiparallel, node_waste, round_waste,
                                  to_dynamic_flow)
from gridflow.pwfun import PiecewiseConstantFn, TimeGrid, common_refinement, over_approximate, sufficient_piece_count
from gridflow.qcqp import FlowPoint, derivatives, objective, residuals
from gridflow.reduce import ReductionError, build_qcqp, time_expand
from gridflow.sensitivity import composite_bound, perturb
from gridflow.solver import (FlowBarrier, InfeasibleError, NotStrictlyFeasibleError, barrier_solve,
                             feasible_eps_solution, relative_fptas)

from builders import (INSTANCES, greedy_spgg, random_qcqp, ramp_upgg, single_arc, source_sink_spgg, two_node_upgg,
                      wasteful_point)
from oracles import brute_force_opt, fd_gradient, fd_jacobian, greedy_dispatch_cost, random_small_upgg, rel_close

pytestmark = pytest.mark.acceptance

ORACLE_EPS = 1e-4
ORACLE_COUNT = 50


@pytest.fixture(scope="module")
def oracle_suite():
    """At least 50 small instances, each solved by the package and by the grid oracle."""
    cases = []
    seed = 0
    while len(cases) < ORACLE_COUNT + 5:
        g = random_small_upgg(np.random.default_rng(seed))
        seed += 1
        try:
            inst = build_qcqp(g).qcqp
            rep = feasible_eps_solution(inst, ORACLE_EPS)
        except (InfeasibleError, NotStrictlyFeasibleError, ReductionError):
            continue  # no finite OPT, or no strictly feasible point to harden into
        cases.append((seed - 1, g, inst, rep, brute_force_opt(g)))
    return cases


# 1 -------------------------------------------------------------------------

def test_criterion_01_golden_example(record_property):
    start = time.perf_counter()
    g, _ = load_instance(INSTANCES / "greedy.json")
    red = build_qcqp(g)
    rep = relative_fptas(red.qcqp, 0.02)
    flow, _, _ = to_dynamic_flow(red, rep.point, g)
    elapsed = time.perf_counter() - start
    sched = flow.production_schedule()
    greedy = {L: greedy_dispatch_cost([(1.0, greedy_spgg(L).sources["s1"].pi),
                                       (0.5, greedy_spgg(L).sources["s2"].pi)], 1.0, 2.0)
              for L in (4.0, 10.0, 30.0)}
    record_property("detail", f"objective {flow.objective:.6f}, schedule {sched}, greedy(L=10) "
                              f"{greedy[10.0]:.6f}, {elapsed:.3f} s")
    assert 3.0 <= flow.objective <= 3.06
    assert sched["s1"] == pytest.approx([0.5], abs=0.02)
    assert sched["s2"] == pytest.approx([0.5], abs=0.02)
    assert greedy[10.0] == pytest.approx(7.0, abs=1e-12)
    for L, cost in greedy.items():
        assert cost == pytest.approx(2 + L / 2, abs=1e-12)
    assert elapsed < 1.0


# 2 -------------------------------------------------------------------------

def test_criterion_02_reduction_structure(record_property):
    counts = []
    for k in (1, 2):
        g = source_sink_spgg(k)
        inst, _ = time_expand(g, common_refinement(list(g.sinks.values())))
        counts.append((inst.n_nodes, inst.n_arcs))
    fig = build_qcqp(two_node_upgg(k=2)).qcqp
    file_fig = build_qcqp(load_instance(INSTANCES / "two_node.json")[0]).qcqp
    counts += [(fig.n_nodes, fig.n_arcs), (file_fig.n_nodes, file_fig.n_arcs)]
    record_property("detail", f"counts {counts}")
    assert counts == [(5, 5), (7, 8), (19, 26), (19, 26)]


# 3 -------------------------------------------------------------------------

def test_criterion_03_oracle_equivalence(oracle_suite, record_property):
    start = time.perf_counter()
    worst, worst_margin = 0.0, math.inf
    for seed, g, inst, rep, orc in oracle_suite:
        gap = abs(rep.objective - orc.value)
        worst = max(worst, gap)
        worst_margin = min(worst_margin, ORACLE_EPS + orc.error_bound - gap)
        assert gap <= ORACLE_EPS + orc.error_bound, f"seed {seed}: solver {rep.objective}, oracle {orc.value}"
    sizes = {(len(g.nodes), common_refinement([n.demand for n in g.nodes], g.horizon).k)
             for _, g, *_ in oracle_suite}
    record_property("detail", f"{len(oracle_suite)} instances, worst |diff| {worst:.2e}, "
                              f"smallest margin {worst_margin:.2e}, (nodes, intervals) seen {sorted(sizes)}")
    assert len(oracle_suite) >= 50
    assert all(n <= 3 and k <= 2 for n, k in sizes)


# 4 -------------------------------------------------------------------------

def _lossy_root(rho, r, d):
    return (rho - math.sqrt(rho * rho - 4 * r * d)) / (2 * r)


def test_criterion_04_solver_correctness(record_property):
    eps = 1e-6
    x_loss = _lossy_root(1.0, 0.05, 4.0)
    cases = [
        (single_arc(), 4.0),
        (single_arc(c_quad=1.0), 20.0),
        (single_arc(c_lin=2.5, c_quad=0.5, d=3.0), 2.5 * 3 + 0.5 * 9),
        (single_arc(r=0.05, u=8.0), x_loss),
        (single_arc(c_quad=1.0, r=0.05, u=8.0), x_loss + x_loss ** 2),
    ]
    errs = []
    for inst, opt in cases:
        for rep in (barrier_solve(inst, eps), feasible_eps_solution(inst, eps)):
            errs.append(rep.objective - opt)
            assert opt - 1e-12 <= rep.objective <= opt + eps
    suite_eps = 1e-4
    diffs = []
    for seed in range(20):
        inst = random_qcqp(np.random.default_rng(1000 + seed))
        br = feasible_eps_solution(inst, suite_eps, engine="barrier")
        pf = feasible_eps_solution(inst, suite_eps, engine="pathfollow")
        diffs.append(abs(br.objective - pf.objective))
        assert diffs[-1] <= 2 * suite_eps
    record_property("detail", f"analytic max error {max(errs):.2e} (eps {eps}); engines on 20 instances "
                              f"max |diff| {max(diffs):.2e} (2 eps = {2 * suite_eps})")


# 5 -------------------------------------------------------------------------

def test_criterion_05_hardening_contract(oracle_suite, record_property):
    worst_res, worst_excess = -math.inf, -math.inf
    for seed, g, inst, rep, orc in oracle_suite:
        res = residuals(inst, rep.point)
        worst_res = max(worst_res, float(res.max(initial=-math.inf)))
        worst_excess = max(worst_excess, rep.objective - orc.value)
        assert np.all(res <= 0), f"seed {seed}"
        assert rep.objective <= orc.value + ORACLE_EPS, f"seed {seed}"
    with pytest.raises(NotStrictlyFeasibleError):
        feasible_eps_solution(single_arc(u=4.0, d=4.0), 1e-3)
    record_property("detail", f"{len(oracle_suite)} points, max residual {worst_res:.2e}, "
                              f"max objective - oracle {worst_excess:.2e}, d = u raises the floor error")


# 6 -------------------------------------------------------------------------

def _bases():
    out = []
    for n, seed in [(3, 0), (4, 1), (5, 2), (4, 3), (6, 4)]:
        inst = build_qcqp(generate_bench_instance("cycle", n, seed)).qcqp
        out.append((inst, barrier_solve(inst, 1e-6).point))
    return out


def test_criterion_06_rounding_and_merging(record_property):
    bases = _bases()
    rng = np.random.default_rng(2024)
    events, merged_pairs = 0, 0
    for j in range(100):
        base, z0 = bases[j % len(bases)]
        inst, z = wasteful_point(base, z0, rng)
        assert residuals(inst, z).max() <= 1e-12
        out, stats = round_waste(inst, z)
        events = max(events, stats.events)
        assert np.all(out.x <= z.x) and np.all(out.y <= z.y)
        assert objective(inst, out) <= objective(inst, z)
        assert np.abs(arc_waste(inst, out)).max() <= 1e-9
        assert np.abs(node_waste(inst, out)).max() <= 1e-9
        assert stats.events <= 2 * inst.n_arcs + inst.n_nodes
        pairs = antiparallel_pairs(inst)
        for point in (z, out):
            m = merge_antiparallel(inst, point, pairs)
            assert objective(inst, m) <= objective(inst, point)
            assert all(min(m.x[a], m.x[b]) == 0.0 for a, b in pairs)
            merged_pairs += sum(min(point.x[a], point.x[b]) > 0 for a, b in pairs)
    record_property("detail", f"100 points, max events {events}, simultaneously positive pairs merged {merged_pairs}")
    assert merged_pairs > 0  # the merge was actually exercised


# 7 -------------------------------------------------------------------------

def _gap_identity(inst, rep):
    g = residuals(inst, rep.point)
    lhs = float(rep.duals @ -g)
    return abs(lhs - g.size / rep.t) / (g.size / rep.t)


def test_criterion_07_sensitivity_brackets(record_property):
    eps = 1e-6
    checked, skipped, worst_gap_err, worst_slack = 0, 0, 0.0, math.inf
    for seed in range(30):
        rng = np.random.default_rng(500 + seed)
        inst = random_qcqp(rng, n_mid=3)
        assert inst.n_nodes == 5
        base = barrier_solve(inst, eps)
        worst_gap_err = max(worst_gap_err, _gap_identity(inst, base))
        a = int(rng.integers(inst.n_arcs))
        atoms = [("demand", int(inst.sinks[0]), float(rng.choice([-1, 1])) * 0.1 * float(inst.demand[0])),
                 ("capacity", a, float(rng.choice([-1, 1])) * 0.1 * float(inst.u[a]))]
        for atom in atoms:
            bound = composite_bound(inst, [atom])
            try:
                pert_inst = perturb(inst, [atom])
                pert = barrier_solve(pert_inst, eps)
            except (InfeasibleError, NotStrictlyFeasibleError):
                skipped += 1
                continue
            worst_gap_err = max(worst_gap_err, _gap_identity(pert_inst, pert))
            diff = pert.objective - base.objective
            worst_slack = min(worst_slack, diff - bound.lower + 2 * eps, bound.upper + 2 * eps - diff)
            assert bound.contains(diff, 2 * eps), f"seed {seed}, {atom}: {diff} not in [{bound.lower}, {bound.upper}]"
            checked += 1
    record_property("detail", f"{checked} perturbations checked, {skipped} perturbed-infeasible, "
                              f"smallest bracket margin {worst_slack:.2e}, worst gap identity error {worst_gap_err:.1e}")
    assert worst_gap_err <= 1e-9
    assert checked >= 50


# 8 -------------------------------------------------------------------------

def test_criterion_08_numerical_derivatives(record_property):
    h = 1e-6
    n_checks = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        inst = random_qcqp(rng)
        x = rng.uniform(0.0, 1.0, inst.n_arcs) * inst.u
        z = FlowPoint(x, rng.uniform(0.0, 1.0, inst.n_arcs) * inst.gamma(x))
        w = z.vector()
        d = derivatives(inst, z)
        assert rel_close(d.obj_grad, fd_gradient(lambda v: objective(inst, FlowPoint.from_vector(v)), w, h))
        # every family's gradient in one Jacobian: loss, capacity, nonneg, conservation, demand
        assert rel_close(d.jac.toarray(), fd_jacobian(lambda v: residuals(inst, FlowPoint.from_vector(v)), w, h))
        assert rel_close(np.diag(d.obj_hess),
                         fd_jacobian(lambda v: derivatives(inst, FlowPoint.from_vector(v)).obj_grad, w, h))
        for i in range(inst.n_rows):
            fd = fd_jacobian(lambda v: derivatives(inst, FlowPoint.from_vector(v)).jac[i].toarray().ravel(), w, h)
            assert rel_close(np.diag(d.constraint_hessian_diag(i, w.size)), fd)
        n_checks += 3 + inst.n_rows
        fb = FlowBarrier(inst, t=2.0)
        fb.const -= max(0.0, float(fb.residuals(w).max())) + 1.0
        assert rel_close(fb.gradient(w), fd_gradient(fb.value, w, h))
        n_checks += 1
    record_property("detail", f"{n_checks} derivative blocks on 20 random points agree to 1e-5 (h = {h})")


# 9 -------------------------------------------------------------------------

def test_criterion_09_benchmark_harness(record_property):
    spec = BenchSpec("cycle", n_max=2000, points=5, reps=3)
    res = run_bench(spec)
    rows = list(csv.reader(io.StringIO(res.csv_text())))
    assert rows[0] == ["family", "n", "nodes", "arcs", "median_s", "raw_times"]
    assert len(rows) == 6 and all(len(r) == 6 for r in rows)
    for r in rows[1:]:
        assert r[0] == "cycle" and int(r[1]) > 0
        assert len([float(t) for t in r[5].split(";")]) == 3
    medians = [float(r[4]) for r in rows[1:]]
    inversions = sum(b < a for a, b in zip(medians, medians[1:]))
    assert res.failures == 0
    assert inversions <= 1

    xs = [float(n) for n in spec.sizes()]
    worst = 0.0
    for coef in ([0.01, 2e-3, 1e-6], [1.0, -2.0, 3.0], [5.0, 0.25]):
        fit = polyfit([(x, sum(c * x ** i for i, c in enumerate(coef))) for x in xs], len(coef) - 1)
        err = np.abs(fit.coefficients - coef) / np.abs(coef)
        worst = max(worst, float(err.max()))
    record_property("detail", f"sizes {spec.sizes()}, medians {[round(m, 3) for m in medians]} s, "
                              f"{inversions} inversions, polyfit worst relative error {worst:.1e}")
    assert worst <= 1e-9


# 10 ------------------------------------------------------------------------

def _ramp_objective(grid: TimeGrid, step: PiecewiseConstantFn, solver_eps: float) -> float:
    red = build_qcqp(ramp_upgg(step))
    assert red.grid.k == grid.k
    return feasible_eps_solution(red.qcqp, solver_eps).objective


def test_criterion_10_demand_over_approximation(record_property):
    eps, solver_eps = 0.1, 1e-6
    k = sufficient_piece_count(c_prime_max=1.0, horizon=1.0, eps=eps, lipschitz_sum=1.0)
    coarse_grid, coarse = over_approximate({"d": lambda t: t}, {"d": 1.0}, eps, horizon=1.0, c_prime_max=1.0)
    fine_grid, fine = over_approximate({"d": lambda t: t}, {"d": 1.0}, eps, horizon=1.0, c_prime_max=1.0,
                                       k=4 * k)
    assert coarse_grid.k == k
    ts = np.linspace(0.0, 1.0, 10_001)[:-1]
    assert all(coarse["d"](t) >= t for t in ts)
    assert all(fine["d"](t) >= t for t in ts)
    obj_k = _ramp_objective(coarse_grid, coarse["d"], solver_eps)
    obj_fine = _ramp_objective(fine_grid, fine["d"], solver_eps)
    excess = obj_k - obj_fine
    record_property("detail", f"k = {k}, objective {obj_k:.6f} vs fine ({4 * k}) {obj_fine:.6f}, "
                              f"excess {excess:.4f} <= eps/2 = {eps / 2}")
    # each solve is within solver_eps of its own optimum
    assert excess <= eps / 2 + solver_eps
