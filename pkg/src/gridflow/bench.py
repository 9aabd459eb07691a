"""Benchmark families, the timed end-to-end pipeline, and least-squares fits."""

from __future__ import annotations

import csv
import io
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .grid import Edge, GridNode, Upgg
from .pwfun import PiecewiseConstantFn
from .qcqp import constants
from .reduce import build_qcqp
from .solver import BarrierConfig, barrier_solve

FAMILIES = {"cycle": 3, "circular-ladder": 6, "complete": 2}
CSV_HEADER = ("family", "n", "nodes", "arcs", "median_s", "raw_times")


def family_edges(family: str, n: int) -> list[tuple[int, int]]:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if n < FAMILIES[family]:
        raise ValueError(f"{family} needs at least {FAMILIES[family]} nodes, got {n}")
    if family == "cycle":
        return [(i, (i + 1) % n) for i in range(n)]
    if family == "complete":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if n % 2:
        raise ValueError("a circular ladder has an even number of nodes")
    h = n // 2
    ring = [(i, (i + 1) % h) for i in range(h)]
    return ring + [(h + a, h + b) for a, b in ring] + [(i, h + i) for i in range(h)]


def generate_bench_instance(family: str, n: int, seed: int) -> Upgg:
    """Random instance where every node could supply itself, so it is feasible but not trivial to optimise."""
    edges = family_edges(family, n)
    rng = np.random.default_rng(seed)
    T = 1.0
    # one set of demand breakpoints per instance keeps the time grid at 4 intervals
    bps = tuple(np.sort(rng.uniform(0.05, 0.95, size=3)))
    nodes = []
    for i in range(n):
        dvals = tuple(rng.uniform(1.0, 2.0, size=4))
        demand = PiecewiseConstantFn(bps, dvals, T)
        budget = 2.0 * T * max(dvals)
        split = rng.uniform(0.25, 0.75) * budget
        pi = PiecewiseConstantFn((split,), (rng.uniform(1.0, 2.0), rng.uniform(2.0, 4.0)), budget)
        nodes.append(GridNode(f"n{i}", demand, budget=budget, pi=pi))
    lines = []
    for j, (a, b) in enumerate(edges):
        u = rng.uniform(1.0, 5.0)
        r = rng.uniform(0.0, 0.4 / u)
        lines.append(Edge(f"e{j}", f"n{a}", f"n{b}", u, r))
    return Upgg(tuple(nodes), tuple(lines), T)


@dataclass
class PipelineResult:
    objective: float
    x: dict
    y: dict
    nodes: int
    arcs: int


def run_pipeline(g: Upgg, eps_rel: float = 1e-2, config: Optional[BarrierConfig] = None) -> PipelineResult:
    """Reduce, solve once with the barrier engine, keep grid-edge flows, drop cancelled directions."""
    red = build_qcqp(g)
    inst = red.qcqp
    F = constants(inst).F
    eps = eps_rel * F if F > 0 else eps_rel
    rep = barrier_solve(inst, eps, config or BarrierConfig.aggressive())
    x, y = {}, {}
    for a, tag in enumerate(red.provenance.arc_tags):
        if tag.kind == "grid-edge":
            key = (tag.ref, tag.direction, tag.interval)
            x[key], y[key] = float(rep.point.x[a]), float(rep.point.y[a])
    for (ref, d, i) in list(x):
        if d != 1:
            continue
        fwd, bwd = (ref, 1, i), (ref, -1, i)
        if bwd not in x:
            continue
        if y[fwd] > x[bwd]:
            del x[bwd], y[bwd]
        elif y[bwd] > x[fwd]:
            del x[fwd], y[fwd]
    return PipelineResult(rep.objective, x, y, inst.n_nodes, inst.n_arcs)


@dataclass
class FitResult:
    degree: int
    coefficients: np.ndarray  # lowest order first
    rss: float

    def __call__(self, x):
        return np.polyval(self.coefficients[::-1], x)


def polyfit(points: Sequence[tuple[float, float]], degree: int) -> FitResult:
    """Ordinary least squares through the normal equations, columns scaled to unit norm."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < degree + 1:
        raise ValueError(f"degree {degree} fit needs at least {degree + 1} points")
    xs, ys = pts[:, 0], pts[:, 1]
    A = np.vander(xs, degree + 1, increasing=True)
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0):
        raise ValueError("rank-deficient design matrix")
    As = A / scale
    N = As.T @ As
    try:
        c = linalg.cho_factor(N, check_finite=False)
    except linalg.LinAlgError:
        raise ValueError("rank-deficient design matrix") from None
    if np.linalg.cond(N) > 1e14:
        raise ValueError("rank-deficient design matrix")
    coef = linalg.cho_solve(c, As.T @ ys)
    # one refinement step recovers what the squared condition number costs
    coef += linalg.cho_solve(c, As.T @ (ys - As @ coef))
    resid = ys - As @ coef
    return FitResult(degree, coef / scale, float(resid @ resid))


@dataclass
class BenchSpec:
    family: str = "cycle"
    n_max: int = 100
    points: int = 5
    reps: int = 3
    seed: int = 0
    degrees: tuple[int, ...] = (1, 2)
    eps_rel: float = 1e-2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.points < 2 or self.reps < 1:
            raise ValueError("need at least 2 sample points and 1 repetition")
        self.sizes()

    def sizes(self) -> list[int]:
        lo = FAMILIES[self.family]
        raw = np.linspace(lo, self.n_max, self.points)
        out = [int(round(v)) for v in raw]
        if self.family == "circular-ladder":
            out = [v + (v % 2) for v in out]
        if any(b <= a for a, b in zip(out, out[1:])):
            raise ValueError(f"sample sizes not strictly increasing: {out}")
        return out

    def instance_seed(self, i: int, j: int) -> int:
        return int(np.random.SeedSequence([self.seed, i, j]).generate_state(1)[0])

    def order(self) -> np.ndarray:
        return np.random.default_rng(self.seed).permutation(self.points * self.reps)


@dataclass
class BenchRow:
    family: str
    n: int
    nodes: int
    arcs: int
    times: list[Optional[float]] = field(default_factory=list)

    @property
    def median(self) -> float:
        ok = [t for t in self.times if t is not None]
        return statistics.median(ok) if ok else float("nan")


@dataclass
class BenchResult:
    spec: BenchSpec
    rows: list[BenchRow]
    fits: list[FitResult]
    failures: int
    order: np.ndarray

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            raw = ";".join("nan" if t is None else f"{t:.6f}" for t in r.times)
            w.writerow([r.family, r.n, r.nodes, r.arcs, f"{r.median:.6f}", raw])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "family": self.spec.family,
            "sizes": [r.n for r in self.rows],
            "medians": [r.median for r in self.rows],
            "failures": self.failures,
            "fits": [{"degree": f.degree, "coefficients": f.coefficients.tolist(), "rss": f.rss}
                     for f in self.fits],
        }


def threads_from_env() -> int:
    try:
        return max(1, int(os.environ.get("GRIDFLOW_THREADS", "1")))
    except ValueError:
        return 1


def run_bench(spec: BenchSpec, runner: Optional[Callable[[Upgg], object]] = None,
              threads: Optional[int] = None) -> BenchResult:
    runner = runner or (lambda g: run_pipeline(g, spec.eps_rel))
    sizes = spec.sizes()
    instances = {}
    rows = []
    for i, n in enumerate(sizes):
        for j in range(spec.reps):
            instances[(i, j)] = generate_bench_instance(spec.family, n, spec.instance_seed(i, j))
        red = build_qcqp(instances[(i, 0)])
        rows.append(BenchRow(spec.family, n, red.qcqp.n_nodes, red.qcqp.n_arcs, [None] * spec.reps))
    order = spec.order()

    def timed(flat: int):
        i, j = divmod(int(flat), spec.reps)
        start = time.perf_counter()
        try:
            runner(instances[(i, j)])
        except Exception:  # failures are counted, not fatal
            return i, j, None
        return i, j, time.perf_counter() - start

    threads = threads or threads_from_env()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(timed, order))
    else:
        results = [timed(k) for k in order]
    failures = 0
    for i, j, t in results:
        rows[i].times[j] = t
        failures += t is None
    pts = [(r.n, r.median) for r in rows if r.median == r.median]
    fits = [polyfit(pts, d) for d in spec.degrees if len(pts) > d]
    return BenchResult(spec, rows, fits, failures, order)
