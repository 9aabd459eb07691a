"""Command line entry point: ``gridflow solve | sensitivity | bench | validate``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bench import FAMILIES, BenchSpec, run_bench
from .grid import Upgg, trivial_self_supply_check, validate
from .io import SchemaError, _jsonable, load_instance, save_solution
from .postprocess import check_dynamic_flow, to_dynamic_flow
from .qcqp import constants, residuals
from .reduce import Reduction, ReductionError, build_qcqp
from .sensitivity import composite_bound, local_sensitivities
from .solver import (ENGINES, BarrierConfig, DegenerateInstanceError, InfeasibleError,
                     NotStrictlyFeasibleError, PathFollowConfig, SolverError, barrier_solve,
                     feasible_eps_solution, relative_fptas)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_NOT_STRICT = 0, 1, 2, 3

log = logging.getLogger("gridflow")


def _emit(obj, path: Optional[str] = None):
    text = json.dumps(_jsonable(obj), indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


def _solver_setup(section: dict, engine_flag: Optional[str]):
    engine = engine_flag or section.get("engine", "barrier")
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "barrier":
        return engine, BarrierConfig.from_dict(section)
    return engine, PathFollowConfig.from_dict(section)


def _load(path: str):
    g, section = load_instance(path)
    rep = validate(g)
    if not rep.ok:
        raise SchemaError("", f"instance fails validation:\n{rep}")
    return g, section


def cmd_solve(args) -> int:
    g, section = _load(args.input)
    engine, config = _solver_setup(section, args.engine)
    try:
        red = build_qcqp(g)
    except ReductionError as exc:
        if "no supply can reach" in str(exc):
            _emit({"status": "infeasible", "certificate": {"unreachable_demand": str(exc)}})
            return EXIT_INFEASIBLE
        raise
    inst = red.qcqp
    mode = "absolute"
    try:
        if args.eps_abs is not None:
            rep = feasible_eps_solution(inst, args.eps_abs, engine, config)
        else:
            try:
                rep = relative_fptas(inst, args.eps_rel, engine, config)
                mode = "relative"
            except DegenerateInstanceError:
                # OPT may be zero; fall back to an absolute target of the same size
                rep = feasible_eps_solution(inst, args.eps_rel, engine, config)
    except InfeasibleError as exc:
        _emit({"status": "infeasible", "certificate": exc.certificate()})
        return EXIT_INFEASIBLE
    except NotStrictlyFeasibleError as exc:
        _emit({"status": "not-strictly-feasible", "message": str(exc)})
        return EXIT_NOT_STRICT

    report = rep.summary()
    report["mode"] = mode
    if args.raw:
        flow, z, _ = to_dynamic_flow(red, rep.point, None, merge=False, rounding=False)
        flow.objective = rep.objective
        extra = {"raw": True, "static": {"x": z.x, "y": z.y,
                                         "max_residual": float(residuals(inst, z).max(initial=-math.inf))}}
        problems = []
    else:
        flow, z, stats = to_dynamic_flow(red, rep.point, g)
        problems = check_dynamic_flow(g, flow)
        report["rounding_events"] = stats.events
        extra = {"raw": False}
    report["feasibility_problems"] = problems
    out = {"status": "ok", "objective": flow.objective, "solver_objective": rep.objective,
           "production": flow.production_schedule(), "report": report}
    if args.output:
        save_solution(args.output, flow, report, extra)
    _emit(out)
    if problems:
        log.error("solution failed the feasibility re-check: %s", problems[:3])
        return EXIT_ERROR
    return EXIT_OK


def _parse_atom(text: str, flag: str) -> tuple[str, float]:
    if "=" not in text:
        raise ValueError(f"{flag} expects NAME=DELTA, got {text!r}")
    name, val = text.rsplit("=", 1)
    return name, float(val)


def expand_atoms(red: Reduction, demands, capacities) -> list[tuple[str, int, float]]:
    """Map grid-level atoms onto every interval copy (and both directions of an edge)."""
    atoms = []
    node_tags, arc_tags = red.provenance.node_tags, red.provenance.arc_tags
    sinks = set(red.qcqp.sinks.tolist())
    for name, delta in demands:
        hits = [v for v, t in enumerate(node_tags) if t.kind == "sink" and t.ref == name and v in sinks]
        if not hits:
            raise ValueError(f"--demand: {name!r} is not a demand node of the reduced instance")
        atoms.extend(("demand", v, delta) for v in hits)
    for name, delta in capacities:
        hits = [a for a, t in enumerate(arc_tags) if t.kind == "grid-edge" and t.ref == name]
        if not hits:
            raise ValueError(f"--capacity: no line named {name!r}")
        atoms.extend(("capacity", a, delta) for a in hits)
    return atoms


def cmd_sensitivity(args) -> int:
    g, section = _load(args.input)
    red = build_qcqp(g)
    inst = red.qcqp
    demands = [_parse_atom(t, "--demand") for t in args.demand]
    caps = [_parse_atom(t, "--capacity") for t in args.capacity]
    atoms = expand_atoms(red, demands, caps)
    bound = composite_bound(inst, atoms)
    tags = red.provenance.arc_tags

    def label(kind, target):
        if kind == "demand":
            return inst.name(target)
        t = tags[target]
        return f"{t.ref}:{t.direction:+d}@{t.interval}"

    out = {"status": "ok", "bound": {"lower": bound.lower, "upper": bound.upper},
           "atoms": [{"kind": k, "target": label(k, t), "delta": d} for k, t, d in atoms]}
    eps = args.eps_abs if args.eps_abs is not None else args.eps_rel * max(constants(inst).F, 1.0)
    try:
        rep = barrier_solve(inst, eps, BarrierConfig.from_dict(section))
    except InfeasibleError as exc:
        out.update(status="infeasible", certificate=exc.certificate())
        _emit(out, args.output)
        return EXIT_INFEASIBLE
    except NotStrictlyFeasibleError as exc:
        out.update(status="not-strictly-feasible", message=str(exc))
        _emit(out, args.output)
        return EXIT_NOT_STRICT
    if inst.n_arcs:
        _, processed, _ = to_dynamic_flow(red, rep.point)
        loc = local_sensitivities(inst, rep, processed)
        out["local"] = {
            "gap": loc.gap,
            "objective": rep.objective,
            "demand": {inst.name(int(v)): float(s) for v, s in zip(inst.sinks, loc.demand)},
            "capacity": {label("capacity", a): float(loc.capacity[a])
                         for a in range(inst.n_arcs) if tags[a].kind == "grid-edge"},
            "resistance": {label("capacity", a): float(loc.resistance[a])
                           for a in range(inst.n_arcs) if tags[a].kind == "grid-edge"},
            "caveats": list(loc.caveats) + ["capacity estimates are one-sided (tightening only)"],
        }
    _emit(out, args.output)
    return EXIT_OK


def cmd_bench(args) -> int:
    degrees = tuple(int(d) for d in args.fit.split(",") if d.strip())
    spec = BenchSpec(args.family, args.nmax, args.points, args.reps, args.seed, degrees, args.eps_rel)
    res = run_bench(spec)
    text = res.csv_text()
    summary = res.summary()
    if args.output:
        Path(args.output).write_text(text)
        _emit(summary)
    else:
        sys.stdout.write(text)
        print(json.dumps(_jsonable(summary)), file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    g, _ = load_instance(args.input)
    rep = validate(g)
    out = {"ok": rep.ok, "violations": [str(v) for v in rep.violations]}
    if isinstance(g, Upgg) and rep.ok:
        out["trivially_self_supplied"] = trivial_self_supply_check(g)
    _emit(out)
    return EXIT_OK if rep.ok else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridflow", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve an instance file")
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.add_argument("--eps-rel", type=float, default=1e-2)
    s.add_argument("--eps-abs", type=float)
    s.add_argument("--engine", choices=ENGINES)
    s.add_argument("--raw", action="store_true", help="skip merging and rounding")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sensitivity", help="perturbation brackets and local estimates")
    s.add_argument("--input", required=True)
    s.add_argument("--output")
    s.add_argument("--demand", action="append", default=[], metavar="NODE=DELTA")
    s.add_argument("--capacity", action="append", default=[], metavar="EDGE=DELTA")
    s.add_argument("--eps-rel", type=float, default=1e-6)
    s.add_argument("--eps-abs", type=float)
    s.set_defaults(func=cmd_sensitivity)

    s = sub.add_parser("bench", help="timing harness")
    s.add_argument("--family", choices=sorted(FAMILIES), default="cycle")
    s.add_argument("--nmax", type=int, default=100)
    s.add_argument("--points", type=int, default=5)
    s.add_argument("--reps", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fit", default="1,2")
    s.add_argument("--eps-rel", type=float, default=1e-2)
    s.add_argument("--output")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("validate", help="check an instance file")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SchemaError, ValueError, ReductionError, SolverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
