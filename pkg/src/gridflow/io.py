"""JSON instance and solution files."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Union

import numpy as np

from .grid import Arc, Edge, GridNode, Source, Spgg, Upgg
from .postprocess import ArcFlow, DynamicFlow, IntervalFlow
from .pwfun import PiecewiseConstantFn

GridInstance = Union[Upgg, Spgg]


class SchemaError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where or '/'}: {message}")
        self.where = where


def _get(obj: dict, key: str, where: str, kind=None, required=True, default=None):
    if not isinstance(obj, dict):
        raise SchemaError(where, "expected an object")
    if key not in obj:
        if required:
            raise SchemaError(f"{where}/{key}", "missing")
        return default
    val = obj[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            raise SchemaError(f"{where}/{key}", f"expected a finite number, got {val!r}")
        return float(val)
    if kind is str and not isinstance(val, str):
        raise SchemaError(f"{where}/{key}", f"expected a string, got {val!r}")
    if kind is list and not isinstance(val, list):
        raise SchemaError(f"{where}/{key}", "expected an array")
    return val


def _pwc(obj: Any, where: str, end: float) -> PiecewiseConstantFn:
    bps = _get(obj, "breakpoints", where, list, required=False, default=[])
    vals = _get(obj, "values", where, list)
    for j, v in enumerate(bps + vals):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}", f"non-numeric entry {v!r}")
    try:
        return PiecewiseConstantFn(tuple(bps), tuple(vals), end)
    except ValueError as exc:
        raise SchemaError(where, str(exc)) from None


def parse_instance(data: dict) -> tuple[GridInstance, dict]:
    """Instance plus the optional ``solver`` section."""
    mode = _get(data, "mode", "", str)
    if mode not in ("upgg", "spgg"):
        raise SchemaError("/mode", f"expected 'upgg' or 'spgg', got {mode!r}")
    T = _get(data, "horizon", "", float)
    if T <= 0:
        raise SchemaError("/horizon", "must be positive")
    raw_nodes = _get(data, "nodes", "", list)
    nodes = []
    seen = set()
    for j, nd in enumerate(raw_nodes):
        w = f"/nodes/{j}"
        nid = _get(nd, "id", w, str)
        if nid in seen:
            raise SchemaError(f"{w}/id", f"duplicate node id {nid!r}")
        seen.add(nid)
        dem = nd.get("demand")
        demand = PiecewiseConstantFn.constant(0.0, T) if dem is None else _pwc(dem, f"{w}/demand", T)
        sup = nd.get("supply") or {"kind": "none"}
        kind = _get(sup, "kind", f"{w}/supply", str)
        rate = budget = pi = None
        if kind in ("rate", "cumulative"):
            cap = _get(sup, "cap", f"{w}/supply", float)
            if cap <= 0:
                raise SchemaError(f"{w}/supply/cap", "must be positive")
            pi = _pwc(_get(sup, "pi", f"{w}/supply"), f"{w}/supply/pi", cap)
            rate, budget = (cap, None) if kind == "rate" else (None, cap)
        elif kind != "none":
            raise SchemaError(f"{w}/supply/kind", f"expected rate, cumulative or none, got {kind!r}")
        nodes.append(GridNode(nid, demand, rate, budget, pi))

    key = "edges" if mode == "upgg" else "arcs"
    raw_lines = _get(data, key, "", list, required=False, default=[])
    lines = []
    for j, ln in enumerate(raw_lines):
        w = f"/{key}/{j}"
        u, v = _get(ln, "u", w, str), _get(ln, "v", w, str)
        for end, name in ((u, "u"), (v, "v")):
            if end not in seen:
                raise SchemaError(f"{w}/{name}", f"unknown node {end!r}")
        cap = _get(ln, "capacity", w, float)
        res = _get(ln, "resistance", w, float, required=False, default=0.0)
        lid = _get(ln, "id", w, str, required=False, default=f"{u}-{v}")
        if cap <= 0:
            raise SchemaError(f"{w}/capacity", f"line {lid}: capacity must be positive")
        if res < 0:
            raise SchemaError(f"{w}/resistance", f"line {lid}: resistance must be non-negative")
        lines.append((lid, u, v, cap, res))
    solver = data.get("solver") or {}
    if not isinstance(solver, dict):
        raise SchemaError("/solver", "expected an object")

    if mode == "upgg":
        return Upgg(tuple(nodes), tuple(Edge(*ln) for ln in lines), T), solver
    sources, sinks = {}, {}
    for j, n in enumerate(nodes):
        if n.rate_cap is not None:
            raise SchemaError(f"/nodes/{j}/supply/kind", "directed instances allow cumulative supply only")
        if n.budget is not None:
            sources[n.id] = Source(n.budget, n.pi)
        if n.demand.max_value() > 0:
            sinks[n.id] = n.demand
    g = Spgg(tuple(n.id for n in nodes), tuple(Arc(*ln) for ln in lines), sources, sinks, T)
    return g, solver


def load_instance(path: Union[str, Path]) -> tuple[GridInstance, dict]:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    return parse_instance(data)


def _pwc_dict(f: PiecewiseConstantFn) -> dict:
    return {"breakpoints": list(f.breakpoints), "values": list(f.values)}


def instance_to_dict(g: GridInstance, solver: dict | None = None) -> dict:
    if isinstance(g, Upgg):
        nodes = []
        for n in g.nodes:
            sup = {"kind": n.supply_kind}
            if n.supply_kind != "none":
                sup["cap"] = n.rate_cap if n.rate_cap is not None else n.budget
                sup["pi"] = _pwc_dict(n.pi)
            nodes.append({"id": n.id, "demand": _pwc_dict(n.demand), "supply": sup})
        lines = [{"id": e.id, "u": e.u, "v": e.v, "capacity": e.capacity, "resistance": e.resistance}
                 for e in g.edges]
        out = {"mode": "upgg", "horizon": g.horizon, "nodes": nodes, "edges": lines}
    else:
        nodes = []
        for v in g.nodes:
            d = g.sinks.get(v, PiecewiseConstantFn.constant(0.0, g.horizon))
            sup = {"kind": "none"}
            if v in g.sources:
                sup = {"kind": "cumulative", "cap": g.sources[v].budget, "pi": _pwc_dict(g.sources[v].pi)}
            nodes.append({"id": v, "demand": _pwc_dict(d), "supply": sup})
        lines = [{"id": a.id, "u": a.tail, "v": a.head, "capacity": a.capacity, "resistance": a.resistance}
                 for a in g.arcs]
        out = {"mode": "spgg", "horizon": g.horizon, "nodes": nodes, "arcs": lines}
    if solver:
        out["solver"] = solver
    return out


def save_instance(path, g: GridInstance, solver: dict | None = None) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(g, solver), indent=2))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, np.integer):
        return int(v)
    return v


def flow_to_dict(flow: DynamicFlow) -> dict:
    return {
        "intervals": [
            {"start": iv.start, "end": iv.end,
             "arc_flows": [{"edge": a.edge, "direction": a.direction, "x": a.x, "y": a.y} for a in iv.arc_flows],
             "production": dict(iv.production)}
            for iv in flow.intervals
        ],
        "objective": flow.objective,
    }


def flow_from_dict(data: dict) -> DynamicFlow:
    ivs = []
    for iv in data.get("intervals", []):
        ivs.append(IntervalFlow(
            float(iv["start"]), float(iv["end"]),
            [ArcFlow(a["edge"], int(a["direction"]), float(a["x"]), float(a["y"])) for a in iv["arc_flows"]],
            {k: float(p) for k, p in iv["production"].items()}))
    return DynamicFlow(ivs, float(data.get("objective", 0.0)))


def save_solution(path, flow: DynamicFlow, report: dict | None = None, extra: dict | None = None) -> None:
    doc = flow_to_dict(flow)
    doc["report"] = _jsonable(report or {})
    if extra:
        doc.update(_jsonable(extra))
    Path(path).write_text(json.dumps(doc, indent=2))


def load_solution(path) -> tuple[DynamicFlow, dict]:
    data = json.loads(Path(path).read_text())
    return flow_from_dict(data), data.get("report", {})
