"""Single-sink solver: cluster, aggregate at cluster roots, route roots to the sink."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .clustering import Cluster, ClusterReport, find_clusters, load_bound
from .errors import Infeasible, NodecapError
from .flow_engine import min_cost_flow_node_cap, single_sink_max_flow
from .graph_core import DirectedNodeCapGraph, SsncInstance, UndirectedMultigraph, validate_instance

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SsncKnobs:
    u: int | None = None  # per-node path cap; default from the instance size
    u_multiplier: int = 1
    inflation_cap: int = 4
    max_escalations: int = 4
    precheck: bool = True


def default_u(q: int, n: int) -> int:
    return math.ceil(math.log(q) * math.log(n) ** 2) + 1 if q > 1 and n > 1 else 1


@dataclass
class Aggregation:
    cluster: Cluster
    root: int
    paths: dict[int, tuple[int, ...]]  # source -> path to root inside the tree
    loads: dict[int, int]


@dataclass
class SsncSolution:
    nodes: frozenset
    routing: dict[int, tuple[int, ...]]
    cost: Fraction
    loads: dict[int, int]
    congestion: Fraction
    u: int
    load_bound: int
    clusters: list[Cluster]
    escalations: list[int] = field(default_factory=list)
    cluster_report: ClusterReport | None = None


def aggregate_at_roots(g: UndirectedMultigraph, clusters: Sequence[Cluster], sink: int) -> list[Aggregation]:
    out = []
    for c in clusters:
        if sink in c.tree:
            root = sink
        elif c.root is not None and c.root in c.tree:
            root = c.root
        else:
            root = max(c.assigned, key=lambda sd: (sd[1], -sd[0]))[0]
        parent = {root: None}
        order = [root]
        i = 0
        while i < len(order):
            u = order[i]
            i += 1
            for w in g.neighbors(u):
                if w in c.tree and w not in parent:
                    parent[w] = u
                    order.append(w)
        paths = {}
        loads: dict[int, int] = defaultdict(int)
        for s, d in c.assigned:
            path = [s]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            paths[s] = tuple(path)
            for v in path:
                loads[v] += d
        out.append(Aggregation(c, root, paths, dict(loads)))
    return out


def route_roots_to_sink(roots: Sequence[tuple[int, int]], inst: SsncInstance, u: int) -> list[tuple[int, ...]]:
    """One min-cost path per root under per-node path cap ``u`` (scaled at fake roots)."""
    if u < 1:
        raise Infeasible("per-node cap must be positive", u=u)
    g = DirectedNodeCapGraph.from_undirected(
        inst.graph,
        u,
        unbounded={inst.sink},
        overrides={v: Fraction(u) * Fraction(m) for v, m in inst.capacity_scale.items()},
        zero_cost={inst.sink},
    )
    return min_cost_flow_node_cap(g, [r for r, _ in roots], inst.sink).paths


def loop_erase(path: Sequence[int]) -> tuple[int, ...]:
    out: list[int] = []
    pos: dict[int, int] = {}
    for v in path:
        if v in pos:
            cut = pos[v]
            for w in out[cut + 1:]:
                del pos[w]
            out = out[: cut + 1]
        else:
            pos[v] = len(out)
            out.append(v)
    return tuple(out)


def solve_ssnc(inst: SsncInstance, knobs: SsncKnobs = SsncKnobs()) -> SsncSolution:
    problems = validate_instance(inst)
    if problems:
        raise Infeasible("invalid instance", problems=problems)
    g = inst.graph
    n = g.node_count
    q = inst.capacity
    if q > n ** 4:
        raise Infeasible("capacity exceeds n^4; unsupported regime", capacity=q, nodes=n)
    if knobs.precheck and inst.sources:
        dg = DirectedNodeCapGraph.from_ssnc(inst)
        value, _ = single_sink_max_flow(dg, {s: Fraction(d) for s, d in inst.sources}, inst.sink)
        if value < inst.total_demand:
            raise Infeasible("demands exceed the fractional routing capacity", routable=value, demand=inst.total_demand)
    if not inst.sources:
        return SsncSolution(frozenset(), {}, Fraction(0), {}, Fraction(0), 0, load_bound(q), [])
    try:
        report = find_clusters(inst, knobs.inflation_cap)
    except NodecapError as exc:
        exc.diagnostics.setdefault("phase", "clustering")
        raise
    aggs = aggregate_at_roots(g, report.clusters, inst.sink)
    pending = [a for a in aggs if a.root != inst.sink]
    u = (knobs.u or default_u(q, n)) * knobs.u_multiplier
    escalations = []
    root_paths: list[tuple[int, ...]] = []
    for attempt in range(knobs.max_escalations + 1):
        try:
            root_paths = route_roots_to_sink([(a.root, a.cluster.load) for a in pending], inst, u)
            break
        except Infeasible as exc:
            if attempt == knobs.max_escalations:
                exc.diagnostics.update(phase="routing", u=u, escalations=escalations)
                raise
            log.info("root routing infeasible at u=%d; doubling", u)
            escalations.append(u)
            u *= 2
    routing: dict[int, tuple[int, ...]] = {}
    root_path_of = {id(a): p for a, p in zip(pending, root_paths)}
    for a in aggs:
        tail = root_path_of.get(id(a), (inst.sink,))
        for s, p in a.paths.items():
            routing[s] = loop_erase(p + tail[1:])
    return finish_solution(inst, routing, u, report, escalations)


def finish_solution(inst, routing, u, report, escalations) -> SsncSolution:
    demand = dict(inst.sources)
    loads: dict[int, int] = defaultdict(int)
    for s, p in routing.items():
        if p[0] != s or p[-1] != inst.sink:
            raise NodecapError("routing path does not join its source to the sink", source=s)
        for v in p:
            loads[v] += demand[s]
    nodes = frozenset(v for p in routing.values() for v in p)
    cost = sum((inst.node_cost(v) for v in nodes), Fraction(0))
    congestion = max((Fraction(l, inst.capacity) for v, l in loads.items() if v != inst.sink), default=Fraction(0))
    return SsncSolution(
        nodes, routing, cost, dict(loads), congestion, u, load_bound(inst.capacity),
        report.clusters if report else [], escalations, report,
    )
