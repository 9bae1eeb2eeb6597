"""Cluster construction for single-sink instances.

Two routes produce clusters.  :func:`find_clusters` covers the demand units
with low-load trees from the density oracle.  :func:`cluster_recursive` merges
sources along an acyclic unsplittable flow, re-running the unsplittable
conversion between passes.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping

from .errors import Infeasible, MalformedFlow
from .flow_engine import SplittableFlow, UnsplittableFlow, dgg_unsplittable, topological_order
from .graph_core import SsncInstance, UndirectedMultigraph
from .steiner_oracle import DensityCandidate, density_cap, max_density_tree

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cluster:
    tree: frozenset
    assigned: tuple[tuple[int, int], ...]  # (source, demand), sorted
    root: int | None = None

    @staticmethod
    def make(tree, assigned: Mapping[int, int] | tuple, root=None) -> "Cluster":
        items = assigned.items() if isinstance(assigned, Mapping) else assigned
        return Cluster(frozenset(tree), tuple(sorted((int(s), int(d)) for s, d in items)), root)

    @property
    def load(self) -> int:
        return sum(d for _, d in self.assigned)

    @property
    def sources(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.assigned)


def prune_tree(g: UndirectedMultigraph, nodes, keep) -> frozenset:
    """Spanning tree of the connected set ``nodes`` with non-``keep`` leaves stripped."""
    nodes = set(nodes)
    keep = set(keep) & nodes
    if not keep:
        return frozenset()
    start = min(keep)
    parent = {start: None}
    order = [start]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        for w in g.neighbors(u):
            if w in nodes and w not in parent:
                parent[w] = u
                order.append(w)
    needed = set()
    for v in keep:
        while v is not None and v not in needed:
            needed.add(v)
            v = parent[v]
    return frozenset(needed)


# ---------------------------------------------------------------------------
# low-load set cover


def load_bound(q: int) -> int:
    return math.ceil(math.log2(q)) + 1 if q > 1 else 1


@dataclass(frozen=True)
class LlscInstance:
    inst: SsncInstance
    required: tuple[tuple[int, int], ...]  # W-elements (source, unit index)
    capacitated: frozenset
    load_bound: int
    element_cost: tuple[Fraction, ...]  # node costs; W-elements cost zero

    @property
    def groundset_size(self) -> int:
        return self.inst.graph.node_count + len(self.required)


def build_llsc(inst: SsncInstance) -> LlscInstance:
    required = tuple((s, j) for s, d in inst.sources for j in range(d))
    capacitated = frozenset(v for v in range(inst.graph.node_count) if v != inst.sink)
    costs = tuple(inst.node_cost(v) for v in range(inst.graph.node_count))
    return LlscInstance(inst, required, capacitated, load_bound(inst.capacity), costs)


@dataclass
class LlscCover:
    sets: list[DensityCandidate]
    loads: dict[int, int]
    cost: Fraction
    oracle_calls: int
    exclusion_load: int


def llsc_solve(llsc: LlscInstance, oracle: Callable = max_density_tree, inflation_cap: int = 4) -> LlscCover:
    """Greedy min-density cover with exponential weight inflation on overloaded nodes."""
    inst = llsc.inst
    g = inst.graph
    p = llsc.load_bound
    exclusion = inflation_cap * p * max(1, math.ceil(math.log2(max(2, llsc.groundset_size))))
    demand_of = dict(inst.sources)
    covered: dict[int, int] = defaultdict(int)
    loads: dict[int, int] = defaultdict(int)
    sets: list[DensityCandidate] = []
    calls = 0
    while any(covered[s] < d for s, d in demand_of.items()):
        beta = []
        for v in range(g.node_count):
            c = llsc.element_cost[v]
            if v not in llsc.capacitated:
                beta.append(c)
            elif loads[v] >= exclusion:
                beta.append(None)
            elif loads[v] >= p:
                beta.append(c * 2 ** loads[v])
            else:
                beta.append(c)
        calls += 1
        cand = oracle(g, beta, dict(covered), inst.capacity, inst.sink, demand_of)
        sets.append(cand)
        for s, u in cand.covered.items():
            covered[s] += u
        for v in cand.tree:
            if v in llsc.capacitated:
                loads[v] += 1
    cost = g.cost_of(v for c in sets for v in c.tree if v != inst.sink)
    return LlscCover(sets, dict(loads), cost, calls, exclusion)


@dataclass
class ClusterReport:
    clusters: list[Cluster]
    membership: dict[int, int]
    cost: Fraction
    oracle_calls: int
    cover_loads: dict[int, int]


def find_clusters(inst: SsncInstance, inflation_cap: int = 4) -> ClusterReport:
    """Clusters of demand in ``[q, cap]`` (or containing the sink) covering every source once."""
    g = inst.graph
    t = inst.sink
    q = inst.capacity
    cap = max(density_cap(q), q)
    demand_of = dict(inst.sources)
    cover = llsc_solve(build_llsc(inst), inflation_cap=inflation_cap)
    owner: dict[int, int] = {}
    raw: list[tuple[set, dict[int, int]]] = []
    for i, cand in enumerate(cover.sets):
        assigned = {}
        for s in sorted(cand.covered):
            if s not in owner:
                owner[s] = i
                assigned[s] = demand_of[s]
        raw.append((set(cand.tree), assigned))
    # clusters whose assigned demand fell below q absorb an overlapping cluster
    changed = True
    while changed:
        changed = False
        for i, (tree, assigned) in enumerate(raw):
            if not assigned or t in tree or sum(assigned.values()) >= q:
                continue
            partners = [j for j, (t2, a2) in enumerate(raw) if j != i and a2 and tree & t2]
            if not partners:
                continue
            j = max(partners, key=lambda j: (sum(raw[j][1].values()), -j))
            raw[j][0].update(tree)
            raw[j][1].update(assigned)
            raw[i] = (set(), {})
            changed = True
            break
    clusters: list[Cluster] = []
    for tree, assigned in raw:
        if not assigned:
            continue
        sink_side = t in tree
        for part in _partition(assigned, q, cap, sink_side):
            keep = set(part) | ({t} if sink_side else set())
            sub = prune_tree(g, tree, keep)
            clusters.append(Cluster.make(sub, part, t if sink_side else None))
    membership: dict[int, int] = defaultdict(int)
    for c in clusters:
        for v in c.tree:
            membership[v] += 1
    cost = g.cost_of(v for c in clusters for v in c.tree if v != t)
    return ClusterReport(clusters, dict(membership), cost, cover.oracle_calls, cover.loads)


def _partition(assigned: Mapping[int, int], q: int, cap: int, sink_side: bool) -> list[dict[int, int]]:
    total = sum(assigned.values())
    if total <= cap:
        return [dict(assigned)]
    parts: list[dict[int, int]] = []
    cur: dict[int, int] = {}
    for s in sorted(assigned, key=lambda s: (-assigned[s], s)):
        d = assigned[s]
        if sink_side:
            if sum(cur.values()) + d > cap:
                parts.append(cur)
                cur = {}
            cur[s] = d
        else:
            cur[s] = d
            if sum(cur.values()) >= q:
                parts.append(cur)
                cur = {}
    if cur:
        if not sink_side and parts and sum(cur.values()) < q:
            parts[-1].update(cur)
        else:
            parts.append(cur)
    return parts


# ---------------------------------------------------------------------------
# merging along an acyclic unsplittable flow


@dataclass(frozen=True)
class Merge:
    center: int
    sources: tuple[int, ...]
    tau: frozenset
    demand: int
    output: bool


@dataclass
class StepResult:
    outputs: list[Cluster]
    small: dict[int, Cluster]  # new source -> its cluster
    next_demand: dict[int, int]
    suffix_flow: SplittableFlow
    merges: list[Merge]


def merge_nodes(paths: Mapping[int, tuple]) -> tuple[list[int], dict[int, set]]:
    """Nodes entered by two or more distinct flow arcs (a source counts as its own arc)."""
    incoming: dict[int, set] = defaultdict(set)
    for s, path in paths.items():
        incoming[path[0]].add(("src", s))
        for a, b in zip(path, path[1:]):
            incoming[b].add(a)
    order = topological_order(
        [(a, b) for path in paths.values() for a, b in zip(path, path[1:])],
        [p[0] for p in paths.values()],
    )
    return [v for v in order if len(incoming[v]) >= 2], incoming


def cluster_step(
    X: Mapping[int, int],
    F: UnsplittableFlow,
    trees: Mapping[int, Cluster],
    q: int,
    sink: int,
    cap: int | None = None,
) -> StepResult:
    """One pass of the merge loop: every remaining source ends in an output or a small cluster."""
    cap = cap if cap is not None else max(density_cap(q), q)
    paths = {}
    for s in X:
        path = F.paths.get(s)
        if path is None or path[0] != s or path[-1] != sink:
            raise MalformedFlow("source lacks a path to the sink", source=s)
        if F.demands.get(s) != X[s]:
            raise MalformedFlow("flow demand differs from the source demand", source=s)
        paths[s] = tuple(path)
    outputs: list[Cluster] = []
    small: dict[int, Cluster] = {}
    next_demand: dict[int, int] = {}
    suffix: dict[int, list] = defaultdict(list)
    merges: list[Merge] = []
    used: set = set()
    remaining = dict(paths)
    while remaining:
        order, _ = merge_nodes(remaining)
        v = next((x for x in order if x != sink), sink)
        if v == sink:
            S = sorted(remaining)
        else:
            S = sorted(s for s, p in remaining.items() if v in p)
        tau = set()
        for s in S:
            p = remaining[s]
            tau.update(p[: p.index(v) + 1])
        tau_core = tau - {sink}
        if used & tau_core:
            raise MalformedFlow("merge trees overlap", center=v)
        used |= tau_core
        demand = sum(X[s] for s in S)
        tree = set(tau)
        assigned: dict[int, int] = {}
        for s in S:
            tree |= trees[s].tree
            assigned.update(dict(trees[s].assigned))
        is_output = demand >= q or sink in tree
        merges.append(Merge(v, tuple(S), frozenset(tau), demand, is_output))
        if is_output:
            if sink in tree:
                outputs.extend(_sink_parts(S, X, remaining, trees, sink, cap))
            else:
                outputs.append(Cluster.make(tree, assigned, v))
        else:
            small[v] = Cluster.make(tree, assigned, v)
            next_demand[v] = demand
            for s in S:
                p = remaining[s]
                suffix[v].append((p[p.index(v):], Fraction(X[s])))
        for s in S:
            del remaining[s]
    flow_paths = {}
    for v, plist in suffix.items():
        agg: dict[tuple, Fraction] = defaultdict(Fraction)
        for p, a in plist:
            agg[p] += a
        flow_paths[v] = sorted(agg.items())
    sf = SplittableFlow(sink, {v: Fraction(d) for v, d in next_demand.items()}, flow_paths)
    return StepResult(outputs, small, next_demand, sf, merges)


def _sink_parts(S, X, remaining, trees, sink, cap) -> list[Cluster]:
    """Split the sink merge into parts of demand at most ``cap``; parts share only the sink."""
    parts: list[list[int]] = []
    cur: list[int] = []
    load = 0
    for s in sorted(S, key=lambda s: (-X[s], s)):
        if cur and load + X[s] > cap:
            parts.append(cur)
            cur, load = [], 0
        cur.append(s)
        load += X[s]
    if cur:
        parts.append(cur)
    out = []
    for part in parts:
        tree = {sink}
        assigned: dict[int, int] = {}
        for s in part:
            tree.update(remaining[s])
            tree |= trees[s].tree
            assigned.update(dict(trees[s].assigned))
        out.append(Cluster.make(tree, assigned, sink))
    return out


@dataclass
class RecursionReport:
    clusters: list[Cluster]
    depth: int
    max_flow_load: list[Fraction] = field(default_factory=list)  # per pass
    steps: list[StepResult] = field(default_factory=list)


def cluster_recursive(
    X: Mapping[int, int],
    F: UnsplittableFlow,
    trees: Mapping[int, Cluster] | None,
    q: int,
    sink: int,
    cap: int | None = None,
) -> RecursionReport:
    """Repeat :func:`cluster_step` on the merged sources until no small cluster remains."""
    if trees is None:
        trees = {s: Cluster.make({s}, {s: d}) for s, d in X.items()}
    report = RecursionReport([], 0)
    X = dict(X)
    while X:
        report.depth += 1
        loads = F.node_loads()
        report.max_flow_load.append(max((l for v, l in loads.items() if v != sink), default=Fraction(0)))
        step = cluster_step(X, F, trees, q, sink, cap)
        report.steps.append(step)
        report.clusters.extend(step.outputs)
        if not step.small:
            break
        F = dgg_unsplittable(step.suffix_flow, sink)
        X = step.next_demand
        trees = step.small
    return report
