"""Graph and instance types shared by the solvers.

Nodes are the integers ``0..n-1``.  Costs are kept as :class:`fractions.Fraction`
so that every cost comparison in the audits is exact.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value)
    return Fraction(value)


@dataclass(frozen=True)
class UndirectedMultigraph:
    node_cost: tuple[Fraction, ...]
    edges: tuple[tuple[int, int], ...] = ()
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        costs = tuple(as_fraction(c) for c in self.node_cost)
        object.__setattr__(self, "node_cost", costs)
        labels = tuple(self.labels) if self.labels else tuple(str(v) for v in range(len(costs)))
        object.__setattr__(self, "labels", labels)
        edges = tuple((int(u), int(v)) for u, v in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(labels) != len(costs):
            raise ValueError("labels and node_cost differ in length")
        for v, c in enumerate(costs):
            if c < 0:
                raise ValueError(f"negative cost on node {v}")
        n = len(costs)
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references a missing node")

    @property
    def node_count(self) -> int:
        return len(self.node_cost)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        """Sorted, de-duplicated neighbour lists."""
        nbrs: list[set[int]] = [set() for _ in range(self.node_count)]
        for u, v in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        return tuple(tuple(sorted(s)) for s in nbrs)

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adjacency[v]

    def cost_of(self, nodes: Iterable[int]) -> Fraction:
        return sum((self.node_cost[v] for v in set(nodes)), Fraction(0))

    def reachable(self, start: int, allowed: set[int] | None = None) -> set[int]:
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for w in self.adjacency[u]:
                if w not in seen and (allowed is None or w in allowed):
                    seen.add(w)
                    queue.append(w)
        return seen

    def is_connected_set(self, nodes: Iterable[int]) -> bool:
        nodes = set(nodes)
        if not nodes:
            return False
        return self.reachable(min(nodes), nodes) == nodes

    def with_costs(self, costs: Sequence) -> "UndirectedMultigraph":
        return UndirectedMultigraph(tuple(costs), self.edges, self.labels)


def induced_subgraph(
    g: UndirectedMultigraph, keep: Iterable[int]
) -> tuple[UndirectedMultigraph, dict[int, int]]:
    """Return ``G[keep]`` relabelled to ``0..|keep|-1`` plus the old->new map."""
    order = sorted(set(keep))
    for v in order:
        if not 0 <= v < g.node_count:
            raise ValueError(f"node {v} not in graph")
    new_of = {v: i for i, v in enumerate(order)}
    edges = tuple((new_of[u], new_of[v]) for u, v in g.edges if u in new_of and v in new_of)
    sub = UndirectedMultigraph(
        tuple(g.node_cost[v] for v in order), edges, tuple(g.labels[v] for v in order)
    )
    return sub, new_of


@dataclass(frozen=True)
class RequestPair:
    source: int
    sink: int
    demand: int = 1

    def __post_init__(self):
        if self.source == self.sink:
            raise ValueError("request pair with identical endpoints")
        if self.demand < 1:
            raise ValueError("demand must be a positive integer")


@dataclass(frozen=True)
class SsncInstance:
    """Single-sink instance.

    ``capacity_scale`` lets internal callers give individual nodes a capacity of
    ``capacity_scale[v] * capacity`` (the fake roots of the multicommodity
    sub-instances); user-facing instances leave it empty.
    """

    graph: UndirectedMultigraph
    sink: int
    sources: tuple[tuple[int, int], ...]
    capacity: int
    capacity_scale: Mapping[int, Fraction] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple((int(s), int(d)) for s, d in self.sources))
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    @property
    def total_demand(self) -> int:
        return sum(d for _, d in self.sources)

    def node_cost(self, v: int) -> Fraction:
        return Fraction(0) if v == self.sink else self.graph.node_cost[v]

    def node_capacity(self, v: int) -> Fraction | None:
        if v == self.sink:
            return None
        return Fraction(self.capacity) * Fraction(self.capacity_scale.get(v, 1))


@dataclass(frozen=True)
class McncInstance:
    """Multicommodity instance with unit demands.

    Use :meth:`create`; it rewrites terminals shared by several pairs onto
    zero-cost pendant dummies and records ``dummy_of`` to map them back.
    """

    graph: UndirectedMultigraph
    pairs: tuple[RequestPair, ...]
    capacity: int
    dummy_of: Mapping[int, int] = field(default_factory=dict)

    @classmethod
    def create(
        cls, graph: UndirectedMultigraph, pairs: Iterable, capacity: int
    ) -> "McncInstance":
        pairs = [p if isinstance(p, RequestPair) else RequestPair(int(p[0]), int(p[1])) for p in pairs]
        costs = list(graph.node_cost)
        labels = list(graph.labels)
        edges = list(graph.edges)
        used: set[int] = set()
        dummy_of: dict[int, int] = {}
        rewritten = []
        for p in pairs:
            ends = []
            for v in (p.source, p.sink):
                if v in used:
                    d = len(costs)
                    costs.append(Fraction(0))
                    labels.append(f"{labels[v]}~{d}")
                    edges.append((v, d))
                    dummy_of[d] = v
                    v = d
                used.add(v)
                ends.append(v)
            rewritten.append(RequestPair(ends[0], ends[1], 1))
        g = graph if not dummy_of else UndirectedMultigraph(tuple(costs), tuple(edges), tuple(labels))
        return cls(g, tuple(rewritten), capacity, dummy_of)

    def original_node(self, v: int) -> int:
        while v in self.dummy_of:
            v = self.dummy_of[v]
        return v

    @cached_property
    def mate(self) -> dict[int, int]:
        out = {}
        for p in self.pairs:
            out[p.source] = p.sink
            out[p.sink] = p.source
        return out


@dataclass(frozen=True)
class DirectedNodeCapGraph:
    """Directed graph with per-node capacities (``None`` = unbounded) and costs."""

    node_count: int
    arcs: tuple[tuple[int, int], ...]
    node_capacity: tuple[Fraction | None, ...]
    node_cost: tuple[Fraction, ...]

    @classmethod
    def from_undirected(
        cls,
        g: UndirectedMultigraph,
        capacity,
        unbounded: Iterable[int] = (),
        overrides: Mapping[int, object] | None = None,
        zero_cost: Iterable[int] = (),
    ) -> "DirectedNodeCapGraph":
        unbounded = set(unbounded)
        overrides = overrides or {}
        zero_cost = set(zero_cost)
        caps = []
        for v in range(g.node_count):
            if v in unbounded:
                caps.append(None)
            elif v in overrides:
                caps.append(as_fraction(overrides[v]))
            else:
                caps.append(as_fraction(capacity))
        costs = tuple(Fraction(0) if v in zero_cost else c for v, c in enumerate(g.node_cost))
        arcs = []
        for u, v in g.edges:
            arcs.append((u, v))
            arcs.append((v, u))
        return cls(g.node_count, tuple(arcs), tuple(caps), costs)

    @classmethod
    def from_ssnc(cls, inst: SsncInstance, scale: Fraction = Fraction(1)) -> "DirectedNodeCapGraph":
        g = inst.graph
        overrides = {
            v: Fraction(inst.capacity) * scale * Fraction(m) for v, m in inst.capacity_scale.items()
        }
        return cls.from_undirected(
            g, Fraction(inst.capacity) * scale, unbounded={inst.sink}, overrides=overrides, zero_cost={inst.sink}
        )

    def out_arcs(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.arcs:
            out[u].append(v)
        return out


@dataclass(frozen=True)
class SplitGraph:
    """Arc-capacitated graph from :func:`split_transform`.

    Node ``v`` becomes ``2v`` (in) and ``2v+1`` (out).  Arcs are
    ``(tail, head, capacity or None, cost)``.
    """

    node_count: int
    arcs: tuple[tuple[int, int, Fraction | None, Fraction], ...]

    @staticmethod
    def v_in(v: int) -> int:
        return 2 * v

    @staticmethod
    def v_out(v: int) -> int:
        return 2 * v + 1

    @staticmethod
    def original(x: int) -> int:
        return x // 2


def split_transform(g: DirectedNodeCapGraph) -> SplitGraph:
    arcs = [(2 * v, 2 * v + 1, g.node_capacity[v], g.node_cost[v]) for v in range(g.node_count)]
    arcs.extend((2 * u + 1, 2 * v, None, Fraction(0)) for u, v in g.arcs)
    return SplitGraph(2 * g.node_count, tuple(arcs))


def validate_instance(inst) -> list[str]:
    """Every invariant violation of ``inst``; an empty list means valid."""
    problems: list[str] = []
    g = inst.graph
    for v, c in enumerate(g.node_cost):
        if c < 0:
            problems.append(f"negative cost on node {v}")
    if isinstance(inst, SsncInstance):
        if not 0 <= inst.sink < g.node_count:
            return problems + ["sink is not a node"]
        reach = g.reachable(inst.sink)
        seen = set()
        for s, d in inst.sources:
            if not 0 <= s < g.node_count:
                problems.append(f"source {s} is not a node")
                continue
            if s == inst.sink:
                problems.append(f"source {s} coincides with the sink")
            if s in seen:
                problems.append(f"duplicate terminal {s}")
            seen.add(s)
            if d < 1:
                problems.append(f"non-positive demand at source {s}")
            if d > inst.capacity:
                problems.append(f"demand exceeds capacity at source {s}")
            if s not in reach:
                problems.append(f"infeasible: no path from source {s} to sink")
    elif isinstance(inst, McncInstance):
        seen = set()
        for i, p in enumerate(inst.pairs):
            for v in (p.source, p.sink):
                if v in seen:
                    problems.append(f"duplicate terminal {v}")
                seen.add(v)
            if p.demand != 1:
                problems.append(f"pair {i} has non-unit demand")
            if p.sink not in g.reachable(p.source):
                problems.append(f"infeasible: no path for pair {i}")
    else:
        problems.append(f"unsupported instance type {type(inst).__name__}")
    return problems
