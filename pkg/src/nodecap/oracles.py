"""Exact brute-force baselines for small instances."""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Mapping

from .errors import Exhausted
from .flow_engine import node_flow_lp, single_sink_max_flow
from .graph_core import DirectedNodeCapGraph, McncInstance, SsncInstance, UndirectedMultigraph


@dataclass(frozen=True)
class OracleBudget:
    max_nodes: int = 12
    max_pairs: int = 5
    time_cap: float = 60.0


@dataclass
class OracleResult:
    nodes: frozenset | None  # None = infeasible
    cost: Fraction | None
    integral_nodes: frozenset | None = None
    integral_cost: Fraction | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.nodes is not None


class _Clock:
    def __init__(self, budget: OracleBudget):
        self.deadline = time.monotonic() + budget.time_cap

    def tick(self):
        if time.monotonic() > self.deadline:
            raise Exhausted("oracle time cap exceeded")


def _subsets(free: list[int], cost, order: str) -> Iterator[frozenset]:
    subsets = [frozenset(c) for r in range(len(free) + 1) for c in itertools.combinations(free, r)]
    if order == "cost":
        subsets.sort(key=lambda s: (sum((cost[v] for v in s), Fraction(0)), len(s), tuple(sorted(s))))
    elif order != "size":
        raise ValueError(f"unknown order {order!r}")
    return iter(subsets)


def _search(forced: set, free: list[int], cost, feasible, order: str, clock: _Clock):
    """Cheapest ``forced | S`` passing ``feasible``; 'cost' stops at the first hit, 'size' scans all."""
    best = None
    for extra in _subsets(free, cost, order):
        clock.tick()
        nodes = frozenset(forced | extra)
        c = sum((cost[v] for v in nodes), Fraction(0))
        if best is not None and c >= best[1]:
            continue
        if feasible(nodes):
            best = (nodes, c)
            if order == "cost":
                break
    return best


def _simple_paths(g: UndirectedMultigraph, allowed: frozenset, s: int, t: int, limit: int = 20000):
    out = []
    stack = [(s, (s,))]
    while stack:
        v, path = stack.pop()
        if v == t:
            out.append(path)
            if len(out) >= limit:
                raise Exhausted("too many simple paths")
            continue
        for w in g.neighbors(v):
            if w in allowed and w not in path:
                stack.append((w, path + (w,)))
    out.sort(key=lambda p: (len(p), p))
    return out


def _assign(options: list[list[tuple]], demands: list[int], caps: Mapping[int, int | None], clock: _Clock) -> bool:
    load: dict[int, int] = {}

    def rec(i: int) -> bool:
        if i == len(options):
            return True
        clock.tick()
        for p in options[i]:
            if all(caps[v] is None or load.get(v, 0) + demands[i] <= caps[v] for v in p):
                for v in p:
                    load[v] = load.get(v, 0) + demands[i]
                if rec(i + 1):
                    return True
                for v in p:
                    load[v] -= demands[i]
        return False

    return rec(0)


def exact_ssnc(inst: SsncInstance, budget: OracleBudget = OracleBudget(), order: str = "cost") -> OracleResult:
    g = inst.graph
    if g.node_count > budget.max_nodes:
        raise Exhausted("instance exceeds the node budget", nodes=g.node_count)
    clock = _Clock(budget)
    sources = [s for s, _ in inst.sources]
    demands = [d for _, d in inst.sources]
    forced = set(sources) | {inst.sink}
    free = [v for v in range(g.node_count) if v not in forced]
    cost = [inst.node_cost(v) for v in range(g.node_count)]
    check_integral = len(sources) <= budget.max_pairs

    def feasible(nodes: frozenset) -> bool:
        caps = {v: (None if v == inst.sink else inst.capacity) for v in range(g.node_count)}
        dg = DirectedNodeCapGraph(
            g.node_count,
            tuple((u, v) for u, v in DirectedNodeCapGraph.from_undirected(g, 1).arcs if u in nodes and v in nodes),
            tuple(None if caps[v] is None else Fraction(caps[v] if v in nodes else 0) for v in range(g.node_count)),
            tuple(cost),
        )
        value, _ = single_sink_max_flow(dg, {s: Fraction(d) for s, d in inst.sources}, inst.sink)
        if value < sum(demands):
            return False
        if not check_integral:
            return True
        options = [_simple_paths(g, nodes, s, inst.sink) for s in sources]
        return _assign(options, demands, caps, clock)

    best = _search(forced, free, cost, feasible, order, clock)
    res = OracleResult(best[0] if best else None, best[1] if best else None)
    if not check_integral:
        res.notes.append("unsplittable check skipped: too many sources")
    return res


def exact_mcnc_fractional(inst: McncInstance, budget: OracleBudget = OracleBudget(), order: str = "cost") -> OracleResult:
    g = inst.graph
    if g.node_count > budget.max_nodes:
        raise Exhausted("instance exceeds the node budget", nodes=g.node_count)
    if len(inst.pairs) > budget.max_pairs:
        raise Exhausted("instance exceeds the pair budget", pairs=len(inst.pairs))
    clock = _Clock(budget)
    forced = {v for p in inst.pairs for v in (p.source, p.sink)}
    free = [v for v in range(g.node_count) if v not in forced]
    cost = list(g.node_cost)

    def fractional(nodes: frozenset) -> bool:
        for p in inst.pairs:
            if p.sink not in g.reachable(p.source, set(nodes)):
                return False
        sub_edges = [(u, v) for u, v in g.edges if u in nodes and v in nodes]
        caps = [float(inst.capacity) if v in nodes else 0.0 for v in range(g.node_count)]
        lam, _, _ = node_flow_lp(g.node_count, sub_edges, [(p.source, p.sink, 1.0) for p in inst.pairs], node_cap=caps)
        return lam >= 1 - 1e-7

    def integral(nodes: frozenset) -> bool:
        options = [_simple_paths(g, nodes, p.source, p.sink) for p in inst.pairs]
        caps = {v: inst.capacity for v in range(g.node_count)}
        return _assign(options, [1] * len(inst.pairs), caps, clock)

    best = _search(forced, free, cost, fractional, order, clock)
    res = OracleResult(best[0] if best else None, best[1] if best else None)
    if len(inst.pairs) <= 3:
        ib = _search(forced, free, cost, integral, order, clock)
        res.integral_nodes = ib[0] if ib else None
        res.integral_cost = ib[1] if ib else None
        if res.integral_cost != res.cost:
            res.notes.append("fractional and integral optima differ")
    return res


def connected_subsets(g: UndirectedMultigraph, allowed, order: str = "mask") -> Iterator[frozenset]:
    """Every connected subset of ``allowed``; 'mask' scans bitmasks, 'grow' extends sets by neighbours."""
    allowed = sorted(allowed)
    if order == "mask":
        for mask in range(1, 1 << len(allowed)):
            s = frozenset(allowed[i] for i in range(len(allowed)) if mask >> i & 1)
            if g.is_connected_set(s):
                yield s
    elif order == "grow":
        allowed_set = set(allowed)
        seen = set()
        frontier = [frozenset([v]) for v in allowed]
        while frontier:
            nxt = []
            for s in frontier:
                if s in seen:
                    continue
                seen.add(s)
                yield s
                for v in s:
                    for w in g.neighbors(v):
                        if w in allowed_set and w not in s:
                            nxt.append(s | {w})
            frontier = nxt
    else:
        raise ValueError(f"unknown order {order!r}")


def exact_pnwst(g: UndirectedMultigraph, beta, root: int, terminals: Mapping[int, int], target: int,
                order: str = "mask", budget: OracleBudget = OracleBudget()):
    if g.node_count > 11 or g.node_count > budget.max_nodes:
        raise Exhausted("instance exceeds the node budget", nodes=g.node_count)
    allowed = [v for v in range(g.node_count) if beta[v] is not None]
    best = None
    for s in connected_subsets(g, allowed, order):
        if root not in s or sum(terminals.get(v, 0) for v in s) < target:
            continue
        c = sum((Fraction(beta[v]) for v in s), Fraction(0))
        key = (c, tuple(sorted(s)))
        if best is None or key < best:
            best = key
    if best is None:
        return None, None
    return frozenset(best[1]), best[0]


def exact_density(g: UndirectedMultigraph, beta, covered: Mapping[int, int], capacity: int, sink: int,
                  demand_of: Mapping[int, int], order: str = "mask", budget: OracleBudget = OracleBudget()):
    """Minimum density over both tree families, with no cap on tree demand."""
    if g.node_count > 11 or g.node_count > budget.max_nodes:
        raise Exhausted("instance exceeds the node budget", nodes=g.node_count)
    uncovered = {s: d - covered.get(s, 0) for s, d in demand_of.items() if d - covered.get(s, 0) > 0}
    beta = list(beta)
    beta[sink] = Fraction(0)
    allowed = [v for v in range(g.node_count) if beta[v] is not None]
    best = None
    for s in connected_subsets(g, allowed, order):
        units = sum(uncovered.get(v, 0) for v in s)
        if units == 0:
            continue
        if sink not in s and sum(demand_of.get(v, 0) for v in s) < capacity:
            continue
        dens = sum((Fraction(beta[v]) for v in s), Fraction(0)) / units
        key = (dens, tuple(sorted(s)))
        if best is None or key < best:
            best = key
    if best is None:
        return None, None
    return frozenset(best[1]), best[0]


def ratio_report(solver_cost, oracle: OracleResult | None, congestion=None, digest: str = "") -> dict:
    rec = {"digest": digest, "solver_cost": str(solver_cost), "congestion": None if congestion is None else str(congestion)}
    if oracle is None:
        rec.update(oracle_cost=None, ratio=None, flag="oracle exhausted")
    elif not oracle.feasible:
        rec.update(oracle_cost=None, ratio=None, flag="oracle infeasible")
    else:
        rec["oracle_cost"] = str(oracle.cost)
        if oracle.cost == 0:
            rec["ratio"] = "1" if Fraction(solver_cost) == 0 else "inf"
        else:
            rec["ratio"] = str(Fraction(solver_cost) / oracle.cost)
        rec["flag"] = None
    return rec


def exact_energy(graph: UndirectedMultigraph, pairs, sigma: float, alpha: float,
                 budget: OracleBudget = OracleBudget()) -> tuple[float, tuple]:
    """Minimum energy over unsplittable routings, by enumerating one simple path per pair."""
    if graph.node_count > budget.max_nodes or len(pairs) > budget.max_pairs:
        raise Exhausted("instance exceeds the energy oracle budget", nodes=graph.node_count, pairs=len(pairs))
    clock = _Clock(budget)
    everything = frozenset(range(graph.node_count))
    options = [_simple_paths(graph, everything, s, t) for s, t in pairs]
    best = None
    for combo in itertools.product(*options):
        clock.tick()
        load: dict[int, int] = {}
        for p in combo:
            for v in p:
                load[v] = load.get(v, 0) + 1
        energy = sum(float(sigma) + float(f) ** float(alpha) for f in load.values())
        if best is None or energy < best[0]:
            best = (energy, combo)
    if best is None:
        return float("inf"), ()
    return best
