"""Partial node-weighted Steiner trees and the max-density tree oracle.

Terminal multiplicities stand in for the pendant W-elements: a source with
``d`` demand units contributes ``d`` terminals that are covered together
whenever its node enters a tree.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .errors import Infeasible
from .graph_core import UndirectedMultigraph

Weights = Mapping[int, Fraction | None]  # None marks a forbidden node


@dataclass(frozen=True)
class PnwstQuery:
    graph: UndirectedMultigraph
    beta: tuple  # per-node weight, None = forbidden
    root: int
    terminals: Mapping[int, int]  # node -> multiplicity
    target: int


@dataclass(frozen=True)
class DensityCandidate:
    tree: frozenset
    covered: Mapping[int, int]  # source -> units newly covered
    density: Fraction
    contains_sink: bool

    @property
    def cost_units(self) -> int:
        return sum(self.covered.values())


def _dijkstra(g: UndirectedMultigraph, beta, starts, free=frozenset()):
    """Node-weighted shortest paths; a path's cost excludes its start nodes and ``free`` nodes."""
    dist = {s: Fraction(0) for s in starts}
    parent = {s: None for s in starts}
    heap = [(Fraction(0), s) for s in sorted(starts)]
    heapq.heapify(heap)
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for w in g.neighbors(u):
            if beta[w] is None or w in done:
                continue
            nd = d + (0 if w in free else beta[w])
            if w not in dist or nd < dist[w] or (nd == dist[w] and parent[w] is not None and u < parent[w]):
                dist[w] = nd
                parent[w] = u
                heapq.heappush(heap, (nd, w))
    return dist, parent


def _tree_from_parents(nodes, parent):
    children = {v: [] for v in nodes}
    for v in nodes:
        p = parent.get(v)
        if p is not None and p in children:
            children[p].append(v)
    for v in children:
        children[v].sort()
    return children


def _spanning_children(g: UndirectedMultigraph, nodes: set, root: int):
    """BFS spanning tree of the connected set ``nodes`` rooted at ``root``."""
    children = {v: [] for v in nodes}
    seen = {root}
    order = [root]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        for w in g.neighbors(u):
            if w in nodes and w not in seen:
                seen.add(w)
                children[u].append(w)
                order.append(w)
    return children, seen


def _knapsack(children, root, beta, mult, cap):
    """Tree DP: best[k] = (cost, nodes) for the cheapest root-containing subtree covering k units (k capped)."""
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children.get(v, ()))
    table = {}
    for v in reversed(order):
        own = min(mult.get(v, 0), cap)
        cur = {own: (beta[v], (v,))}
        for c in children.get(v, ()):
            sub = table.pop(c)
            merged = dict(cur)
            for k1, (c1, n1) in cur.items():
                for k2, (c2, n2) in sub.items():
                    k = min(cap, k1 + k2)
                    cost = c1 + c2
                    old = merged.get(k)
                    if old is None or cost < old[0] or (cost == old[0] and tuple(sorted(n1 + n2)) < tuple(sorted(old[1]))):
                        merged[k] = (cost, n1 + n2)
            cur = merged
        table[v] = cur
    best = table[root]
    # enforce monotonicity: covering >= k
    out = {}
    run = None
    for k in range(cap, -1, -1):
        cand = best.get(k)
        if cand is not None and (run is None or cand[0] < run[0]):
            run = cand
        if run is not None:
            out[k] = run
    return out


def _greedy_spider(g, beta, root, mult, target):
    tree = {root}
    units = mult.get(root, 0)
    while units < target:
        dist_t, par_t = _dijkstra(g, beta, tree)
        remaining = {x: m for x, m in mult.items() if m > 0 and x not in tree and x in dist_t}
        if not remaining:
            break
        best = None
        for c in sorted(dist_t):
            if c in tree:
                continue
            dist_c, par_c = _dijkstra(g, beta, [c], free=tree)
            legs = sorted(
                (dist_c[x], x) for x in remaining if x in dist_c
            )
            cost = dist_t[c]
            got = 0
            chosen = []
            for leg, x in legs:
                cost += leg
                got += remaining[x]
                chosen.append(x)
                dens = cost / got
                key = (dens, c, len(chosen))
                if best is None or key < best[0]:
                    best = (key, c, list(chosen), par_c)
                if units + got >= target:
                    break
        if best is None:
            break
        _, c, chosen, par_c = best
        v = c
        while v is not None and v not in tree:
            tree.add(v)
            v = par_t[v]
        for x in chosen:
            v = x
            while v is not None and v not in tree:
                tree.add(v)
                v = par_c[v]
        units = sum(mult.get(v, 0) for v in tree)
    return tree


def pnwst_profile(g, beta, root, mult, cap, extra_starts=True):
    """Cheapest known root-containing tree for each coverage level ``0..cap``."""
    if beta[root] is None:
        raise Infeasible("root is forbidden", root=root)
    reach, _ = _dijkstra(g, beta, [root])
    mult = {x: m for x, m in mult.items() if m > 0 and x in reach}
    cap = min(cap, sum(mult.values()))
    candidates = []
    _, par = _dijkstra(g, beta, [root])
    candidates.append(_tree_from_parents(set(reach), par))
    greedy = _greedy_spider(g, beta, root, mult, cap)
    candidates.append(_spanning_children(g, greedy, root)[0])
    if extra_starts and g.node_count <= 16:
        for x in sorted(mult):
            if x == root:
                continue
            d, par_x = _dijkstra(g, beta, [x])
            if root not in d:
                continue
            # reroot the SPT from x at root
            nodes = set(d)
            adj = {v: set() for v in nodes}
            for v, p in par_x.items():
                if p is not None:
                    adj[v].add(p)
                    adj[p].add(v)
            children = {v: [] for v in nodes}
            stack = [root]
            seen = {root}
            while stack:
                u = stack.pop()
                for w in sorted(adj[u]):
                    if w not in seen:
                        seen.add(w)
                        children[u].append(w)
                        stack.append(w)
            candidates.append(children)
    best: dict[int, tuple] = {}
    for children in candidates:
        prof = _knapsack(children, root, beta, mult, cap)
        for k, val in prof.items():
            old = best.get(k)
            if old is None or val[0] < old[0] or (val[0] == old[0] and tuple(sorted(val[1])) < tuple(sorted(old[1]))):
                best[k] = val
    return {k: (c, frozenset(nodes)) for k, (c, nodes) in best.items()}


def pnwst_approx(q: PnwstQuery) -> tuple[frozenset, Fraction]:
    """Connected tree containing ``q.root`` and at least ``q.target`` terminal units."""
    beta = tuple(q.beta)
    prof = pnwst_profile(q.graph, beta, q.root, dict(q.terminals), q.target)
    if q.target not in prof:
        raise Infeasible("no tree reaches the target", root=q.root, target=q.target)
    cost, tree = prof[q.target]
    mult = q.terminals
    assert q.graph.is_connected_set(tree) and q.root in tree
    assert sum(mult.get(v, 0) for v in tree) >= q.target
    return tree, cost


def density_cap(q: int) -> int:
    return math.ceil(q * (1 + math.log2(q))) if q > 1 else 1


def max_density_tree(
    g: UndirectedMultigraph,
    beta,
    covered: Mapping[int, int],
    capacity: int,
    sink: int,
    demand_of: Mapping[int, int],
) -> DensityCandidate:
    """Minimum-density tree over the two families.

    Family 1: trees avoiding the sink holding at least ``capacity`` demand.
    Family 2: trees containing the sink.  ``covered[s]`` counts the units of
    source ``s`` already covered; a tree covers every remaining unit of each
    source it contains.
    """
    uncovered = {s: d - covered.get(s, 0) for s, d in demand_of.items() if d - covered.get(s, 0) > 0}
    if not uncovered:
        raise Infeasible("all terminals are covered")
    beta = list(beta)
    cap = density_cap(capacity)
    best = None

    def consider(tree, contains_sink):
        nonlocal best
        newly = {s: u for s, u in uncovered.items() if s in tree}
        units = sum(newly.values())
        if units == 0:
            return
        cost = sum((beta[v] for v in tree if v != sink), Fraction(0))
        dens = cost / units
        key = (dens, 0 if contains_sink else 1, tuple(sorted(tree)))
        if best is None or key < best[0]:
            best = (key, DensityCandidate(frozenset(tree), newly, dens, contains_sink))

    # family 2
    beta2 = list(beta)
    beta2[sink] = Fraction(0)
    prof = pnwst_profile(g, beta2, sink, uncovered, min(cap, sum(uncovered.values())))
    for k, (_, tree) in prof.items():
        if k >= 1:
            consider(tree, True)
    # family 1
    beta1 = list(beta)
    beta1[sink] = None
    roots = set()
    for s in uncovered:
        if beta1[s] is None:
            continue
        roots.add(s)
        roots.update(w for w in g.neighbors(s) if beta1[w] is not None)
    full = {s: d for s, d in demand_of.items() if s != sink}
    for r in sorted(roots):
        for mult in (uncovered, full):
            total = sum(mult.values())
            if total < capacity:
                continue
            prof = pnwst_profile(g, beta1, r, mult, min(cap, total), extra_starts=False)
            for k, (_, tree) in prof.items():
                if k >= capacity and sum(demand_of.get(v, 0) for v in tree) >= capacity:
                    consider(tree, False)
    if best is None:
        raise Infeasible("no family-valid tree exists", uncovered=sorted(uncovered))
    return best[1]
