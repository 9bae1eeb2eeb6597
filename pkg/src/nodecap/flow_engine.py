"""Flow primitives on node-capacitated graphs.

Every node-capacitated computation goes through :func:`split_transform`, so the
arc algorithms below only ever see arc capacities.  Exact arithmetic
(:class:`Fraction`) is used everywhere except the multicommodity LPs, which are
solved in floating point by HiGHS.
"""

from __future__ import annotations

import heapq
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from .errors import Infeasible, MalformedFlow
from .graph_core import DirectedNodeCapGraph, SplitGraph, split_transform

Path = tuple[int, ...]


@dataclass
class SplittableFlow:
    """Single-sink flow given as a path decomposition per source."""

    sink: int
    demands: dict[int, Fraction]
    paths: dict[int, list[tuple[Path, Fraction]]] = field(default_factory=dict)

    def node_loads(self) -> dict[int, Fraction]:
        loads: dict[int, Fraction] = defaultdict(Fraction)
        for plist in self.paths.values():
            for path, amount in plist:
                for v in set(path):
                    loads[v] += amount
        return dict(loads)

    def arc_flows(self) -> dict[tuple[int, int], Fraction]:
        flows: dict[tuple[int, int], Fraction] = defaultdict(Fraction)
        for plist in self.paths.values():
            for path, amount in plist:
                for a, b in zip(path, path[1:]):
                    flows[(a, b)] += amount
        return dict(flows)


@dataclass
class UnsplittableFlow:
    sink: int
    demands: dict[int, Fraction]
    paths: dict[int, Path]

    def node_loads(self) -> dict[int, Fraction]:
        loads: dict[int, Fraction] = defaultdict(Fraction)
        for s, path in self.paths.items():
            for v in set(path):
                loads[v] += self.demands[s]
        return dict(loads)

    def as_splittable(self) -> SplittableFlow:
        return SplittableFlow(
            self.sink, dict(self.demands), {s: [(p, self.demands[s])] for s, p in self.paths.items()}
        )


# ---------------------------------------------------------------------------
# residual-graph max flow (Edmonds-Karp, smallest-id tie breaking)


class _Residual:
    def __init__(self, node_count: int):
        self.n = node_count
        self.head: list[int] = []
        self.cap: list[Fraction | None] = []
        self.cost: list[Fraction] = []
        self.out: list[list[int]] = [[] for _ in range(node_count)]

    def add_node(self) -> int:
        self.out.append([])
        self.n += 1
        return self.n - 1

    def add_arc(self, u: int, v: int, cap, cost=Fraction(0)) -> int:
        idx = len(self.head)
        self.head += [v, u]
        self.cap += [cap, Fraction(0)]
        self.cost += [cost, -cost]
        self.out[u].append(idx)
        self.out[v].append(idx + 1)
        return idx

    def finalize(self):
        for lst in self.out:
            lst.sort(key=lambda e: (self.head[e], e))

    def residual(self, e: int):
        return self.cap[e]  # None = unbounded

    def push(self, e: int, amount: Fraction):
        if self.cap[e] is not None:
            self.cap[e] -= amount
        if self.cap[e ^ 1] is not None:
            self.cap[e ^ 1] += amount

    def flow_on(self, e: int, original_cap) -> Fraction:
        # flow = residual capacity of the reverse arc (reverse starts at 0)
        return self.cap[e ^ 1]


def _has_room(c) -> bool:
    return c is None or c > 0


def _edmonds_karp(res: _Residual, s: int, t: int, limit=None) -> Fraction:
    total = Fraction(0)
    while limit is None or total < limit:
        parent = {s: None}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for e in res.out[u]:
                w = res.head[e]
                if w not in parent and _has_room(res.cap[e]):
                    parent[w] = e
                    queue.append(w)
        if t not in parent:
            break
        path = []
        w = t
        while parent[w] is not None:
            e = parent[w]
            path.append(e)
            w = res.head[e ^ 1]
        caps = [res.cap[e] for e in path if res.cap[e] is not None]
        if limit is not None:
            caps.append(limit - total)
        if not caps:
            raise ValueError("unbounded augmenting path")
        delta = min(caps)
        for e in path:
            res.push(e, delta)
        total += delta
    return total


def _build_split_residual(g: DirectedNodeCapGraph):
    sg = split_transform(g)
    res = _Residual(sg.node_count)
    node_arc = {}
    link_arc = {}
    for tail, head, cap, cost in sg.arcs:
        idx = res.add_arc(tail, head, cap, cost)
        if tail // 2 == head // 2 and tail % 2 == 0:
            node_arc[tail // 2] = idx
        else:
            link_arc.setdefault((tail // 2, head // 2), []).append(idx)
    return res, node_arc, link_arc


def widest_decomposition(
    arc_flow: Mapping[tuple[int, int], Fraction], starts: Mapping[int, Fraction], sink: int
) -> dict[int, list[tuple[Path, Fraction]]]:
    """Greedy path decomposition, each step taking a maximum-bottleneck path.

    ``starts`` gives the flow leaving each source; flow left on cycles once
    every source is exhausted is discarded.
    """
    flow = {a: f for a, f in arc_flow.items() if f > 0}
    remaining = {s: f for s, f in starts.items() if f > 0}
    out = defaultdict(list)
    for a in flow:
        out[a[0]].append(a[1])
    for k in out:
        out[k].sort()
    result: dict[int, list[tuple[Path, Fraction]]] = defaultdict(list)
    while remaining:
        best = None
        for s in sorted(remaining):
            path, width = _widest_path(flow, out, s, sink)
            if path is None:
                continue
            width = min(width, remaining[s]) if s != sink else remaining[s]
            if best is None or width > best[2]:
                best = (s, path, width)
        if best is None:
            raise MalformedFlow("flow does not reach the sink", sources=sorted(remaining))
        s, path, width = best
        for a, b in zip(path, path[1:]):
            flow[(a, b)] -= width
            if flow[(a, b)] == 0:
                del flow[(a, b)]
                out[a].remove(b)
        remaining[s] -= width
        if remaining[s] == 0:
            del remaining[s]
        result[s].append((path, width))
    return dict(result)


def _widest_path(flow, out, s, t):
    if s == t:
        return (s,), None
    best = {s: None}
    width = {s: None}  # None = infinite
    parent = {s: None}
    heap = [(0, s)]
    done = set()
    counter = 0

    def key(w):
        return Fraction(-1) if w is None else w

    while heap:
        _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == t:
            break
        for w in out.get(u, ()):
            f = flow.get((u, w), 0)
            if f <= 0 or w in done:
                continue
            cand = f if width[u] is None else min(width[u], f)
            if w not in width or (width[w] is not None and cand > width[w]):
                width[w] = cand
                parent[w] = u
                counter += 1
                heapq.heappush(heap, (-float(cand), w))
    if t not in parent:
        return None, Fraction(0)
    path = [t]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return tuple(reversed(path)), width[t]


def max_flow_node_cap(g: DirectedNodeCapGraph, source: int, sink: int) -> tuple[Fraction, SplittableFlow]:
    """Maximum ``source``->``sink`` flow; the flow comes back path-decomposed."""
    value, flow = single_sink_max_flow(g, {source: None}, sink)
    return value, flow


def single_sink_max_flow(
    g: DirectedNodeCapGraph, sources: Mapping[int, Fraction | None], sink: int
) -> tuple[Fraction, SplittableFlow]:
    """Max flow from several sources (each capped by its demand, ``None`` = uncapped)."""
    res, node_arc, link_arc = _build_split_residual(g)
    super_src = res.add_node()
    src_arc = {}
    for s in sorted(sources):
        d = sources[s]
        src_arc[s] = res.add_arc(super_src, SplitGraph.v_in(s), None if d is None else Fraction(d))
    res.finalize()
    if all(s == sink for s in sources):
        return Fraction(0), SplittableFlow(sink, {}, {})
    value = _edmonds_karp(res, super_src, SplitGraph.v_out(sink))
    arc_flow = {}
    for (a, b), idxs in link_arc.items():
        f = sum((res.cap[i ^ 1] for i in idxs), Fraction(0))
        if f > 0:
            arc_flow[(a, b)] = f
    starts = {s: res.cap[e ^ 1] for s, e in src_arc.items()}
    paths = widest_decomposition(arc_flow, starts, sink) if value > 0 else {}
    demands = {s: sum((a for _, a in paths.get(s, [])), Fraction(0)) for s in starts if starts[s] > 0}
    return value, SplittableFlow(sink, demands, paths)


# ---------------------------------------------------------------------------
# min-cost flow (successive shortest paths)


@dataclass
class MinCostResult:
    paths: list[Path]
    cost: Fraction


def min_cost_flow_node_cap(
    g: DirectedNodeCapGraph, unit_sources: Sequence[int], sink: int, per_node_cap=None
) -> MinCostResult:
    """Route one unit from each entry of ``unit_sources`` to ``sink`` at minimum node cost.

    Cost is charged per unit of flow through a node.  ``per_node_cap`` replaces
    every finite node capacity when given.  The result is integral: one path per
    source, in the order of ``unit_sources``.
    """
    if per_node_cap is not None:
        caps = tuple(None if c is None else Fraction(per_node_cap) for c in g.node_capacity)
        g = DirectedNodeCapGraph(g.node_count, g.arcs, caps, g.node_cost)
    if not unit_sources:
        return MinCostResult([], Fraction(0))
    res, node_arc, link_arc = _build_split_residual(g)
    super_src = res.add_node()
    counts = defaultdict(int)
    for s in unit_sources:
        counts[s] += 1
    for s in sorted(counts):
        res.add_arc(super_src, SplitGraph.v_in(s), Fraction(counts[s]))
    res.finalize()
    target = SplitGraph.v_out(sink)
    need = len(unit_sources)
    sent = 0
    cost = Fraction(0)
    arc_order = [e for u in range(res.n) for e in res.out[u]]
    while sent < need:
        dist = {super_src: Fraction(0)}
        parent = {super_src: None}
        for _ in range(res.n):
            changed = False
            for e in arc_order:
                u = res.head[e ^ 1]
                if u not in dist or not _has_room(res.cap[e]):
                    continue
                w = res.head[e]
                nd = dist[u] + res.cost[e]
                if w not in dist or nd < dist[w]:
                    dist[w] = nd
                    parent[w] = e
                    changed = True
            if not changed:
                break
        if target not in dist:
            raise Infeasible(
                "no feasible routing under the node capacity",
                routed=sent, required=need, per_node_cap=per_node_cap,
            )
        path = []
        w = target
        while parent[w] is not None:
            e = parent[w]
            path.append(e)
            w = res.head[e ^ 1]
        caps = [res.cap[e] for e in path if res.cap[e] is not None]
        delta = min(caps + [Fraction(need - sent)])
        for e in path:
            res.push(e, delta)
        sent += int(delta)
        cost += delta * dist[target]
    arc_flow = {}
    for (a, b), idxs in link_arc.items():
        f = sum((res.cap[i ^ 1] for i in idxs), Fraction(0))
        if f > 0:
            arc_flow[(a, b)] = f
    arc_flow = cancel_cycles(arc_flow)
    paths = _integral_paths(arc_flow, unit_sources, sink)
    real_cost = sum((g.node_cost[v] for p in paths for v in p if v != sink), Fraction(0))
    if g.node_capacity[sink] is not None:
        real_cost += len(paths) * g.node_cost[sink]
    return MinCostResult(paths, real_cost)


def _integral_paths(arc_flow, unit_sources, sink) -> list[Path]:
    flow = dict(arc_flow)
    out = defaultdict(list)
    for a in sorted(flow):
        out[a[0]].append(a[1])
    paths = []
    for s in unit_sources:
        path = [s]
        v = s
        while v != sink:
            nxt = next((w for w in out[v] if flow.get((v, w), 0) >= 1), None)
            if nxt is None:
                raise MalformedFlow("integral decomposition failed", at=v)
            flow[(v, nxt)] -= 1
            path.append(nxt)
            v = nxt
        paths.append(tuple(path))
    return paths


def cancel_cycles(arc_flow: Mapping[tuple[int, int], Fraction]) -> dict[tuple[int, int], Fraction]:
    """Remove flow on directed cycles; the result has an acyclic support."""
    flow = {a: f for a, f in arc_flow.items() if f > 0}
    while True:
        cycle = _find_cycle(flow)
        if cycle is None:
            return flow
        delta = min(flow[a] for a in cycle)
        for a in cycle:
            flow[a] -= delta
            if flow[a] == 0:
                del flow[a]


def _find_cycle(flow) -> list[tuple[int, int]] | None:
    out = defaultdict(list)
    for a, b in sorted(flow):
        out[a].append(b)
    color: dict[int, int] = {}
    for root in sorted(out):
        if color.get(root):
            continue
        stack = [(root, iter(out[root]))]
        color[root] = 1
        trail = [root]
        while stack:
            v, it = stack[-1]
            w = next(it, None)
            if w is None:
                color[v] = 2
                stack.pop()
                trail.pop()
                continue
            c = color.get(w, 0)
            if c == 1:
                i = trail.index(w)
                nodes = trail[i:] + [w]
                return list(zip(nodes, nodes[1:]))
            if c == 0:
                color[w] = 1
                trail.append(w)
                stack.append((w, iter(out[w])))
    return None


def topological_order(arcs: Iterable[tuple[int, int]], nodes: Iterable[int] = ()) -> list[int]:
    """Kahn order with smallest-id tie breaking; raises MalformedFlow on a cycle."""
    indeg = defaultdict(int)
    out = defaultdict(list)
    allnodes = set(nodes)
    for a, b in set(arcs):
        out[a].append(b)
        indeg[b] += 1
        allnodes.update((a, b))
    heap = [v for v in allnodes if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for w in out[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                heapq.heappush(heap, w)
    if len(order) != len(allnodes):
        raise MalformedFlow("flow support contains a cycle")
    return order


# ---------------------------------------------------------------------------
# single-sink splittable -> unsplittable


def dgg_unsplittable(f: SplittableFlow, sink: int | None = None) -> UnsplittableFlow:
    """Convert a single-sink splittable flow into an unsplittable one.

    Alternating-cycle augmentation on the split graph: terminals walk toward
    the sink along singular arcs carrying at least their demand; when stuck,
    flow is shifted around a cycle made of singular chains (increased) and
    branching paths (decreased).  Every returned path uses only arcs that
    carried flow in ``f`` and each node's load rises by at most the largest
    demand.
    """
    sink = f.sink if sink is None else sink
    _check_flow(f, sink)
    if not f.demands:
        return UnsplittableFlow(sink, {}, {})
    # DGG orientation: root -> terminals, on split nodes.
    root = SplitGraph.v_out(sink)
    flow: dict[tuple[int, int], Fraction] = defaultdict(Fraction)
    for plist in f.paths.values():
        for path, amount in plist:
            split = []
            for v in path:
                split += [SplitGraph.v_in(v), SplitGraph.v_out(v)]
            for a, b in zip(split, split[1:]):
                flow[(b, a)] += amount
    flow = cancel_cycles(flow)
    terminals = sorted(f.demands)
    demand = {s: Fraction(f.demands[s]) for s in terminals}
    loc = {s: SplitGraph.v_in(s) for s in terminals}
    trail: dict[int, list[int]] = {s: [loc[s]] for s in terminals}
    at: dict[int, set[int]] = defaultdict(set)
    for s in terminals:
        at[loc[s]].add(s)
    # a terminal sitting at its own source with nothing to carry is already done
    state = _DggState(flow)

    guard = 0
    while any(loc[s] != root for s in terminals):
        guard += 1
        if guard > 100000:
            raise MalformedFlow("unsplittable conversion did not converge")
        moved = True
        while moved:
            moved = False
            sing = state.singular()
            for v in sorted(at):
                if v == root or not at[v]:
                    continue
                if not sing.get(v, False):
                    continue
                for u in sorted(state.inn[v]):
                    for s in sorted(at[v], key=lambda x: (demand[x], x)):
                        if state.flow.get((u, v), 0) >= demand[s]:
                            state.sub((u, v), demand[s])
                            at[v].discard(s)
                            at[u].add(s)
                            loc[s] = u
                            trail[s].append(u)
                            moved = True
                            break
                    if moved:
                        break
                if moved:
                    break
        if all(loc[s] == root for s in terminals):
            break
        coeff = state.alternating_cycle(root)
        dmin = {v: min(demand[s] for s in at[v]) for v in at if at[v] and v != root}
        eps = None
        for a, c in coeff.items():
            fa = state.flow.get(a, Fraction(0))
            if c < 0:
                cand = fa / -c
            else:
                head = a[1]
                if head not in dmin or fa >= dmin[head]:
                    continue
                cand = (dmin[head] - fa) / c
            if eps is None or cand < eps:
                eps = cand
        if eps is None or eps <= 0:
            raise MalformedFlow("no augmenting progress possible", stuck=sorted(s for s in terminals if loc[s] != root))
        for a, c in coeff.items():
            state.add(a, c * eps)

    paths = {}
    for s in terminals:
        nodes = []
        for x in trail[s]:
            v = SplitGraph.original(x)
            if not nodes or nodes[-1] != v:
                nodes.append(v)
        paths[s] = tuple(nodes)
    return UnsplittableFlow(sink, demand, paths)


class _DggState:
    def __init__(self, flow):
        self.flow: dict[tuple[int, int], Fraction] = {}
        self.out: dict[int, set[int]] = defaultdict(set)
        self.inn: dict[int, set[int]] = defaultdict(set)
        for a, x in flow.items():
            if x > 0:
                self.add(a, x)

    def add(self, a, x):
        new = self.flow.get(a, Fraction(0)) + x
        if new < 0:
            raise MalformedFlow("negative flow during augmentation", arc=a)
        if new == 0:
            self.flow.pop(a, None)
            self.out[a[0]].discard(a[1])
            self.inn[a[1]].discard(a[0])
        else:
            self.flow[a] = new
            self.out[a[0]].add(a[1])
            self.inn[a[1]].add(a[0])

    def sub(self, a, x):
        self.add(a, -x)

    def singular(self) -> dict[int, bool]:
        memo: dict[int, bool] = {}
        nodes = set(self.out) | set(self.inn)
        for v in topological_order(self.flow.keys(), nodes)[::-1]:
            outs = self.out[v]
            if not outs:
                memo[v] = True
            elif len(outs) == 1:
                memo[v] = memo[next(iter(outs))]
            else:
                memo[v] = False
        return memo

    def alternating_cycle(self, root) -> dict[tuple[int, int], int]:
        leaves = sorted(v for v in self.inn if self.inn[v] and not self.out[v])
        if not leaves:
            raise MalformedFlow("no flow-carrying leaf found")
        v = leaves[0]
        walk_nodes = [v]
        walk_edges: list[tuple[tuple[int, int], int]] = []  # (arc, +1 back / -1 forward)
        index = {v: 0}
        mode = "back"
        last = None
        for _ in range(4 * (len(self.flow) + 2)):
            if mode == "back":
                cands = sorted(u for u in self.inn[v] if (u, v) != last)
                if not cands:
                    raise MalformedFlow("alternating walk stuck", at=v)
                u = cands[0]
                arc = (u, v)
                nxt = u
                walk_edges.append((arc, 1))
                if len(self.out[u]) >= 2:
                    mode = "fwd"
                    last = arc
                else:
                    last = None
            else:
                cands = sorted(w for w in self.out[v] if (v, w) != last)
                if not cands:
                    raise MalformedFlow("alternating walk stuck", at=v)
                w = cands[0]
                arc = (v, w)
                nxt = w
                walk_edges.append((arc, -1))
                if not self.out[w]:
                    mode = "back"
                    last = arc
                else:
                    last = None
            if nxt in index:
                start = index[nxt]
                coeff: dict[tuple[int, int], int] = defaultdict(int)
                for a, c in walk_edges[start:]:
                    coeff[a] += c
                return {a: c for a, c in coeff.items() if c != 0}
            index[nxt] = len(walk_nodes)
            walk_nodes.append(nxt)
            v = nxt
        raise MalformedFlow("alternating walk did not close")


def _check_flow(f: SplittableFlow, sink: int):
    for s, plist in f.paths.items():
        if s not in f.demands:
            raise MalformedFlow("paths for an unknown source", source=s)
        total = Fraction(0)
        for path, amount in plist:
            if amount <= 0:
                raise MalformedFlow("non-positive path amount", source=s)
            if not path or path[0] != s or path[-1] != sink:
                raise MalformedFlow("path does not run from its source to the sink", source=s)
            if len(set(path)) != len(path):
                raise MalformedFlow("path repeats a node", source=s)
            total += amount
        if total != f.demands[s]:
            raise MalformedFlow("conservation violated", source=s, routed=total, demand=f.demands[s])
    for s in f.demands:
        if s not in f.paths and f.demands[s] > 0:
            raise MalformedFlow("source has demand but no paths", source=s)


# ---------------------------------------------------------------------------
# concurrent multicommodity flow


@dataclass
class ConcurrentFlow:
    throughput: float
    # per demand: list of (edge index sequence, node sequence, amount) at the returned throughput
    flows: list[list[tuple[tuple[int, ...], Path, float]]]
    edge_load: list[float]


def concurrent_mcf(
    node_count: int,
    edges: Sequence[tuple[int, int, float]],
    demands: Sequence[tuple[int, int, float]],
    eps: float = 0.05,
) -> ConcurrentFlow:
    """Maximum concurrent flow on an undirected edge-capacitated multigraph.

    Solved exactly as an edge LP; ``eps`` is the tolerance the caller may rely
    on (the exact optimum trivially meets it).  Flows are returned scaled to
    the optimal throughput and decomposed into paths of edge indices.
    """
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    if not demands:
        return ConcurrentFlow(float("inf"), [], [0.0] * len(edges))
    adj = defaultdict(set)
    for u, v, _ in edges:
        adj[u].add(v)
        adj[v].add(u)
    for s, t, amt in demands:
        if amt <= 0:
            raise ValueError("demand amounts must be positive")
        if not _reach(adj, s, t):
            return ConcurrentFlow(0.0, [[] for _ in demands], [0.0] * len(edges))
    m = len(edges)
    k = len(demands)
    nvar = k * 2 * m + 1
    lam = nvar - 1
    rows, cols, vals = [], [], []
    b_eq = []
    r = 0
    for j, (s, t, amt) in enumerate(demands):
        for v in range(node_count):
            for e, (a, b, _) in enumerate(edges):
                base = j * 2 * m + 2 * e
                if a == v:
                    rows += [r, r]; cols += [base, base + 1]; vals += [1.0, -1.0]
                if b == v:
                    rows += [r, r]; cols += [base + 1, base]; vals += [1.0, -1.0]
            if v == s:
                rows.append(r); cols.append(lam); vals.append(-float(amt))
            if v == t:
                rows.append(r); cols.append(lam); vals.append(float(amt))
            b_eq.append(0.0)
            r += 1
    a_eq = coo_matrix((vals, (rows, cols)), shape=(r, nvar))
    rows, cols, vals = [], [], []
    for e, (_, _, cap) in enumerate(edges):
        for j in range(k):
            base = j * 2 * m + 2 * e
            rows += [e, e]; cols += [base, base + 1]; vals += [1.0, 1.0]
    a_ub = coo_matrix((vals, (rows, cols)), shape=(m, nvar))
    b_ub = [float(c) for _, _, c in edges]
    c = np.zeros(nvar)
    c[lam] = -1.0
    sol = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if sol.status != 0:
        raise RuntimeError(f"concurrent flow LP failed: {sol.message}")
    x = np.clip(sol.x, 0.0, None)
    throughput = float(x[lam])
    flows = []
    load = [0.0] * m
    for j, (s, t, amt) in enumerate(demands):
        arc_flow = {}
        for e, (a, b, _) in enumerate(edges):
            base = j * 2 * m + 2 * e
            fwd, bwd = x[base], x[base + 1]
            net = fwd - bwd
            if net > 1e-12:
                arc_flow[(e, a, b)] = float(net)
            elif net < -1e-12:
                arc_flow[(e, b, a)] = float(-net)
        plist = _decompose_edge_flow(arc_flow, s, t, throughput * amt)
        for eseq, _, amount in plist:
            for e in eseq:
                load[e] += amount
        flows.append(plist)
    return ConcurrentFlow(throughput, flows, load)


def _reach(adj, s, t) -> bool:
    seen = {s}
    stack = [s]
    while stack:
        u = stack.pop()
        if u == t:
            return True
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return s == t


def _decompose_edge_flow(arc_flow, s, t, total, tol=1e-9):
    flow = dict(arc_flow)
    out = defaultdict(list)
    for key in sorted(flow):
        out[key[1]].append(key)
    result = []
    remaining = total
    while remaining > tol:
        # widest path by float bottleneck
        width = {s: float("inf")}
        parent = {s: None}
        heap = [(-float("inf"), s)]
        done = set()
        while heap:
            negw, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            if u == t:
                break
            for key in out[u]:
                f = flow.get(key, 0.0)
                w = key[2]
                if f <= tol or w in done:
                    continue
                cand = min(width[u], f)
                if cand > width.get(w, -1.0):
                    width[w] = cand
                    parent[w] = key
                    heapq.heappush(heap, (-cand, w))
        if t not in parent:
            break
        amount = min(width[t], remaining)
        keys = []
        v = t
        while parent[v] is not None:
            keys.append(parent[v])
            v = parent[v][1]
        keys.reverse()
        for key in keys:
            flow[key] -= amount
        nodes = (s,) + tuple(k[2] for k in keys)
        result.append((tuple(k[0] for k in keys), nodes, amount))
        remaining -= amount
    return result


def node_flow_lp(
    node_count: int,
    edges: Sequence[tuple[int, int]],
    commodities: Sequence[tuple[int, int, float]],
    node_cap: Sequence[float] | None = None,
    node_cost: Sequence[float] | None = None,
    x_upper: float | None = None,
    unit: float = 1.0,
):
    """Node-capacitated multicommodity LP in two flavours.

    * ``node_cost`` given: minimise ``sum c_v x_v`` with per-node throughput at
      most ``unit * x_v`` and ``0 <= x_v <= x_upper``; every commodity ships its
      full amount.  Returns ``(objective, x, per-commodity arc flows)``.
    * otherwise: maximise the concurrent throughput ``lam`` under fixed
      ``node_cap``.  Returns ``(lam, None, per-commodity arc flows)``.

    Node throughput counts inflow plus the amount originating at the node.
    Arc flows are dicts ``(u, v) -> amount`` with antiparallel flow netted out.
    """
    arcs = []
    for u, v in sorted(set((min(a, b), max(a, b)) for a, b in edges)):
        arcs += [(u, v), (v, u)]
    na = len(arcs)
    k = len(commodities)
    minimise_cost = node_cost is not None
    nflow = k * na
    nvar = nflow + (node_count if minimise_cost else 1)
    rows, cols, vals, b_eq = [], [], [], []
    r = 0
    incident_in = defaultdict(list)
    incident_out = defaultdict(list)
    for ai, (u, v) in enumerate(arcs):
        incident_out[u].append(ai)
        incident_in[v].append(ai)
    for j, (s, t, amt) in enumerate(commodities):
        for v in range(node_count):
            for ai in incident_out[v]:
                rows.append(r); cols.append(j * na + ai); vals.append(1.0)
            for ai in incident_in[v]:
                rows.append(r); cols.append(j * na + ai); vals.append(-1.0)
            rhs = 0.0
            if minimise_cost:
                if v == s:
                    rhs = float(amt)
                elif v == t:
                    rhs = -float(amt)
            else:
                if v == s:
                    rows.append(r); cols.append(nflow); vals.append(-float(amt))
                elif v == t:
                    rows.append(r); cols.append(nflow); vals.append(float(amt))
            b_eq.append(rhs)
            r += 1
    a_eq = coo_matrix((vals, (rows, cols)), shape=(r, nvar))
    # throughput rows: inflow (+ originating amount) <= cap
    rows, cols, vals, b_ub = [], [], [], []
    for v in range(node_count):
        const = 0.0
        for j, (s, t, amt) in enumerate(commodities):
            if v == s:
                if minimise_cost:
                    const += float(amt)
                else:
                    rows.append(v); cols.append(nflow); vals.append(float(amt))
            for ai in incident_in[v]:
                if v == s:
                    continue  # inflow into the origin is cycling flow; count it anyway below
                rows.append(v); cols.append(j * na + ai); vals.append(1.0)
            if v == s:
                for ai in incident_in[v]:
                    rows.append(v); cols.append(j * na + ai); vals.append(1.0)
        if minimise_cost:
            rows.append(v); cols.append(nflow + v); vals.append(-float(unit))
            b_ub.append(-const)
        else:
            cap = node_cap[v]
            b_ub.append(float("inf") if cap is None else float(cap))
    a_ub = coo_matrix((vals, (rows, cols)), shape=(node_count, nvar))
    b_ub_arr = np.array(b_ub)
    finite = np.isfinite(b_ub_arr)
    a_ub = a_ub.tocsr()[finite]
    b_ub_arr = b_ub_arr[finite]
    c = np.zeros(nvar)
    bounds = [(0, None)] * nflow
    if minimise_cost:
        c[nflow:] = [float(x) for x in node_cost]
        # tiny flow penalty keeps the optimum free of pointless circulations
        c[:nflow] = 1e-9
        bounds += [(0, x_upper)] * node_count
    else:
        c[nflow] = -1.0
        c[:nflow] = 1e-9
        bounds += [(0, None)]
    sol = linprog(c, A_ub=a_ub, b_ub=b_ub_arr, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if sol.status == 2:
        raise Infeasible("node-capacitated LP is infeasible")
    if sol.status != 0:
        raise RuntimeError(f"LP failed: {sol.message}")
    x = np.clip(sol.x, 0.0, None)
    flows = []
    for j in range(k):
        fl = {}
        for ai, (u, v) in enumerate(arcs):
            if ai % 2:
                continue
            net = x[j * na + ai] - x[j * na + ai + 1]
            if net > 1e-10:
                fl[(u, v)] = float(net)
            elif net < -1e-10:
                fl[(v, u)] = float(-net)
        flows.append(fl)
    if minimise_cost:
        xs = x[nflow:]
        return float(np.dot(c[nflow:], xs)), xs, flows
    return float(x[nflow]), None, flows


def decompose_float_flow(arc_flow: Mapping[tuple[int, int], float], s: int, t: int, total: float, tol=1e-9):
    """Widest-first path decomposition of a float single-commodity flow."""
    keyed = {(i, a, b): f for i, ((a, b), f) in enumerate(sorted(arc_flow.items()))}
    return [(nodes, amt) for _, nodes, amt in _decompose_edge_flow(keyed, s, t, total, tol)]
