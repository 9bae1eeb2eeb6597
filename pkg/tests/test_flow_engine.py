import itertools
import random
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from conftest import graph, random_connected
from nodecap.errors import Infeasible, MalformedFlow
from nodecap.flow_engine import (
    SplittableFlow,
    cancel_cycles,
    concurrent_mcf,
    dgg_unsplittable,
    max_flow_node_cap,
    min_cost_flow_node_cap,
    node_flow_lp,
    single_sink_max_flow,
    topological_order,
)
from nodecap.graph_core import DirectedNodeCapGraph


def nx_node_cap_max_flow(dg, s, t):
    """Independent route: networkx max flow on a hand-built split graph."""
    H = nx.DiGraph()
    for v in range(dg.node_count):
        cap = dg.node_capacity[v]
        H.add_edge(("in", v), ("out", v), **({} if cap is None else {"capacity": float(cap)}))
    for u, v in dg.arcs:
        H.add_edge(("out", u), ("in", v))
    return nx.maximum_flow_value(H, ("in", s), ("out", t))


def test_max_flow_single_arc():
    dg = DirectedNodeCapGraph(2, ((0, 1),), (Fraction(3), None), (Fraction(0),) * 2)
    value, flow = max_flow_node_cap(dg, 0, 1)
    assert value == 3 and flow.paths[0] == [((0, 1), Fraction(3))]


def test_max_flow_disconnected():
    dg = DirectedNodeCapGraph(3, ((0, 1),), (Fraction(3),) * 3, (Fraction(0),) * 3)
    value, flow = max_flow_node_cap(dg, 0, 2)
    assert value == 0 and not flow.paths


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_max_flow_matches_networkx(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 12)
    g = random_connected(n, 0.35, rng)
    caps = {v: rng.randint(0, 4) for v in range(n)}
    dg = DirectedNodeCapGraph.from_undirected(g, 1, unbounded={n - 1}, overrides=caps)
    value, flow = max_flow_node_cap(dg, 0, n - 1)
    assert value == nx_node_cap_max_flow(dg, 0, n - 1)
    for v, load in flow.node_loads().items():
        assert v == n - 1 or load <= caps[v]


def exhaustive_min_cost(g, caps, sources, sink, u):
    """Cheapest assignment of one simple path per unit source; cost per unit through each node."""
    G = nx.Graph(list(g.edges))
    options = [list(nx.all_simple_paths(G, s, sink)) if s != sink else [[s]] for s in sources]
    best = None
    for combo in itertools.product(*options):
        load = {}
        for p in combo:
            for v in p:
                load[v] = load.get(v, 0) + 1
        if any(v != sink and load[v] > min(caps[v], u) for v in load):
            continue
        cost = sum(g.node_cost[v] * c for v, c in load.items() if v != sink)
        if best is None or cost < best:
            best = cost
    return best


def detour_fixture():
    # sources 0,1,2; hub 3 (cap 2); detour 4-5; spare 6; sink 7
    costs = [1, 1, 1, 1, 5, 5, 20, 0]
    edges = [(0, 3), (1, 3), (2, 3), (3, 7), (0, 4), (1, 4), (2, 4), (4, 5), (5, 7), (6, 7), (6, 0)]
    return graph(costs, edges)


def test_min_cost_single_source_shortest_path():
    g = graph([1, 4, 1, 1, 0], [(0, 1), (1, 4), (0, 2), (2, 3), (3, 4)])
    dg = DirectedNodeCapGraph.from_undirected(g, 1, unbounded={4}, zero_cost={4})
    res = min_cost_flow_node_cap(dg, [0], 4)
    assert res.paths == [(0, 2, 3, 4)] and res.cost == 3


def test_min_cost_hub_overflow_uses_detour():
    g = detour_fixture()
    dg = DirectedNodeCapGraph.from_undirected(g, 2, unbounded={7}, zero_cost={7})
    res = min_cost_flow_node_cap(dg, [0, 1, 2], 7)
    through_hub = sum(1 for p in res.paths if 3 in p)
    assert through_hub == 2 and sum(1 for p in res.paths if 4 in p) == 1
    caps = {v: 2 for v in range(8)}
    assert res.cost == exhaustive_min_cost(g, caps, [0, 1, 2], 7, 2)


def test_min_cost_zero_cap_infeasible():
    g = detour_fixture()
    dg = DirectedNodeCapGraph.from_undirected(g, 2, unbounded={7}, zero_cost={7})
    with pytest.raises(Infeasible):
        min_cost_flow_node_cap(dg, [0], 7, per_node_cap=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_min_cost_matches_exhaustive(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 8)
    g = random_connected(n, 0.45, rng)
    sink = n - 1
    sources = [rng.randrange(n - 1) for _ in range(rng.randint(1, 4))]
    u = rng.randint(1, 3)
    dg = DirectedNodeCapGraph.from_undirected(g, u, unbounded={sink}, zero_cost={sink})
    caps = {v: u for v in range(n)}
    expected = exhaustive_min_cost(g, caps, sources, sink, u)
    if expected is None:
        with pytest.raises(Infeasible):
            min_cost_flow_node_cap(dg, sources, sink)
        return
    res = min_cost_flow_node_cap(dg, sources, sink)
    assert res.cost == expected
    assert [p[0] for p in res.paths] == sources and all(p[-1] == sink for p in res.paths)


# --- DGG -------------------------------------------------------------------


def check_dgg(flow, out):
    loads = flow.node_loads()
    new = out.node_loads()
    dmax = max(flow.demands.values())
    for v, l in new.items():
        assert l <= loads.get(v, 0) + dmax
    support = set(flow.arc_flows())
    for s, p in out.paths.items():
        assert p[0] == s and p[-1] == flow.sink
        assert all(a in support for a in zip(p, p[1:]))


def test_dgg_identity_on_unsplittable():
    f = SplittableFlow(3, {0: Fraction(1), 1: Fraction(2)}, {0: [((0, 2, 3), Fraction(1))], 1: [((1, 2, 3), Fraction(2))]})
    out = dgg_unsplittable(f, 3)
    assert out.paths == {0: (0, 2, 3), 1: (1, 2, 3)}


def test_dgg_split_demand_lands_on_one_branch():
    f = SplittableFlow(3, {0: Fraction(2)}, {0: [((0, 1, 3), Fraction(1)), ((0, 2, 3), Fraction(1))]})
    out = dgg_unsplittable(f, 3)
    assert out.paths[0] in {(0, 1, 3), (0, 2, 3)}
    mid = out.paths[0][1]
    assert out.node_loads()[mid] == 2 <= 1 + 2


def test_dgg_shared_middle_node_bound():
    # sources 0 (d=1) and 1 (d=2) share node 2 with F_2 = 3; alternative node 3
    f = SplittableFlow(4, {0: Fraction(1), 1: Fraction(2)}, {
        0: [((0, 2, 4), Fraction(1, 2)), ((0, 3, 4), Fraction(1, 2))],
        1: [((1, 2, 4), Fraction(5, 2) - Fraction(1, 2) - Fraction(1, 2)), ((1, 3, 4), Fraction(1, 2))],
    })
    assert f.node_loads()[2] == 2
    out = dgg_unsplittable(f, 4)
    consistent = list(itertools.product([(0, 2, 4), (0, 3, 4)], [(1, 2, 4), (1, 3, 4)]))
    assert (out.paths[0], out.paths[1]) in consistent
    check_dgg(f, out)
    assert out.node_loads().get(2, 0) <= 5


def test_dgg_rejects_broken_conservation():
    f = SplittableFlow(3, {0: Fraction(2)}, {0: [((0, 1, 3), Fraction(1))]})
    with pytest.raises(MalformedFlow):
        dgg_unsplittable(f, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_dgg_load_bound_and_support(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 14)
    g = random_connected(n, 0.3, rng)
    sink = n - 1
    srcs = {v: Fraction(rng.randint(1, 4)) for v in rng.sample(range(n - 1), rng.randint(1, min(5, n - 1)))}
    dg = DirectedNodeCapGraph.from_undirected(g, rng.randint(2, 6), unbounded={sink})
    _, flow = single_sink_max_flow(dg, srcs, sink)
    if not flow.paths:
        return
    flow = SplittableFlow(sink, flow.demands, flow.paths)
    out = dgg_unsplittable(flow, sink)
    check_dgg(flow, out)


def test_topological_order_rejects_cycle():
    with pytest.raises(MalformedFlow):
        topological_order([(0, 1), (1, 0)])
    assert topological_order([(2, 1), (1, 0)]) == [2, 1, 0]


def test_cancel_cycles_removes_circulation():
    flow = {(0, 1): Fraction(2), (1, 2): Fraction(1), (2, 1): Fraction(1), (1, 3): Fraction(2)}
    out = cancel_cycles(flow)
    assert out == {(0, 1): Fraction(2), (1, 3): Fraction(2)}


# --- concurrent flow ---------------------------------------------------------


def path_lp_throughput(n, edges, demands):
    """Independent route: path formulation over all simple paths."""
    G = nx.MultiGraph()
    G.add_nodes_from(range(n))
    for i, (u, v, c) in enumerate(edges):
        G.add_edge(u, v, key=i)
    cols = []
    for j, (s, t, amt) in enumerate(demands):
        for path in nx.all_simple_edge_paths(G, s, t):
            cols.append((j, [k for _, _, k in path]))
    nv = len(cols) + 1
    c = np.zeros(nv); c[-1] = -1
    a_ub = np.zeros((len(edges), nv)); b_ub = [cap for _, _, cap in edges]
    for ci, (j, es) in enumerate(cols):
        for e in es:
            a_ub[e, ci] += 1
    a_eq = np.zeros((len(demands), nv))
    for ci, (j, _) in enumerate(cols):
        a_eq[j, ci] = 1
    for j, (_, _, amt) in enumerate(demands):
        a_eq[j, -1] = -amt
    sol = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.zeros(len(demands)), bounds=(0, None), method="highs")
    return sol.x[-1]


def cut_bound(n, edges, demands):
    best = float("inf")
    for r in range(1, n):
        for side in itertools.combinations(range(n), r):
            s = set(side)
            cap = sum(c for u, v, c in edges if (u in s) != (v in s))
            dem = sum(a for u, v, a in demands if (u in s) != (v in s))
            if dem:
                best = min(best, cap / dem)
    return best


def audit_capacity(edges, res, tol=1e-7):
    for e, (_, _, cap) in enumerate(edges):
        assert res.edge_load[e] <= cap + tol


def test_concurrent_single_edge():
    res = concurrent_mcf(2, [(0, 1, 1.0)], [(0, 1, 1.0)])
    assert res.throughput >= 1 - 0.05
    audit_capacity([(0, 1, 1.0)], res)


def test_concurrent_k4_crossing_demands():
    edges = [(u, v, 1.0) for u, v in itertools.combinations(range(4), 2)]
    demands = [(0, 2, 1.0), (1, 3, 1.0)]
    res = concurrent_mcf(4, edges, demands, eps=0.05)
    exact = path_lp_throughput(4, edges, demands)
    assert res.throughput >= (1 - 0.05) * exact - 1e-9
    assert res.throughput <= exact + 1e-7 <= cut_bound(4, edges, demands) + 1e-7
    audit_capacity(edges, res)


def test_concurrent_disconnected():
    res = concurrent_mcf(4, [(0, 1, 1.0), (2, 3, 1.0)], [(0, 3, 1.0)])
    assert res.throughput == 0


def test_concurrent_eps_range():
    with pytest.raises(ValueError):
        concurrent_mcf(2, [(0, 1, 1.0)], [(0, 1, 1.0)], eps=0.6)
    with pytest.raises(ValueError):
        concurrent_mcf(2, [(0, 1, 1.0)], [(0, 1, 1.0)], eps=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_concurrent_matches_path_lp(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 6)
    G = nx.gnp_random_graph(n, 0.6, seed=seed)
    edges = [(u, v, float(rng.randint(1, 3))) for u, v in G.edges()]
    if not edges:
        return
    pairs = [tuple(rng.sample(range(n), 2)) for _ in range(rng.randint(1, 3))]
    demands = [(s, t, float(rng.randint(1, 2))) for s, t in pairs]
    res = concurrent_mcf(n, edges, demands)
    comps = list(nx.connected_components(G))
    if any(not any(s in c and t in c for c in comps) for s, t, _ in demands):
        assert res.throughput == 0
        return
    exact = path_lp_throughput(n, edges, demands)
    assert res.throughput >= 0.95 * exact - 1e-7
    audit_capacity(edges, res)
    for (s, t, amt), plist in zip(demands, res.flows):
        assert sum(a for _, _, a in plist) == pytest.approx(res.throughput * amt, rel=1e-6, abs=1e-7)


def test_node_lp_cost_mode_single_path():
    # LP_h shape: one commodity of q units along a path; x = 1 on the path
    edges = [(0, 1), (1, 2)]
    obj, x, flows = node_flow_lp(3, edges, [(0, 2, 4.0)], node_cost=[1.0, 2.0, 3.0], x_upper=10, unit=4.0)
    assert obj == pytest.approx(6.0, rel=1e-6)
    assert list(np.round(x, 6)) == [1.0, 1.0, 1.0]
