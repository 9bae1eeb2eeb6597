import itertools
import math
import random
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from conftest import graph, mcnc_corpus, random_mcnc
from nodecap.errors import Degenerate, Infeasible, SparsifierFailure
from nodecap.flow_engine import UnsplittableFlow
from nodecap.graph_core import McncInstance
from nodecap.mcnc_solver import (
    ACTIVE,
    DELTA,
    EXTERNAL,
    INTERNAL,
    UNSAFE,
    ClusterGraph,
    Clustering,
    ClusterState,
    Ledger,
    McncKnobs,
    bipartition_safe,
    build_I1,
    build_I2,
    clustering_phase,
    hallucinate,
    hallucination_prob,
    karger_sample_ok,
    make_unsafe,
    merge_from_flow,
    min_cut_value,
    mincut_decompose,
    round_lp_h,
    route_component,
    route_internal,
    solve_lp_h,
    solve_mcnc,
)


def state_of(cl, v):
    return cl.states[cl.owner[v]]


def merged(cl, *terminals):
    """Absorb the singleton clusters of ``terminals`` into the first one."""
    target = state_of(cl, terminals[0])
    for v in terminals[1:]:
        cl.absorb(target, state_of(cl, v))
    return target


def check_routing(inst, routing, pair_ids):
    for i in pair_ids:
        p = inst.pairs[i]
        total = 0.0
        for path, amount in routing[i]:
            assert path[0] == p.source and path[-1] == p.sink
            for a, b in zip(path, path[1:]):
                assert b in inst.graph.neighbors(a)
            total += amount
        assert total == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# make_unsafe


def four_pairs(q=16):
    g = graph([1] * 8, [(i, i + 1) for i in range(7)])
    return McncInstance.create(g, [(0, 4), (1, 5), (2, 6), (3, 7)], q)


def test_make_unsafe_without_frozen_is_a_no_op():
    cl = Clustering(four_pairs(), range(4))
    assert make_unsafe(cl) == ([], [], 0)
    assert all(s.status == ACTIVE for s in cl.states.values())


def test_make_unsafe_all_mates_frozen():
    cl = Clustering(four_pairs(), range(4))
    a = merged(cl, 0, 1)
    merged(cl, 4, 5).status = EXTERNAL
    unsafe, deleted, witness = make_unsafe(cl)
    assert [u.ident for u in unsafe] == [a.ident] and a.status == UNSAFE
    assert deleted == [] and witness == 2


def test_make_unsafe_mixed_trace():
    # A = {0,1,2}, F = {4,5} frozen, B = {3,6}, 7 alone
    cl = Clustering(four_pairs(), range(4))
    a = merged(cl, 0, 1, 2)
    f = merged(cl, 4, 5)
    f.status = EXTERNAL
    merged(cl, 3, 6)
    unsafe, deleted, witness = make_unsafe(cl)
    assert deleted == [2]
    assert [u.ident for u in unsafe] == [a.ident]
    assert a.terminals == {0, 1}
    assert f.terminals == {4, 5}
    assert len(deleted) <= 3 * witness


# ---------------------------------------------------------------------------
# sub-instances


def two_sided(q=4):
    g = graph([1] * 5, [(0, 2), (1, 2), (2, 3), (3, 4)])
    inst = McncInstance.create(g, [(0, 3), (1, 4)], q)
    cl = Clustering(inst, range(2))
    return inst, cl


def test_build_I1_counts_and_capacities():
    inst, cl = two_sided(4)
    unsafe, frozen = state_of(cl, 0), state_of(cl, 3)
    sub = build_I1([unsafe], [frozen], inst.graph, 4, beta_hat=1.5)
    assert sub.ssnc.graph.node_count == inst.graph.node_count + 3
    assert sub.ssnc.capacity == 20
    (root,) = sub.root_of
    assert sub.ssnc.node_capacity(root) == 240
    assert dict(sub.ssnc.sources) == {next(iter(sub.source_of)): 1}
    assert all(sub.ssnc.graph.node_cost[v] == 0 for v in sub.fake)
    assert build_I1([unsafe], [frozen], inst.graph, 4).ssnc.node_capacity(root) == 160


def test_build_I1_needs_a_frozen_cluster():
    inst, cl = two_sided()
    with pytest.raises(Degenerate):
        build_I1([state_of(cl, 0)], [], inst.graph, 4)


def test_build_I2_capacity_and_counts():
    inst, cl = two_sided(4)
    sub = build_I2([state_of(cl, 0), state_of(cl, 1)], [state_of(cl, 3)], inst.graph, 4)
    assert sub.ssnc.capacity == 36
    assert sub.ssnc.graph.node_count == inst.graph.node_count + 4
    (root,) = sub.root_of
    assert sub.ssnc.node_capacity(root) == 36
    with pytest.raises(Degenerate):
        build_I2([state_of(cl, 0)], [], inst.graph, 4)


# ---------------------------------------------------------------------------
# bipartition


def locally_optimal(cl, plus, minus):
    side = {s.ident: True for s in plus} | {s.ident: False for s in minus}
    states = plus + minus
    for a in states:
        own = sum(cl.crossing(a, b) for b in states if b is not a and side[b.ident] == side[a.ident])
        other = sum(cl.crossing(a, b) for b in states if side[b.ident] != side[a.ident])
        if own > other:
            return False
    return True


def test_bipartition_two_clusters():
    g = graph([1] * 4, [(0, 1), (1, 2), (2, 3)])
    cl = Clustering(McncInstance.create(g, [(0, 2), (1, 3)], 16), range(2))
    a, b = merged(cl, 0, 1), merged(cl, 2, 3)
    plus, minus = bipartition_safe(cl, [a, b])
    assert [s.ident for s in plus] == [a.ident] and [s.ident for s in minus] == [b.ident]


def test_bipartition_path_of_clusters():
    # clusters A={0}, B={1,2}, C={3,4}, D={5} with pairs along the path A-B-C-D
    g = graph([1] * 6, [(i, i + 1) for i in range(5)])
    cl = Clustering(McncInstance.create(g, [(0, 1), (2, 3), (4, 5)], 16), range(3))
    states = [state_of(cl, 0), merged(cl, 1, 2), merged(cl, 3, 4), state_of(cl, 5)]
    plus, minus = bipartition_safe(cl, states)
    assert len(plus) == len(minus) == 2
    assert locally_optimal(cl, plus, minus)
    sides = [s in plus for s in states]
    assert all(x != y for x, y in zip(sides, sides[1:]))


def test_bipartition_triangle():
    g = graph([1] * 6, [(i, i + 1) for i in range(5)])
    cl = Clustering(McncInstance.create(g, [(0, 2), (3, 4), (5, 1)], 16), range(3))
    states = [merged(cl, 0, 1), merged(cl, 2, 3), merged(cl, 4, 5)]
    plus, minus = bipartition_safe(cl, states)
    assert (len(plus), len(minus)) == (2, 1)
    assert locally_optimal(cl, plus, minus)


def test_bipartition_without_crossing_is_degenerate():
    g = graph([1] * 4, [(0, 1), (1, 2), (2, 3)])
    cl = Clustering(McncInstance.create(g, [(0, 1), (2, 3)], 16), range(2))
    with pytest.raises(Degenerate):
        bipartition_safe(cl, [merged(cl, 0, 1), merged(cl, 2, 3)])


# ---------------------------------------------------------------------------
# merging along sub-instance flows


def test_merge_two_singletons_at_a_plain_node():
    inst, cl = two_sided(16)
    a, b, f = state_of(cl, 0), state_of(cl, 1), state_of(cl, 3)
    f.status = EXTERNAL
    sub = build_I1([a, b], [f], inst.graph, 16)
    sa, sb = sorted(sub.source_of)
    (root,) = sub.root_of
    t = sub.sink
    flow = UnsplittableFlow(t, {sa: Fraction(1), sb: Fraction(1)},
                            {sa: (sa, 0, 2, 3, root, t), sb: (sb, 1, 2, 3, root, t)})
    out = merge_from_flow(cl, sub, flow)
    assert len(out.new_clusters) == 1
    new = out.new_clusters[0]
    assert new.terminals == {0, 1} and {0, 1, 2} <= new.tree
    assert new.status == ACTIVE


def test_merge_into_frozen_root_keeps_crossing():
    inst, cl = two_sided(16)
    a, f = state_of(cl, 0), state_of(cl, 3)
    f.status = EXTERNAL
    before = cl.counts(f)[1]
    sub = build_I1([a], [f], inst.graph, 16)
    (sa,), (root,), t = sub.source_of, sub.root_of, sub.sink
    flow = UnsplittableFlow(t, {sa: Fraction(1)}, {sa: (sa, 0, 2, 3, root, t)})
    out = merge_from_flow(cl, sub, flow)
    assert out.new_clusters == []
    assert f.terminals == {0, 3} and {0, 2, 3} <= f.tree
    assert cl.counts(f)[1] <= before


# ---------------------------------------------------------------------------
# clustering phase


def matching(k, q):
    g = graph([1] * (2 * k), [(2 * i, 2 * i + 1) for i in range(k)])
    return McncInstance.create(g, [(2 * i, 2 * i + 1) for i in range(k)], q)


def test_phase_adjacent_pairs_freeze_internal():
    inst = matching(3, 16)
    ledger = Ledger()
    phase = clustering_phase(inst, range(3), McncKnobs(), ledger)
    assert phase.iterations == 1
    assert all(s.status == INTERNAL for s in phase.frozen)
    assert not ledger.failures()


def test_phase_cycle_iterations():
    g = graph([1] * 8, [(i, (i + 1) % 8) for i in range(8)])
    inst = McncInstance.create(g, [(0, 4), (1, 5), (2, 6), (3, 7)], 2)
    ledger = Ledger()
    phase = clustering_phase(inst, range(4), McncKnobs(), ledger)
    assert phase.iterations <= math.ceil(math.log(8, 4 / 3))
    assert not ledger.failures()


def test_phase_hub_membership():
    n = 9
    g = graph([1] * n, [(0, v) for v in range(1, n)])
    inst = McncInstance.create(g, [(1, 2), (3, 4), (5, 6), (7, 8)], 16)
    ledger = Ledger()
    phase = clustering_phase(inst, range(4), McncKnobs(), ledger)
    assert phase.clustering.membership().get(0, 0) <= 2 * phase.iterations
    assert not ledger.failures()


def test_phase_needs_pairs():
    from nodecap.errors import PhaseStall
    with pytest.raises(PhaseStall):
        clustering_phase(matching(1, 4), [], McncKnobs(), Ledger())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([2, 9, 16]))
def test_phase_assigns_each_terminal_once(seed, q):
    rng = random.Random(seed)
    inst = random_mcnc(10, 4, q, rng)
    ledger = Ledger()
    phase = clustering_phase(inst, range(4), McncKnobs(), ledger)
    cl = phase.clustering
    seen = [v for s in cl.states.values() for v in s.terminals]
    assert len(seen) == len(set(seen))
    alive_ends = {v for i in cl.alive for v in (inst.pairs[i].source, inst.pairs[i].sink)}
    assert set(seen) == alive_ends
    assert all(s.frozen for s in cl.states.values())
    for s in cl.states.values():
        assert inst.graph.is_connected_set(s.tree) and s.terminals <= s.tree
    assert not ledger.failures()


# ---------------------------------------------------------------------------
# hallucination and the backbone LP


def test_hallucinate_small_q_samples_everything():
    assert hallucination_prob(4, 64) == 1.0
    plan = hallucinate(list(range(20)), 4, 64, random.Random(0))
    assert plan.sampled == list(range(20))


def test_hallucinate_empty():
    assert hallucinate([], 100, 64, random.Random(0)).sampled == []


def test_hallucinate_rate_matches_binomial():
    p = 4 * math.log(64) / 100
    assert hallucination_prob(100, 64) == pytest.approx(p)
    k, seeds = 1000, 200
    total = sum(len(hallucinate(range(k), 100, 64, random.Random(s)).sampled) for s in range(seeds))
    rate = total / (k * seeds)
    sigma = math.sqrt(p * (1 - p) / (k * seeds))
    assert abs(rate - p) <= 3 * sigma


def test_lp_single_path():
    g = graph([2, 3, 4], [(0, 1), (1, 2)])
    lp = solve_lp_h(g, [(0, 2)], 5, 3)
    assert lp.x == pytest.approx([1.0, 1.0, 1.0])
    assert lp.cost == pytest.approx(9.0)
    assert len(lp.flows[0]) == 1 and lp.flows[0][0][0] == (0, 1, 2)


def path_lp(g, pairs, q, upper):
    """Independent route: path-formulation LP with scipy."""
    G = nx.Graph(g.edges)
    G.add_nodes_from(range(g.node_count))
    paths = [list(nx.all_simple_paths(G, s, t)) for s, t in pairs]
    n = g.node_count
    cols = [(i, p) for i, plist in enumerate(paths) for p in plist]
    nvar = n + len(cols)
    c = np.array([float(x) for x in g.node_cost] + [0.0] * len(cols))
    A, b = [], []
    for i in range(len(pairs)):
        row = np.zeros(nvar)
        for j, (pi, _) in enumerate(cols):
            if pi == i:
                row[n + j] = -1
        A.append(row)
        b.append(-q)
    for v in range(n):
        row = np.zeros(nvar)
        row[v] = -q
        for j, (_, p) in enumerate(cols):
            if v in p:
                row[n + j] = 1
        A.append(row)
        b.append(0)
    bounds = [(0, upper)] * n + [(0, None)] * len(cols)
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    return res.fun, res.x[:n]


def test_lp_shared_node():
    # pairs (0,3) and (1,4) both must cross node 2
    g = graph([1, 1, 5, 1, 1], [(0, 2), (1, 2), (2, 3), (2, 4)])
    lp = solve_lp_h(g, [(0, 3), (1, 4)], 4, 5)
    assert lp.x[2] == pytest.approx(2.0)
    cost, x = path_lp(g, [(0, 3), (1, 4)], 4, 8 * math.log(5))
    assert lp.cost == pytest.approx(cost)
    assert lp.x == pytest.approx(list(x))


def test_lp_matches_path_formulation_on_random_graphs():
    rng = random.Random(21)
    for _ in range(6):
        inst = random_mcnc(7, 2, 4, rng)
        pairs = [(p.source, p.sink) for p in inst.pairs]
        lp = solve_lp_h(inst.graph, pairs, 4, 7)
        cost, _ = path_lp(inst.graph, pairs, 4, 8 * math.log(7))
        assert lp.cost == pytest.approx(cost, rel=1e-6)


def test_lp_disconnected_pair():
    with pytest.raises(Infeasible):
        solve_lp_h(graph([1] * 4, [(0, 1), (2, 3)]), [(0, 2)], 4, 4)


def test_round_single_path():
    assert round_lp_h([[((0, 1, 2), 4.0)]], random.Random(1)) == [(0, 1, 2)]


def test_round_fifty_fifty():
    flows = [[((0, 1, 3), 2.0), ((0, 2, 3), 2.0)]]
    hits = sum(round_lp_h(flows, random.Random(s))[0] == (0, 1, 3) for s in range(400))
    assert abs(hits / 400 - 0.5) <= 3 * math.sqrt(0.25 / 400)


def test_round_expected_cost_matches_lp():
    # pairs (5,6) and (7,8) cross via node 1 (cost 1) or node 2 (cost 3); x <= 1.5 forces a split
    g = graph([0, 1, 3, 0, 0, 0, 0, 0, 0],
              [(5, 1), (5, 2), (7, 1), (7, 2), (1, 6), (2, 6), (1, 8), (2, 8)])
    lp = solve_lp_h(g, [(5, 6), (7, 8)], 4, 9, c_x=1.5 / math.log(9))
    assert lp.cost == pytest.approx(3.0)
    trials = 2000
    total = 0.0
    for s in range(trials):
        for path in round_lp_h(lp.flows, random.Random(s)):
            total += sum(float(g.node_cost[v]) for v in path)
    # each rounded path carries q units, so the expected cost is the LP cost
    assert total / trials == pytest.approx(lp.cost, rel=0.1)


# ---------------------------------------------------------------------------
# cluster graph decomposition


def cluster_graph(vertices, edges):
    return ClusterGraph(vertices, [(a, b, i) for i, (a, b) in enumerate(edges)])


def cut_enumeration(vertices, edges):
    vertices = sorted(vertices)
    best = None
    for r in range(1, len(vertices)):
        for side in itertools.combinations(vertices, r):
            s = set(side)
            c = sum(1 for a, b, *_ in edges if a in vertices and b in vertices and (a in s) != (b in s))
            best = c if best is None else min(best, c)
    return best


def check_decomposition(gc, dec, q):
    assert len(dec.removed) <= gc.vertex_count * DELTA * q / 4
    for comp in dec.components:
        if len(comp) > 1:
            assert cut_enumeration(comp, dec.retained) >= DELTA * q / 8


def test_mincut_dumbbell():
    gc = cluster_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
    dec = mincut_decompose(gc, 64)
    assert sorted(map(sorted, dec.components)) == [[0, 1, 2], [3, 4, 5]]
    assert [e[:2] for e in dec.removed] == [(2, 3)]
    check_decomposition(gc, dec, 64)


def test_mincut_cycle_unchanged():
    gc = cluster_graph(6, [(i, (i + 1) % 6) for i in range(6)])
    dec = mincut_decompose(gc, 64)
    assert dec.components == [frozenset(range(6))] and dec.removed == []


def test_mincut_clique_unchanged():
    gc = cluster_graph(4, list(itertools.combinations(range(4), 2)))
    dec = mincut_decompose(gc, 32)
    assert dec.components == [frozenset(range(4))] and dec.removed == []
    assert min_cut_value(range(4), gc.edges) == 3


def test_mincut_peeled_side_is_split_again():
    # the zero cut peels {0, 4} first; its single internal edge is still below delta*q/8 = 2
    gc = cluster_graph(7, [(0, 4), (2, 3), (5, 1)])
    dec = mincut_decompose(gc, 128)
    assert dec.components == [] and len(dec.removed) == 3
    check_decomposition(gc, dec, 128)


def test_min_cut_large_graph_matches_networkx():
    rng = random.Random(4)
    G = nx.gnm_random_graph(18, 50, seed=4)
    edges = [(a, b, i) for i, (a, b) in enumerate(G.edges())]
    if nx.is_connected(G):
        assert min_cut_value(range(18), edges) == nx.stoer_wagner(G)[0]
    assert rng


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_mincut_random_cluster_graphs(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 14)
    edges = [tuple(rng.sample(range(n), 2)) for _ in range(rng.randint(1, 4 * n))]
    gc = cluster_graph(n, edges)
    q = rng.choice([16, 32, 64, 128])
    check_decomposition(gc, mincut_decompose(gc, q), q)


# ---------------------------------------------------------------------------
# routing


def two_cluster_fixture(q=4):
    g = graph([1] * 5, [(0, 1), (2, 3), (1, 4), (4, 2)])
    inst = McncInstance.create(g, [(0, 2), (1, 3)], q)
    a = ClusterState(0, {0, 1}, {0, 1}, EXTERNAL)
    b = ClusterState(1, {2, 3}, {2, 3}, EXTERNAL)
    return inst, a, b


def test_route_component_two_clusters():
    inst, a, b = two_cluster_fixture()
    cr = route_component(inst, [a, b], [0, 1], {0: (0, 1, 4, 2), 1: (1, 4, 2, 3)})
    assert cr.throughput >= 1
    check_routing(inst, cr.routed, [0, 1])
    assert cr.max_edge_load <= inst.capacity + 1e-9


def test_route_component_cycle_of_clusters():
    g = graph([1] * 8, [(i, (i + 1) % 8) for i in range(8)])
    inst = McncInstance.create(g, [(1, 2), (3, 4), (5, 6), (7, 0)], 2)
    comp = [ClusterState(j, {2 * j, 2 * j + 1}, {2 * j, 2 * j + 1}, EXTERNAL) for j in range(4)]
    sampled = {0: (1, 2), 1: (3, 4), 2: (5, 6), 3: (7, 0)}
    cr = route_component(inst, comp, [0, 1, 2, 3], sampled)
    assert cr.max_edge_load <= inst.capacity + 1e-9
    check_routing(inst, cr.routed, [0, 1, 2, 3])


def test_route_component_without_samples_fails():
    inst, a, b = two_cluster_fixture()
    with pytest.raises(SparsifierFailure):
        route_component(inst, [a, b], [0, 1], {})


def test_route_internal():
    # one internal tree 0-1-2-3 holding pairs (0,3) and (1,2); pair (4,5) lies elsewhere
    g = graph([1] * 6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)])
    inst = McncInstance.create(g, [(0, 3), (1, 2), (4, 5)], 4)
    st_ = ClusterState(0, {0, 1, 2, 3}, {0, 1, 2, 3}, INTERNAL)
    other = ClusterState(1, {4}, {4}, INTERNAL)
    routes = route_internal(inst, [st_, other], [0, 1, 2])
    assert routes == {0: [((0, 1, 2, 3), 1.0)], 1: [((1, 2), 1.0)]}
    loads = {}
    for plist in routes.values():
        for path, amount in plist:
            for v in path:
                loads[v] = loads.get(v, 0) + amount
    assert loads == {0: 1, 1: 2, 2: 2, 3: 1}
    assert max(loads.values()) <= st_.load


# ---------------------------------------------------------------------------
# end to end


def test_solve_adjacent_pairs_one_iteration():
    inst = matching(3, 16)
    sol = solve_mcnc(inst)
    assert sol.outer_iterations == 1
    assert max(sol.loads.values()) == 1
    assert not sol.ledger.failures()
    check_routing(inst, sol.routing, range(3))


def test_solve_single_pair_is_shortest_path():
    g = graph([0, 2, 5, 1, 1, 0], [(0, 1), (1, 5), (0, 2), (2, 5), (0, 3), (3, 4), (4, 5)])
    inst = McncInstance.create(g, [(0, 5)], 4)
    sol = solve_mcnc(inst)
    G = nx.Graph(g.edges)
    best = min(sum(g.node_cost[v] for v in p) for p in nx.all_simple_paths(G, 0, 5))
    assert sol.cost == best == 2
    check_routing(inst, sol.routing, [0])


def test_solve_ten_node_fixture():
    inst = random_mcnc(10, 4, 2, random.Random(10))
    sol = solve_mcnc(inst)
    check_routing(inst, sol.routing, range(4))
    assert not sol.ledger.failures()


def test_solve_is_deterministic():
    inst = random_mcnc(10, 4, 9, random.Random(3))
    a, b = solve_mcnc(inst, seed=5), solve_mcnc(inst, seed=5)
    assert a.routing == b.routing and a.cost == b.cost
    assert [r.as_dict() for r in a.ledger.records] == [r.as_dict() for r in b.ledger.records]


def test_solve_corpus_ledgers_clean():
    for inst in mcnc_corpus():
        sol = solve_mcnc(inst)
        check_routing(inst, sol.routing, range(len(inst.pairs)))
        assert not sol.ledger.failures()


def test_karger_full_sample_always_passes():
    edges = list(itertools.combinations(range(5), 2))
    assert karger_sample_ok(5, edges, 1.0, 0.1, random.Random(0))


def test_karger_empty_sample_fails():
    edges = list(itertools.combinations(range(4), 2))
    assert not karger_sample_ok(4, edges, 1e-12, 0.5, random.Random(0))
