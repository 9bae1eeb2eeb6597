"""Shared builders for test instances."""

import random
from fractions import Fraction

import networkx as nx
import pytest

from nodecap.flow_engine import (
    SplittableFlow,
    cancel_cycles,
    dgg_unsplittable,
    single_sink_max_flow,
    widest_decomposition,
)
from nodecap.graph_core import (
    DirectedNodeCapGraph,
    McncInstance,
    SsncInstance,
    UndirectedMultigraph,
    validate_instance,
)


def graph(costs, edges):
    return UndirectedMultigraph(tuple(Fraction(c) for c in costs), tuple(edges))


def random_connected(n, p, rng, cost_range=(1, 9)):
    while True:
        G = nx.gnp_random_graph(n, p, seed=rng.randrange(2**31))
        if nx.is_connected(G):
            break
    return graph([rng.randint(*cost_range) for _ in range(n)], sorted(G.edges()))


def random_ssnc(n, q, rng, sources=None, p=0.35):
    while True:
        g = random_connected(n, p, rng)
        nodes = list(range(n))
        sink = rng.choice(nodes)
        rest = [v for v in nodes if v != sink]
        count = sources or rng.randint(1, max(1, len(rest) // 2))
        chosen = sorted(rng.sample(rest, count))
        inst = SsncInstance(g, sink, tuple((s, rng.randint(1, q)) for s in chosen), q)
        if not validate_instance(inst):
            return inst


def random_mcnc(n, k, q, rng, p=0.35):
    g = random_connected(n, p, rng)
    nodes = list(range(n))
    rng.shuffle(nodes)
    return McncInstance.create(g, [(nodes[2 * i], nodes[2 * i + 1]) for i in range(k)], q)


def acyclic_unsplittable(inst, capacity=None):
    """Unsplittable flow for every source at node capacity ``capacity`` (default q), or None."""
    g = DirectedNodeCapGraph.from_ssnc(inst) if capacity is None else \
        DirectedNodeCapGraph.from_undirected(inst.graph, capacity, unbounded={inst.sink})
    demands = {s: Fraction(d) for s, d in inst.sources}
    value, flow = single_sink_max_flow(g, demands, inst.sink)
    if value < sum(demands.values()):
        return None
    arcs = cancel_cycles(flow.arc_flows())
    paths = widest_decomposition(arcs, demands, inst.sink)
    return dgg_unsplittable(SplittableFlow(inst.sink, demands, paths), inst.sink)


def ssnc_corpus(count=32, seed=2024):
    rng = random.Random(seed)
    out = []
    for i in range(count):
        n = rng.randint(6, 11)
        q = rng.choice([2, 3, 4])
        out.append(random_ssnc(n, q, rng))
    return out


def mcnc_corpus(count=12, seed=77):
    rng = random.Random(seed)
    out = []
    for i in range(count):
        n = rng.randint(6, 10)
        k = rng.randint(1, min(4, n // 2))
        q = rng.choice([2, 4, 9, 16])
        out.append(random_mcnc(n, k, q, rng))
    return out


@pytest.fixture
def rng():
    return random.Random(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
