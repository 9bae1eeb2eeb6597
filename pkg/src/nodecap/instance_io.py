"""Versioned JSON instance files and deterministic instance generators."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import networkx as nx

from .energy_routing import EevrpInstance
from .errors import ParseError
from .graph_core import McncInstance, SsncInstance, UndirectedMultigraph, validate_instance

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
KINDS = ("ssnc", "mcnc", "eevrp")
_TOP = {"format_version", "kind", "graph", "params", "sink", "sources", "pairs", "fixture"}
_PARAMS = {"ssnc": {"q"}, "mcnc": {"q"}, "eevrp": {"sigma", "alpha"}}


@dataclass
class InstanceFile:
    kind: str
    graph: UndirectedMultigraph
    params: dict[str, Fraction]
    sink: int | None = None
    sources: list[tuple[int, int]] = field(default_factory=list)
    pairs: list[tuple[int, int]] = field(default_factory=list)
    fixture: dict[str, Any] = field(default_factory=dict)

    def to_instance(self):
        if self.kind == "ssnc":
            return SsncInstance(self.graph, self.sink, tuple(self.sources), int(self.params["q"]))
        if self.kind == "mcnc":
            return McncInstance.create(self.graph, self.pairs, int(self.params["q"]))
        return EevrpInstance(self.graph, tuple(self.pairs), float(self.params["sigma"]), float(self.params["alpha"]))

    def as_dict(self) -> dict:
        g = self.graph
        out: dict[str, Any] = {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "graph": {
                "nodes": [{"cost": _num(c), "label": l} for c, l in zip(g.node_cost, g.labels)],
                "edges": [[u, v] for u, v in g.edges],
            },
            "params": {k: _num(v) for k, v in sorted(self.params.items())},
        }
        if self.kind == "ssnc":
            out["sink"] = self.sink
            out["sources"] = [{"node": s, "demand": d} for s, d in self.sources]
        else:
            out["pairs"] = [[s, t] for s, t in self.pairs]
        if self.fixture:
            out["fixture"] = self.fixture
        return out


def _num(x) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def serialize(f: InstanceFile) -> str:
    return json.dumps(f.as_dict(), sort_keys=True, indent=2) + "\n"


class _Reader:
    def __init__(self, strict: bool):
        self.strict = strict

    def fail(self, path: str, msg: str):
        raise ParseError(f"{path}: {msg}", path=path)

    def unknown(self, path: str, keys):
        if not keys:
            return
        msg = f"{path}: unknown field(s) {sorted(keys)}"
        if self.strict:
            raise ParseError(msg, path=path)
        log.warning(msg)

    def obj(self, value, path) -> dict:
        if not isinstance(value, dict):
            self.fail(path, "expected an object")
        return value

    def lst(self, value, path) -> list:
        if not isinstance(value, list):
            self.fail(path, "expected a list")
        return value

    def integer(self, value, path) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, "expected an integer")
        return value

    def rational(self, value, path) -> Fraction:
        if isinstance(value, bool):
            self.fail(path, "expected a number")
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, str):
            try:
                return Fraction(value)
            except (ValueError, ZeroDivisionError):
                self.fail(path, f"not an exact rational: {value!r}")
        self.fail(path, "expected an integer or a rational string")


def parse(text: str, strict: bool = True) -> InstanceFile:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}", line=exc.lineno, path="") from exc
    r = _Reader(strict)
    top = r.obj(raw, "$")
    r.unknown("$", set(top) - _TOP)
    if top.get("format_version") != FORMAT_VERSION:
        r.fail("$.format_version", f"unsupported version {top.get('format_version')!r}")
    kind = top.get("kind")
    if kind not in KINDS:
        r.fail("$.kind", f"expected one of {KINDS}")
    graph = r.obj(top.get("graph"), "$.graph")
    r.unknown("$.graph", set(graph) - {"nodes", "edges"})
    nodes = r.lst(graph.get("nodes"), "$.graph.nodes")
    if not nodes:
        r.fail("$.graph.nodes", "graph has no nodes")
    costs, labels = [], []
    for i, node in enumerate(nodes):
        p = f"$.graph.nodes[{i}]"
        node = r.obj(node, p)
        r.unknown(p, set(node) - {"cost", "label"})
        costs.append(r.rational(node.get("cost"), p + ".cost"))
        label = node.get("label", str(i))
        if not isinstance(label, str):
            r.fail(p + ".label", "expected a string")
        labels.append(label)
    edges = []
    for i, e in enumerate(r.lst(graph.get("edges", []), "$.graph.edges")):
        p = f"$.graph.edges[{i}]"
        e = r.lst(e, p)
        if len(e) != 2:
            r.fail(p, "an edge has two endpoints")
        edges.append((r.integer(e[0], p + "[0]"), r.integer(e[1], p + "[1]")))
    try:
        g = UndirectedMultigraph(tuple(costs), tuple(edges), tuple(labels))
    except ValueError as exc:
        raise ParseError(f"$.graph: {exc}", path="$.graph") from exc
    params_raw = r.obj(top.get("params"), "$.params")
    r.unknown("$.params", set(params_raw) - _PARAMS[kind])
    params = {}
    for key in sorted(_PARAMS[kind]):
        if key not in params_raw:
            r.fail(f"$.params.{key}", "missing")
        params[key] = r.rational(params_raw[key], f"$.params.{key}")
    if "q" in params and (params["q"].denominator != 1 or params["q"] < 1):
        r.fail("$.params.q", "capacity must be a positive integer")
    f = InstanceFile(kind, g, params)
    if kind == "ssnc":
        f.sink = r.integer(top.get("sink"), "$.sink")
        for i, s in enumerate(r.lst(top.get("sources"), "$.sources")):
            p = f"$.sources[{i}]"
            s = r.obj(s, p)
            r.unknown(p, set(s) - {"node", "demand"})
            f.sources.append((r.integer(s.get("node"), p + ".node"), r.integer(s.get("demand"), p + ".demand")))
        if "pairs" in top:
            r.unknown("$", {"pairs"})
    else:
        for i, pr in enumerate(r.lst(top.get("pairs"), "$.pairs")):
            p = f"$.pairs[{i}]"
            pr = r.lst(pr, p)
            if len(pr) != 2:
                r.fail(p, "a pair has two endpoints")
            f.pairs.append((r.integer(pr[0], p + "[0]"), r.integer(pr[1], p + "[1]")))
        if "sink" in top or "sources" in top:
            r.unknown("$", {"sink", "sources"} & set(top))
    if "fixture" in top:
        f.fixture = r.obj(top["fixture"], "$.fixture")
    return f


def load(path: str, strict: bool = True) -> InstanceFile:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), strict)


def dump(f: InstanceFile, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(f))


# ---------------------------------------------------------------------------
# generators

GENERATORS = ("random-geometric", "grid", "star-pathological", "binary-merge", "dumbbell", "path")


def _connect(G: nx.Graph, pos=None):
    comps = sorted((sorted(c) for c in nx.connected_components(G)), key=lambda c: c[0])
    for a, b in zip(comps, comps[1:]):
        G.add_edge(a[-1], b[0])


def _graph_from_nx(G: nx.Graph, rng: random.Random, cost_range=(1, 9), fixed=None) -> UndirectedMultigraph:
    order = sorted(G.nodes())
    index = {v: i for i, v in enumerate(order)}
    costs = []
    for v in order:
        if fixed is not None and v in fixed:
            costs.append(Fraction(fixed[v]))
        else:
            costs.append(Fraction(rng.randint(*cost_range)))
    edges = tuple(sorted((min(index[u], index[v]), max(index[u], index[v])) for u, v in G.edges()))
    return UndirectedMultigraph(tuple(costs), edges, tuple(str(v) for v in order))


def _demands(g: UndirectedMultigraph, problem: str, rng: random.Random, params: dict, sink=None, candidates=None):
    n = g.node_count
    q = int(params.get("q", 2))
    f = InstanceFile(problem, g, {"q": Fraction(q)} if problem != "eevrp"
                     else {"sigma": Fraction(params.get("sigma", 16)), "alpha": Fraction(params.get("alpha", 2))})
    nodes = list(candidates) if candidates is not None else list(range(n))
    if problem == "ssnc":
        f.sink = sink if sink is not None else nodes[rng.randrange(len(nodes))]
        rest = [v for v in nodes if v != f.sink]
        count = min(int(params.get("sources", max(1, len(rest) // 2))), len(rest))
        chosen = sorted(rng.sample(rest, count))
        f.sources = [(s, rng.randint(1, int(params.get("max_demand", q)))) for s in chosen]
    else:
        k = int(params.get("pairs", max(1, len(nodes) // 4)))
        if 2 * k > len(nodes):
            raise ValueError("not enough nodes for disjoint pairs")
        picks = rng.sample(nodes, 2 * k)
        f.pairs = [(picks[2 * i], picks[2 * i + 1]) for i in range(k)]
    return f


def generate(kind: str, params: dict, seed: int = 0) -> InstanceFile:
    rng = random.Random(seed)
    problem = params.get("problem", "ssnc")
    if problem not in KINDS:
        raise ValueError(f"unknown problem {problem!r}")
    if kind == "random-geometric":
        n = int(params.get("n", 10))
        if n < 2:
            raise ValueError("n must be at least 2")
        G = nx.random_geometric_graph(n, float(params.get("radius", 0.45)), seed=rng.randrange(2**31))
        G = nx.Graph(G.edges()) if G.number_of_edges() else nx.empty_graph(n)
        G.add_nodes_from(range(n))
        _connect(G)
        f = _demands(_graph_from_nx(G, rng), problem, rng, params)
    elif kind == "grid":
        rows, cols = int(params.get("rows", 3)), int(params.get("cols", 3))
        if rows < 1 or cols < 1 or rows * cols < 2:
            raise ValueError("grid needs at least two cells")
        G = nx.convert_node_labels_to_integers(nx.grid_2d_graph(rows, cols), ordering="sorted")
        f = _demands(_graph_from_nx(G, rng), problem, rng, params)
    elif kind == "star-pathological":
        n = int(params.get("n", 10))
        if n < 3:
            raise ValueError("a star needs at least three nodes")
        G = nx.star_graph(n - 1)
        g = _graph_from_nx(G, rng, fixed={0: params.get("center_cost", 1)})
        leaves = list(range(1, n))
        f = _demands(g, problem, rng, params, sink=1 if problem == "ssnc" else None, candidates=leaves)
    elif kind == "binary-merge":
        depth = int(params.get("depth", 2))
        if depth < 1:
            raise ValueError("depth must be at least 1")
        G = nx.balanced_tree(2, depth)
        q = int(params.get("q", 2))
        g = _graph_from_nx(G, rng, fixed={v: 1 for v in G.nodes()})
        leaves = sorted(v for v in G.nodes() if G.degree(v) == 1 and v != 0)
        f = InstanceFile("ssnc", g, {"q": Fraction(q)}, 0, [(v, int(params.get("demand", 1))) for v in leaves])
    elif kind == "dumbbell":
        m = int(params.get("m", 3))
        if m < 2:
            raise ValueError("each bell needs at least two nodes")
        G = nx.barbell_graph(m, int(params.get("bridge", 0)))
        f = _demands(_graph_from_nx(G, rng), problem, rng, params)
    elif kind == "path":
        n = int(params.get("n", 2))
        if n < 2:
            raise ValueError("n must be at least 2")
        G = nx.path_graph(n)
        g = _graph_from_nx(G, rng)
        if problem == "ssnc":
            f = InstanceFile("ssnc", g, {"q": Fraction(int(params.get("q", 1)))}, n - 1, [(0, 1)])
        else:
            f = _demands(g, problem, rng, {**params, "pairs": params.get("pairs", 1)})
    else:
        raise ValueError(f"unknown generator {kind!r}; choose from {GENERATORS}")
    if f.kind != "eevrp":
        problems = validate_instance(f.to_instance())
        if problems:
            raise ValueError("generated instance is invalid: " + "; ".join(problems))
    return f


def from_instance(inst, fixture=None) -> InstanceFile:
    if isinstance(inst, SsncInstance):
        return InstanceFile("ssnc", inst.graph, {"q": Fraction(inst.capacity)}, inst.sink, list(inst.sources),
                            fixture=dict(fixture or {}))
    if isinstance(inst, McncInstance):
        return InstanceFile("mcnc", inst.graph, {"q": Fraction(inst.capacity)},
                            pairs=[(p.source, p.sink) for p in inst.pairs], fixture=dict(fixture or {}))
    if isinstance(inst, EevrpInstance):
        return InstanceFile("eevrp", inst.graph, {"sigma": Fraction(inst.static_power), "alpha": Fraction(inst.exponent)},
                            pairs=[(p.source, p.sink) for p in inst.pairs], fixture=dict(fixture or {}))
    raise TypeError(f"unsupported instance type {type(inst).__name__}")
