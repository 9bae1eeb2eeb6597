"""Multicommodity solver: clustering phases, hallucinated backbone, cut-based routing.

Each outer iteration clusters the remaining terminals (merging clusters along
single-sink sub-solutions), buys a backbone by rounding an LP over randomly
hallucinated demands, then routes either the pairs inside internal clusters or
the pairs of the external cluster graph through the backbone.  Unrouted pairs
go to the next iteration.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import networkx as nx

from .clustering import Cluster, cluster_step
from .errors import Degenerate, Infeasible, MalformedFlow, OuterStall, PhaseStall, SparsifierFailure
from .flow_engine import (
    SplittableFlow,
    UnsplittableFlow,
    cancel_cycles,
    concurrent_mcf,
    decompose_float_flow,
    dgg_unsplittable,
    node_flow_lp,
    widest_decomposition,
)
from .graph_core import McncInstance, SsncInstance, UndirectedMultigraph, validate_instance
from .ssnc_solver import SsncKnobs, loop_erase, solve_ssnc

log = logging.getLogger(__name__)

ACTIVE, UNSAFE, INTERNAL, EXTERNAL = "active-safe", "active-unsafe", "frozen-internal", "frozen-external"
FROZEN = (INTERNAL, EXTERNAL)
DELTA = Fraction(1, 8)


@dataclass(frozen=True)
class McncKnobs:
    c_h: float = 4.0
    c_x: float = 8.0
    c_outer: int = 8
    eps: float = 0.05
    beta_hat: float = 1.0
    ssnc: SsncKnobs = SsncKnobs(precheck=False)
    audit: bool = True


@dataclass
class ClusterState:
    ident: int
    tree: set
    terminals: set
    status: str = ACTIVE

    @property
    def load(self) -> int:
        return len(self.terminals)

    @property
    def frozen(self) -> bool:
        return self.status in FROZEN

    @property
    def active(self) -> bool:
        return self.status in (ACTIVE, UNSAFE)

    def cluster(self) -> Cluster:
        return Cluster.make(self.tree, {v: 1 for v in self.terminals})


@dataclass
class AuditRecord:
    outer: int
    iteration: int
    prop: str
    value: float
    bound: float
    ok: bool

    def as_dict(self) -> dict:
        return dict(outer=self.outer, iteration=self.iteration, property=self.prop,
                    value=self.value, bound=self.bound, ok=self.ok)


class Ledger:
    def __init__(self):
        self.records: list[AuditRecord] = []
        self.outer = 0
        self.iteration = 0

    def check(self, prop: str, value, bound, ok=None) -> bool:
        ok = (value <= bound + 1e-9) if ok is None else ok
        self.records.append(AuditRecord(self.outer, self.iteration, prop, float(value), float(bound), bool(ok)))
        if not ok:
            log.warning("audit %s failed: %s > %s", prop, value, bound)
        return ok

    def failures(self) -> list[AuditRecord]:
        return [r for r in self.records if not r.ok]


# ---------------------------------------------------------------------------
# cluster bookkeeping


class Clustering:
    """Mutable cluster collection for one clustering phase."""

    def __init__(self, inst: McncInstance, pair_ids: Sequence[int]):
        self.inst = inst
        self.q = inst.capacity
        self.alive = set(pair_ids)
        self.mate: dict[int, int] = {}
        self.pair_of: dict[int, int] = {}
        for i in pair_ids:
            p = inst.pairs[i]
            self.mate[p.source] = p.sink
            self.mate[p.sink] = p.source
            self.pair_of[p.source] = i
            self.pair_of[p.sink] = i
        self.states: dict[int, ClusterState] = {}
        self.owner: dict[int, int] = {}
        self._next = 0
        for v in sorted(self.mate):
            self.new_state({v}, {v})

    def new_state(self, tree, terminals, status=ACTIVE) -> ClusterState:
        st = ClusterState(self._next, set(tree), set(terminals), status)
        self._next += 1
        self.states[st.ident] = st
        for v in terminals:
            self.owner[v] = st.ident
        return st

    def absorb(self, target: ClusterState, other: ClusterState, extra_nodes=()):
        target.tree |= other.tree
        target.tree |= set(extra_nodes)
        target.terminals |= other.terminals
        for v in other.terminals:
            self.owner[v] = target.ident
        del self.states[other.ident]

    def counts(self, st: ClusterState) -> tuple[int, int, int]:
        """(internal terminals, terminals crossing to active, crossing to frozen)."""
        internal = to_active = to_frozen = 0
        for v in st.terminals:
            m = self.mate[v]
            o = self.states[self.owner[m]]
            if o.ident == st.ident:
                internal += 1
            elif o.frozen:
                to_frozen += 1
            else:
                to_active += 1
        return internal, to_active, to_frozen

    def delete_pair(self, i: int):
        p = self.inst.pairs[i]
        self.alive.discard(i)
        for v in (p.source, p.sink):
            st = self.states[self.owner.pop(v)]
            st.terminals.discard(v)
            if not st.terminals:
                del self.states[st.ident]

    def freeze_check(self, st: ClusterState) -> str:
        internal, to_active, to_frozen = self.counts(st)
        if 2 * internal > st.load:
            return INTERNAL
        if 8 * (to_active + to_frozen) >= self.q:
            return EXTERNAL
        if 4 * st.load > self.q:
            return EXTERNAL
        return st.status

    def freeze_all(self) -> list[ClusterState]:
        newly = []
        for st in sorted(self.states.values(), key=lambda s: s.ident):
            if st.active:
                status = self.freeze_check(st)
                if status in FROZEN:
                    st.status = status
                    newly.append(st)
        return newly

    def by_status(self, *statuses) -> list[ClusterState]:
        return sorted((s for s in self.states.values() if s.status in statuses), key=lambda s: s.ident)

    def membership(self) -> dict[int, int]:
        out: dict[int, int] = defaultdict(int)
        for st in self.states.values():
            for v in st.tree:
                out[v] += 1
        return out

    def crossing(self, a: ClusterState, b: ClusterState) -> int:
        return sum(1 for v in a.terminals if self.owner[self.mate[v]] == b.ident)


def make_unsafe(cl: Clustering) -> tuple[list[ClusterState], list[int], int]:
    """Delete active-crossing demands of active clusters with many frozen mates.

    Returns (new unsafe clusters, deleted pair ids, frozen-crossing count of every
    processed cluster at processing time).
    """
    deleted: list[int] = []
    unsafe: list[ClusterState] = []
    witness = 0
    while True:
        target = None
        for st in cl.by_status(ACTIVE):
            _, _, to_frozen = cl.counts(st)
            if 4 * to_frozen > st.load:
                target = st
                witness += to_frozen
                break
        if target is None:
            break
        for v in sorted(target.terminals):
            m = cl.mate[v]
            if cl.states[cl.owner[m]].ident != target.ident and cl.states[cl.owner[m]].active:
                deleted.append(cl.pair_of[v])
        for i in sorted(set(deleted) & cl.alive):
            cl.delete_pair(i)
        for st in cl.by_status(ACTIVE, UNSAFE):
            internal, _, _ = cl.counts(st)
            if 2 * internal > st.load:
                st.status = INTERNAL
        if target.ident in cl.states and target.status == ACTIVE:
            target.status = UNSAFE
            unsafe.append(target)
    return [u for u in unsafe if u.ident in cl.states and u.status == UNSAFE], deleted, witness


# ---------------------------------------------------------------------------
# single-sink sub-instances


@dataclass
class SubInstance:
    ssnc: SsncInstance
    source_of: dict[int, int]  # s_T node -> cluster id
    root_of: dict[int, int]  # fake root node -> cluster id
    sink: int
    base_nodes: int

    @property
    def fake(self) -> set:
        return set(self.source_of) | set(self.root_of) | {self.sink}


def _augment(g: UndirectedMultigraph, sources: Sequence[ClusterState], roots: Sequence[ClusterState],
             capacity: int, root_scale: Fraction) -> SubInstance:
    costs = list(g.node_cost)
    labels = list(g.labels)
    edges = list(g.edges)
    source_of, root_of = {}, {}
    for st in sources:
        s = len(costs)
        costs.append(Fraction(0))
        labels.append(f"s_T{st.ident}")
        source_of[s] = st.ident
        edges.extend((s, v) for v in sorted(st.terminals))
    for st in roots:
        r = len(costs)
        costs.append(Fraction(0))
        labels.append(f"v_R{st.ident}")
        root_of[r] = st.ident
        edges.extend((r, v) for v in sorted(st.terminals))
    t = len(costs)
    costs.append(Fraction(0))
    labels.append("t")
    edges.extend((r, t) for r in root_of)
    aug = UndirectedMultigraph(tuple(costs), tuple(edges), tuple(labels))
    srcs = tuple((s, len(st.terminals)) for s, st in zip(source_of, sources))
    scale = {r: root_scale for r in root_of} if root_scale != 1 else {}
    return SubInstance(SsncInstance(aug, t, srcs, capacity, scale), source_of, root_of, t, g.node_count)


def build_I1(unsafe: Sequence[ClusterState], frozen: Sequence[ClusterState], g: UndirectedMultigraph, q: int,
             beta_hat: float = 1.0) -> SubInstance:
    if not frozen:
        raise Degenerate("unsafe clusters need at least one frozen cluster")
    q_tilde = 5 * q
    return _augment(g, unsafe, frozen, q_tilde, Fraction(8) * Fraction(beta_hat).limit_denominator(10**6))


def build_I2(plus: Sequence[ClusterState], minus: Sequence[ClusterState], g: UndirectedMultigraph, q: int) -> SubInstance:
    if not minus:
        raise Degenerate("sink side of the bipartition is empty")
    return _augment(g, plus, minus, 9 * q, Fraction(1))


def bipartition_safe(cl: Clustering, safe: Sequence[ClusterState]) -> tuple[list[ClusterState], list[ClusterState]]:
    ids = [s.ident for s in safe]
    weight = {(a.ident, b.ident): cl.crossing(a, b) for a in safe for b in safe if a.ident != b.ident}
    if len(safe) < 2 or not any(weight.values()):
        raise Degenerate("no crossing demand among safe clusters")
    side = {i: (k % 2 == 0) for k, i in enumerate(ids)}
    moved = True
    while moved:
        moved = False
        for i in ids:
            own = sum(weight[(i, j)] for j in ids if j != i and side[j] == side[i])
            other = sum(weight[(i, j)] for j in ids if j != i and side[j] != side[i])
            if own > other:
                side[i] = not side[i]
                moved = True
                break
    plus = [s for s in safe if side[s.ident]]
    minus = [s for s in safe if not side[s.ident]]
    if len(plus) < len(minus) or (len(plus) == len(minus) and plus and minus and plus[0].ident > minus[0].ident):
        plus, minus = minus, plus
    if not minus:
        raise Degenerate("bipartition left the sink side empty")
    return plus, minus


def _acyclic_flow(sub: SubInstance, routing: dict[int, tuple]) -> UnsplittableFlow:
    """Truncate paths at their first fake root, then make the flow acyclic."""
    demand = dict(sub.ssnc.sources)
    paths = {}
    for s, p in routing.items():
        cut = next((i for i, v in enumerate(p) if v in sub.root_of), None)
        if cut is None:
            raise MalformedFlow("path reaches the sink without a fake root", source=s)
        paths[s] = tuple(p[: cut + 1]) + (sub.sink,)
    sf = SplittableFlow(sub.sink, {s: Fraction(demand[s]) for s in paths},
                        {s: [(p, Fraction(demand[s]))] for s, p in paths.items()})
    arc = cancel_cycles(sf.arc_flows())
    dec = widest_decomposition(arc, {s: Fraction(demand[s]) for s in paths}, sub.sink)
    acyclic = SplittableFlow(sub.sink, {s: Fraction(demand[s]) for s in paths}, dec)
    return dgg_unsplittable(acyclic, sub.sink)


@dataclass
class MergeOutcome:
    new_clusters: list[ClusterState]
    grown: dict[int, int]  # cluster id -> load increase
    tau_nodes: set
    max_merge_demand: int


def merge_from_flow(cl: Clustering, sub: SubInstance, flow: UnsplittableFlow) -> MergeOutcome:
    X = {s: int(d) for s, d in flow.demands.items()}
    trees = {s: Cluster.make({s}, {s: X[s]}) for s in X}
    big = sum(X.values()) + 1
    step = cluster_step(X, flow, trees, big, sub.sink, cap=big)
    fake = sub.fake
    out = MergeOutcome([], defaultdict(int), set(), 0)
    for m in step.merges:
        out.max_merge_demand = max(out.max_merge_demand, m.demand)
        real_tau = {v for v in m.tau if v not in fake}
        for v in real_tau:
            if v in out.tau_nodes:
                raise MalformedFlow("merge trees overlap", node=v)
        out.tau_nodes |= real_tau
        if m.center == sub.sink or m.center in sub.root_of:
            for s in m.sources:
                path = flow.paths[s]
                r = m.center if m.center in sub.root_of else path[-2]
                target = cl.states[sub.root_of[r]]
                prefix = {v for v in path[: path.index(r)] if v not in fake}
                src = cl.states.get(sub.source_of[s])
                if src is None:
                    continue
                out.grown[target.ident] += src.load
                cl.absorb(target, src, prefix)
                # a grown frozen cluster may now meet the internal test
                if target.status == EXTERNAL and 2 * cl.counts(target)[0] > target.load:
                    target.status = INTERNAL
        else:
            members = [cl.states[sub.source_of[s]] for s in m.sources if sub.source_of[s] in cl.states]
            if not members:
                continue
            new = cl.new_state(set(), set())
            for st in members:
                cl.absorb(new, st)
            new.tree |= real_tau
            out.new_clusters.append(new)
    out.grown = dict(out.grown)
    return out


def _measure_beta(sub: SubInstance, flow: UnsplittableFlow, scale_cap: float) -> float:
    loads = flow.node_loads()
    q = sub.ssnc.capacity
    beta = 1.0
    for v, l in loads.items():
        if v < sub.base_nodes or v in sub.source_of:
            beta = max(beta, float(l) / q)
        elif v in sub.root_of:
            beta = max(beta, math.sqrt(float(l) / scale_cap))
    return beta


# ---------------------------------------------------------------------------
# clustering phase


@dataclass
class PhaseResult:
    frozen: list[ClusterState]
    deleted: list[int]
    iterations: int
    beta_hat: float
    sub_costs: list[Fraction]
    clustering: Clustering


def clustering_phase(inst: McncInstance, pair_ids: Sequence[int], knobs: McncKnobs, ledger: Ledger) -> PhaseResult:
    if not pair_ids:
        raise PhaseStall("no remaining pairs")
    cl = Clustering(inst, pair_ids)
    q = inst.capacity
    g = inst.graph
    k0 = len(pair_ids)
    beta_hat = float(knobs.beta_hat)
    cl.freeze_all()
    deleted_all: list[int] = []
    del_witness = 0
    sub_costs: list[Fraction] = []
    n_terms = max(2, 2 * k0)
    max_iter = 4 * math.ceil(math.log(n_terms) / math.log(4 / 3)) + 8
    it = 0
    while cl.by_status(ACTIVE, UNSAFE):
        it += 1
        ledger.iteration = it
        if it > max_iter:
            raise PhaseStall("clustering did not converge", iterations=it, active=len(cl.by_status(ACTIVE, UNSAFE)))
        before_members = cl.membership()
        before_frozen = {s.ident: s.load for s in cl.by_status(*FROZEN)}
        frozen_ends_before = {v for s in cl.by_status(*FROZEN) for v in s.terminals}
        unsafe, deleted, witness = make_unsafe(cl)
        frozen_hit = sum(1 for i in deleted for v in (inst.pairs[i].source, inst.pairs[i].sink) if v in frozen_ends_before)
        deleted_all += deleted
        del_witness += witness
        safe = cl.by_status(ACTIVE)
        n_safe, n_unsafe = len(safe), len(unsafe)
        newly_frozen: list[ClusterState] = []
        tau_cost = Fraction(0)
        iter_cost = Fraction(0)
        grown: dict[int, int] = defaultdict(int)
        merge_bound = 0.0
        if unsafe:
            frozen = cl.by_status(*FROZEN)
            sub = build_I1(unsafe, frozen, g, q, beta_hat)
            sol = solve_ssnc(sub.ssnc, knobs.ssnc)
            iter_cost += sol.cost
            flow = _acyclic_flow(sub, sol.routing)
            beta_hat = max(beta_hat, _measure_beta(sub, flow, 40 * q))
            outcome = merge_from_flow(cl, sub, flow)
            tau_cost += g.cost_of(outcome.tau_nodes)
            for cid, inc in outcome.grown.items():
                if cid in before_frozen:
                    grown[cid] += inc
            for st in outcome.new_clusters:
                status = cl.freeze_check(st)
                if status in FROZEN:
                    st.status = status
                    newly_frozen.append(st)
            for st in cl.by_status(UNSAFE):
                st.status = ACTIVE
        safe = [s for s in safe if s.ident in cl.states and s.status == ACTIVE]
        if safe:
            try:
                plus, minus = bipartition_safe(cl, safe)
            except Degenerate:
                plus, minus = [], []
                for st in safe:
                    st.status = INTERNAL
                    newly_frozen.append(st)
            if plus:
                if knobs.audit:
                    ledger.check("bipartition-crossing",
                                 min(8 * sum(cl.crossing(a, b) for b in minus) - a.load for a in plus), float("inf"),
                                 ok=all(8 * sum(cl.crossing(a, b) for b in minus) >= a.load for a in plus))
                sub = build_I2(plus, minus, g, q)
                sol = solve_ssnc(sub.ssnc, knobs.ssnc)
                iter_cost += sol.cost
                flow = _acyclic_flow(sub, sol.routing)
                beta_hat = max(beta_hat, _measure_beta(sub, flow, 9 * q))
                outcome = merge_from_flow(cl, sub, flow)
                tau_cost += g.cost_of(outcome.tau_nodes)
                for cid, inc in outcome.grown.items():
                    if cid in before_frozen:
                        grown[cid] += inc
        newly_frozen += cl.freeze_all()
        sub_costs.append(iter_cost)
        # audits of the iteration properties
        if knobs.audit:
            newly = [s for s in newly_frozen if s.ident in cl.states]
            load_cap = 9 * beta_hat * q + q / 4
            ledger.check("P1-new-frozen-load", max((s.load for s in newly), default=0), load_cap)
            ledger.check("P2-frozen-load-increase", max(grown.values(), default=0), 40 * beta_hat ** 2 * q)
            worst_x = 0
            for st in cl.by_status(*FROZEN):
                _, to_active, _ = cl.counts(st)
                worst_x = max(worst_x, to_active)
            ledger.check("P3-frozen-to-active-crossing", worst_x, load_cap)
            ledger.check("P4-new-vertex-cost", tau_cost, iter_cost)
            after = cl.membership()
            worst_m = max((after.get(v, 0) - before_members.get(v, 0) for v in range(g.node_count)), default=0)
            ledger.check("P5-membership-increase", worst_m, 2)
            ledger.check("P6-active-shrink", len(cl.by_status(ACTIVE, UNSAFE)), 0.75 * n_safe + 0.5 * n_unsafe)
            ledger.check("P7-deletions", len(deleted), 3 * witness)
            ledger.check("P8-frozen-deletions", frozen_hit, 0)
            ledger.check("invariant-frozen-crossing", worst_x, 9 * beta_hat * q + q / 4)
    frozen = cl.by_status(*FROZEN)
    inside = sum(1 for i in cl.alive)
    if knobs.audit:
        ledger.iteration = it
        ledger.check("phase-pairs-inside", k0 / 4, inside)
        ledger.check("phase-deletions-3x", len(deleted_all), 3 * del_witness)
    return PhaseResult(frozen, deleted_all, it, beta_hat, sub_costs, cl)


# ---------------------------------------------------------------------------
# hallucination


@dataclass
class HallucinationPlan:
    sampled: list[int]
    prob: float
    paths: dict[int, tuple[int, ...]] = field(default_factory=dict)
    lp_cost: float = 0.0


def hallucination_prob(q: int, n: int, c_h: float = 4.0) -> float:
    return min(1.0, c_h * math.log(n) / q) if n > 1 else 1.0


def hallucinate(pair_ids: Sequence[int], q: int, n: int, rng: random.Random, c_h: float = 4.0) -> HallucinationPlan:
    p = hallucination_prob(q, n, c_h)
    sampled = [i for i in pair_ids if rng.random() < p]
    return HallucinationPlan(sampled, p)


@dataclass
class LpH:
    cost: float
    x: list[float]
    flows: list[list[tuple[tuple[int, ...], float]]]


def solve_lp_h(g: UndirectedMultigraph, pairs: Sequence[tuple[int, int]], q: int, n: int, c_x: float = 8.0) -> LpH:
    for s, t in pairs:
        if t not in g.reachable(s):
            raise Infeasible("sampled pair is disconnected", pair=(s, t))
    if not pairs:
        return LpH(0.0, [0.0] * g.node_count, [])
    upper = c_x * math.log(max(n, 2))
    try:
        cost, x, arc_flows = node_flow_lp(
            g.node_count, g.edges, [(s, t, float(q)) for s, t in pairs],
            node_cost=[float(c) for c in g.node_cost], x_upper=upper, unit=float(q),
        )
    except Infeasible as exc:
        exc.diagnostics.update(x_upper=upper, pairs=list(pairs))
        raise
    flows = [decompose_float_flow(f, s, t, float(q)) for f, (s, t) in zip(arc_flows, pairs)]
    return LpH(cost, [float(v) for v in x], flows)


def round_lp_h(flows: Sequence[Sequence[tuple[tuple[int, ...], float]]], rng: random.Random) -> list[tuple[int, ...]]:
    out = []
    for plist in flows:
        total = sum(a for _, a in plist)
        r = rng.random() * total
        acc = 0.0
        choice = plist[-1][0]
        for path, a in plist:
            acc += a
            if r < acc:
                choice = path
                break
        out.append(tuple(choice))
    return out


# ---------------------------------------------------------------------------
# cluster graph and routing


@dataclass
class ClusterGraph:
    vertex_count: int
    edges: list[tuple[int, int, int]]  # (a, b, pair id)


def _cut_value(edges, side: frozenset) -> int:
    return sum(1 for a, b, _ in edges if (a in side) != (b in side))


def _minimal_min_cut(vertices: list[int], edges) -> tuple[int, frozenset]:
    """Global min cut of the multigraph on ``vertices`` with an inclusion-minimal side."""
    if len(vertices) <= 14:
        best = None
        for r in range(1, len(vertices)):
            for side in itertools.combinations(vertices, r):
                side = frozenset(side)
                c = _cut_value(edges, side)
                key = (c, len(side), tuple(sorted(side)))
                if best is None or key < best:
                    best = key
        return best[0], frozenset(best[2])
    G = nx.Graph()
    G.add_nodes_from(vertices)
    for a, b, _ in edges:
        if G.has_edge(a, b):
            G[a][b]["weight"] += 1
        else:
            G.add_edge(a, b, weight=1)
    if not nx.is_connected(G):
        comps = sorted((sorted(c) for c in nx.connected_components(G)), key=lambda c: (len(c), c))
        return 0, frozenset(comps[0])
    value, (a_side, b_side) = nx.stoer_wagner(G)
    side = set(min(a_side, b_side, key=lambda s: (len(s), sorted(s))))
    improved = True
    while improved:
        improved = False
        H = nx.DiGraph()
        z = "z"
        for u, w, d in G.edges(data=True):
            uu = u if u in side else z
            ww = w if w in side else z
            if uu == ww:
                continue
            for x, y in ((uu, ww), (ww, uu)):
                cap = H[x][y]["capacity"] + d["weight"] if H.has_edge(x, y) else d["weight"]
                H.add_edge(x, y, capacity=cap)
        for x in sorted(side):
            if x not in H:
                continue
            cut, (src_side, _) = nx.minimum_cut(H, x, z)
            src_side = set(src_side) - {z}
            if cut == value and len(src_side) < len(side):
                side = src_side
                improved = True
                break
    return value, frozenset(side)


@dataclass
class Decomposition:
    components: list[frozenset]
    removed: list[tuple[int, int, int]]
    retained: list[tuple[int, int, int]]


def mincut_decompose(gc: ClusterGraph, q: int) -> Decomposition:
    """Split along minimum cuts until every part has min-cut >= delta*q/4 or is a single vertex.

    Each split removes fewer than delta*q/4 edges and there are at most N - 1 splits.
    """
    threshold = DELTA * q / 4
    pending = [list(range(gc.vertex_count))]
    comps: list[frozenset] = []
    removed: list[tuple[int, int, int]] = []
    while pending:
        part = pending.pop()
        if len(part) < 2:
            continue
        members = set(part)
        edges = [e for e in gc.edges if e[0] in members and e[1] in members]
        value, side = _minimal_min_cut(part, edges)
        if value >= threshold:
            comps.append(frozenset(part))
            continue
        removed += [e for e in edges if (e[0] in side) != (e[1] in side)]
        pending.append([v for v in part if v not in side])
        pending.append(sorted(side))
    comps.sort(key=min)
    in_comp = {v: i for i, c in enumerate(comps) for v in c}
    retained = [e for e in gc.edges if e[0] in in_comp and in_comp.get(e[0]) == in_comp.get(e[1])]
    removed.sort(key=lambda e: e[2])
    return Decomposition(comps, removed, retained)


def min_cut_value(vertices, edges) -> int:
    vertices = list(vertices)
    if len(vertices) < 2:
        return 0
    return _minimal_min_cut(vertices, [e for e in edges if e[0] in vertices and e[1] in vertices])[0]


def tree_path(g: UndirectedMultigraph, nodes: set, a: int, b: int) -> tuple[int, ...]:
    parent = {a: None}
    order = [a]
    i = 0
    while i < len(order):
        u = order[i]
        i += 1
        if u == b:
            break
        for w in g.neighbors(u):
            if w in nodes and w not in parent:
                parent[w] = u
                order.append(w)
    if b not in parent:
        raise MalformedFlow("cluster tree does not connect the endpoints", ends=(a, b))
    path = [b]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return tuple(reversed(path))


def route_internal(inst: McncInstance, clusters: Sequence[ClusterState], pair_ids) -> dict[int, list]:
    out = {}
    for st in clusters:
        for i in sorted(pair_ids):
            p = inst.pairs[i]
            if p.source in st.terminals and p.sink in st.terminals:
                out[i] = [(tree_path(inst.graph, st.tree, p.source, p.sink), 1.0)]
    return out


@dataclass
class ComponentRouting:
    routed: dict[int, list]
    throughput: float
    max_vertex_capacity: float
    max_edge_load: float


def route_component(inst: McncInstance, comp: Sequence[ClusterState], pair_ids: Sequence[int],
                    sampled_paths: dict[int, tuple], eps: float = 0.05) -> ComponentRouting:
    """Route the component's pairs over sampled pairs (capacity q each), then expand to node paths."""
    g = inst.graph
    q = inst.capacity
    index = {st.ident: j for j, st in enumerate(comp)}
    owner = {}
    for st in comp:
        for v in st.terminals:
            owner[v] = st.ident
    hedges = []
    for i in sorted(sampled_paths):
        p = inst.pairs[i]
        a, b = owner.get(p.source), owner.get(p.sink)
        if a is None or b is None or a == b:
            continue
        hedges.append((i, index[a], index[b]))
    demands = []
    for i in pair_ids:
        p = inst.pairs[i]
        demands.append((index[owner[p.source]], index[owner[p.sink]], 1.0))
    if not hedges:
        raise SparsifierFailure("no sampled edge inside the component", pairs=list(pair_ids))
    res = concurrent_mcf(len(comp), [(a, b, float(q)) for _, a, b in hedges], demands, eps)
    if res.throughput < 1 - 1e-9:
        raise SparsifierFailure("sampled graph cannot route the component", throughput=res.throughput,
                                pairs=list(pair_ids))
    incident = defaultdict(float)
    for _, a, b in hedges:
        incident[a] += q
        incident[b] += q
    scale = 1.0 / res.throughput
    routed = {}
    for i, plist in zip(pair_ids, res.flows):
        p = inst.pairs[i]
        expanded = []
        for eseq, cseq, amount in plist:
            cur = p.source
            nodes: list[int] = [cur]
            for e, (ca, cb) in zip(eseq, zip(cseq, cseq[1:])):
                pid, _, _ = hedges[e]
                u = sampled_paths[pid]
                cluster_a = comp[ca]
                if inst.pairs[pid].source in cluster_a.terminals:
                    start, seg = inst.pairs[pid].source, u
                else:
                    start, seg = inst.pairs[pid].sink, tuple(reversed(u))
                nodes += tree_path(g, cluster_a.tree, cur, start)[1:]
                nodes += seg[1:]
                cur = seg[-1]
            last = comp[cseq[-1]]
            nodes += tree_path(g, last.tree, cur, p.sink)[1:]
            expanded.append((loop_erase(nodes), amount * scale))
        routed[i] = expanded
    load = max((l * scale for l in res.edge_load), default=0.0)
    return ComponentRouting(routed, res.throughput, max(incident.values(), default=0.0), load)


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class McncSolution:
    nodes: frozenset
    routing: dict[int, list[tuple[tuple[int, ...], float]]]
    cost: Fraction
    loads: dict[int, float]
    congestion: float
    outer_iterations: int
    deferrals: int
    ledger: Ledger
    beta_hat: float


def karger_sample_ok(vertices: int, edges: Sequence[tuple[int, int]], p: float, eps: float, rng: random.Random) -> bool:
    """Sample each edge with probability ``p``; True when every cut keeps p(1 +- eps) of its value."""
    kept = [e for e in edges if rng.random() < p]
    for r in range(1, vertices // 2 + 1):
        for side in itertools.combinations(range(vertices), r):
            if r * 2 == vertices and 0 not in side:
                continue
            s = set(side)
            orig = sum(1 for a, b in edges if (a in s) != (b in s))
            samp = sum(1 for a, b in kept if (a in s) != (b in s))
            if not (p * (1 - eps) * orig <= samp <= p * (1 + eps) * orig):
                return False
    return True


def solve_mcnc(inst: McncInstance, knobs: McncKnobs = McncKnobs(), seed: int = 0) -> McncSolution:
    problems = validate_instance(inst)
    if problems:
        raise Infeasible("invalid instance", problems=problems)
    g = inst.graph
    n = g.node_count
    q = inst.capacity
    k = len(inst.pairs)
    rng = random.Random(seed)
    ledger = Ledger()
    remaining = list(range(k))
    routing: dict[int, list] = {}
    limit = knobs.c_outer * max(1, math.ceil(math.log2(max(k, 2))))
    outer = 0
    deferrals = 0
    beta_hat = float(knobs.beta_hat)
    while remaining:
        outer += 1
        ledger.outer = outer
        ledger.iteration = 0
        if outer > limit:
            raise OuterStall("outer loop exceeded its iteration budget", remaining=list(remaining), limit=limit)
        phase = clustering_phase(inst, remaining, McncKnobs(**{**knobs.__dict__, "beta_hat": beta_hat}), ledger)
        beta_hat = max(beta_hat, phase.beta_hat)
        cl = phase.clustering
        plan = hallucinate(remaining, q, n, rng, knobs.c_h)
        lp = solve_lp_h(g, [(inst.pairs[i].source, inst.pairs[i].sink) for i in plan.sampled], q, n, knobs.c_x)
        plan.lp_cost = lp.cost
        for i, path in zip(plan.sampled, round_lp_h(lp.flows, rng)):
            plan.paths[i] = path
        counts: dict[int, int] = defaultdict(int)
        for path in plan.paths.values():
            for v in set(path):
                counts[v] += 1
        ledger.iteration = phase.iterations
        ledger.check("U-path-count", max(counts.values(), default=0), 3 * knobs.c_x * math.log(max(n, 2)))
        alive = sorted(cl.alive)
        internal = cl.by_status(INTERNAL)
        external = cl.by_status(EXTERNAL)
        in_terms = {v for st in internal for v in st.terminals}
        touching = sum(1 for i in alive if inst.pairs[i].source in in_terms or inst.pairs[i].sink in in_terms)
        new_routes: dict[int, list] = {}
        if 8 * touching >= len(remaining) and internal:
            new_routes.update(route_internal(inst, internal, alive))
        else:
            new_routes.update(route_internal(inst, external, alive))
            index = {st.ident: j for j, st in enumerate(external)}
            owner = {v: st.ident for st in external for v in st.terminals}
            gc_edges = []
            for i in alive:
                p = inst.pairs[i]
                a, b = owner.get(p.source), owner.get(p.sink)
                if a is not None and b is not None and a != b:
                    gc_edges.append((index[a], index[b], i))
            dec = mincut_decompose(ClusterGraph(len(external), gc_edges), q)
            ledger.check("mincut-removed", len(dec.removed), float(len(external) * DELTA * q / 4))
            for comp in dec.components:
                members = [external[j] for j in sorted(comp)]
                pids = [i for a, b, i in dec.retained if a in comp]
                if not pids:
                    continue
                try:
                    cr = route_component(inst, members, pids, plan.paths, knobs.eps)
                except SparsifierFailure as exc:
                    log.info("component deferred: %s", exc)
                    deferrals += 1
                    continue
                ledger.check("component-edge-load", cr.max_edge_load, q)
                new_routes.update(cr.routed)
        for i, plist in new_routes.items():
            routing[i] = plist
        remaining = [i for i in remaining if i not in routing]
    loads: dict[int, float] = defaultdict(float)
    for plist in routing.values():
        for path, amount in plist:
            for v in set(path):
                loads[v] += amount
    nodes = frozenset(v for plist in routing.values() for path, a in plist if a > 1e-12 for v in path)
    cost = g.cost_of(nodes)
    congestion = max(loads.values(), default=0.0) / q
    ledger.check("outer-iterations", outer, limit)
    return McncSolution(nodes, dict(routing), cost, dict(loads), congestion, outer, deferrals, ledger, beta_hat)
