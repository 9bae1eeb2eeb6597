"""Energy-efficient routing via tiered node copies.

A node with load ``f > 0`` draws ``sigma + f**alpha``; an idle node draws
nothing.  The reduction replaces every node by cost-tiered copies of capacity
``q'`` so that buying the ``i``-th copy pays for the ``i``-th block of ``q'``
units, then solves the resulting multicommodity instance.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import MalformedSolution
from .graph_core import McncInstance, RequestPair, UndirectedMultigraph
from .ssnc_solver import loop_erase

log = logging.getLogger(__name__)

ENERGY_RTOL = 1e-9


@dataclass(frozen=True)
class EevrpInstance:
    graph: UndirectedMultigraph
    pairs: tuple[RequestPair, ...]
    static_power: float
    exponent: float

    def __post_init__(self):
        if not self.exponent > 1:
            raise ValueError("exponent must exceed 1")
        if self.static_power < 1:
            # below 1 the tiers collapse to q' = 1 and the first tier no longer covers a block
            raise ValueError("static power must be at least 1")
        object.__setattr__(self, "pairs", tuple(
            p if isinstance(p, RequestPair) else RequestPair(int(p[0]), int(p[1])) for p in self.pairs))
        for p in self.pairs:
            for v in (p.source, p.sink):
                if not 0 <= v < self.graph.node_count:
                    raise ValueError(f"terminal {v} is not a node")

    @property
    def demand_count_ok(self) -> bool:
        n = max(2, self.graph.node_count)
        return len(self.pairs) <= n ** 4


def power(x: float, alpha: float):
    """``x**alpha``, exact for integral inputs and exponents."""
    if float(alpha).is_integer() and float(x).is_integer():
        return int(x) ** int(alpha)
    return float(x) ** float(alpha)


def block_size(sigma: float, alpha: float) -> int:
    return max(1, math.ceil(round(float(sigma) ** (1.0 / float(alpha)), 12)))


def tier_cost(i: int, q_prime: int, sigma: float, alpha: float):
    if i < 1:
        raise ValueError("tiers start at 1")
    if i == 1:
        return 2 * sigma
    return power(i * q_prime, alpha) - power((i - 1) * q_prime + 1, alpha)


@dataclass(frozen=True)
class TieredReduction:
    q_prime: int
    tier_costs: tuple
    copy_map: Mapping[int, tuple[int, ...]]
    pendant_map: Mapping[tuple[int, int], int]  # (pair, 0 source | 1 sink) -> pendant node
    original_of: Mapping[int, int]  # reduced node -> original node (pendants map to their anchor)

    def tier_prefix(self, j: int):
        return sum(self.tier_costs[:j])

    @property
    def monotone(self) -> bool:
        # fails when q' = 1 (higher tiers vanish) and for some alpha close to 1
        return all(a <= b for a, b in zip(self.tier_costs, self.tier_costs[1:]))


def reduce_to_mcnc(e: EevrpInstance) -> tuple[McncInstance, TieredReduction]:
    g = e.graph
    k = max(1, len(e.pairs))
    qp = block_size(e.static_power, e.exponent)
    copies = math.ceil(k / qp)
    tiers = tuple(tier_cost(i, qp, e.static_power, e.exponent) for i in range(1, copies + 1))
    costs: list[Fraction] = []
    labels: list[str] = []
    copy_map: dict[int, tuple[int, ...]] = {}
    original_of: dict[int, int] = {}
    for v in range(g.node_count):
        ids = []
        for i, c in enumerate(tiers):
            ids.append(len(costs))
            original_of[len(costs)] = v
            costs.append(Fraction(c))
            labels.append(f"{g.labels[v]}#{i + 1}")
        copy_map[v] = tuple(ids)
    edges = []
    for u, v in g.edges:
        for a in copy_map[u]:
            for b in copy_map[v]:
                edges.append((a, b))
    # each terminal gets its own pendant on the cheapest copy with spare capacity
    attached: dict[int, int] = defaultdict(int)
    pendant_map: dict[tuple[int, int], int] = {}
    pairs = []
    for idx, p in enumerate(e.pairs):
        ends = []
        for side, v in enumerate((p.source, p.sink)):
            order = sorted(copy_map[v], key=lambda c: (costs[c], c))
            anchor = next((c for c in order if attached[c] < qp), order[0])
            attached[anchor] += 1
            node = len(costs)
            costs.append(Fraction(0))
            labels.append(f"{g.labels[v]}@{idx}.{side}")
            edges.append((anchor, node))
            original_of[node] = v
            pendant_map[(idx, side)] = node
            ends.append(node)
        pairs.append((ends[0], ends[1]))
    reduced = UndirectedMultigraph(tuple(costs), tuple(edges), tuple(labels))
    red = TieredReduction(qp, tiers, copy_map, pendant_map, original_of)
    if not red.monotone:
        log.warning("tier costs are not non-decreasing: %s", tiers)
    return McncInstance.create(reduced, pairs, qp), red


Routing = Mapping[int, Sequence[tuple[Sequence[int], float]]]


def node_loads(routing: Routing) -> dict[int, float]:
    loads: dict[int, float] = defaultdict(float)
    for plist in routing.values():
        for path, amount in plist:
            for v in set(path):
                loads[v] += float(amount)
    return dict(loads)


def energy_of(routing: Routing, sigma: float, alpha: float) -> float:
    total = 0.0
    for load in node_loads(routing).values():
        if load > ENERGY_RTOL:
            total += float(sigma) + float(load) ** float(alpha)
    return total


def energy_of_loads(loads: Mapping[int, float], sigma: float, alpha: float) -> float:
    return sum(float(sigma) + float(f) ** float(alpha) for f in loads.values() if f > ENERGY_RTOL)


def rounded_up_energy(load: int, q_prime: int, sigma: float, alpha: float) -> float:
    """Energy of one node after rounding its load up to a multiple of ``q_prime``."""
    if load <= 0:
        return 0.0
    return float(sigma) + float(math.ceil(load / q_prime) * q_prime) ** float(alpha)


def conversion_factor(rho1: float, rho2: float, alpha: float) -> float:
    return float(rho1) * max(1.0, float(rho2)) ** float(alpha)


@dataclass
class LiftedSolution:
    routing: dict[int, list[tuple[tuple[int, ...], float]]]
    energy: float
    loads: dict[int, float]
    rho1: float | None
    rho2: float
    factor: float | None
    notes: list[str] = field(default_factory=list)


def _collapse(path: Sequence[int], red: TieredReduction, g: UndirectedMultigraph, erase_loops: bool):
    out: list[int] = []
    for v in path:
        o = red.original_of.get(v)
        if o is None:
            raise MalformedSolution("node outside the reduction", node=v)
        if out and out[-1] == o:
            continue
        out.append(o)
    for a, b in zip(out, out[1:]):
        if b not in g.neighbors(a):
            raise MalformedSolution("collapsed path uses a non-edge", edge=(a, b))
    if len(set(out)) != len(out):
        if not erase_loops:
            raise MalformedSolution("collapsed walk revisits a node", path=tuple(out))
        return loop_erase(out), True
    return tuple(out), False


def lift_solution(routing: Routing, congestion: float, red: TieredReduction, e: EevrpInstance,
                  rho1: float | None = None, erase_loops: bool = True) -> LiftedSolution:
    lifted: dict[int, list] = {}
    notes = []
    for i, plist in routing.items():
        out = []
        for path, amount in plist:
            walk, erased = _collapse(path, red, e.graph, erase_loops)
            if erased:
                notes.append(f"pair {i}: loop erased after collapsing copies")
            p = e.pairs[i]
            if walk[0] != p.source or walk[-1] != p.sink:
                raise MalformedSolution("lifted path does not join the pair", pair=i)
            out.append((walk, float(amount)))
        lifted[i] = out
    missing = set(range(len(e.pairs))) - set(lifted)
    if missing:
        raise MalformedSolution("pairs without a route", pairs=sorted(missing))
    loads = node_loads(lifted)
    rho2 = max(1.0, float(congestion))
    factor = None if rho1 is None else conversion_factor(rho1, rho2, e.exponent)
    return LiftedSolution(lifted, energy_of_loads(loads, e.static_power, e.exponent), loads, rho1, rho2, factor, notes)


def solve_energy(e: EevrpInstance, knobs=None, seed: int = 0, rho1: float | None = None):
    """Reduce, solve the multicommodity instance, and lift the routing back."""
    from .mcnc_solver import McncKnobs, solve_mcnc

    inst, red = reduce_to_mcnc(e)
    sol = solve_mcnc(inst, knobs or McncKnobs(), seed)
    return lift_solution(sol.routing, sol.congestion, red, e, rho1), sol, red
