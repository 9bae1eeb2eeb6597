"""Benchmark table: one row per instance and seed, solver against the exact oracle."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

from .energy_routing import solve_energy
from .errors import Exhausted, NodecapError
from .instance_io import InstanceFile
from .mcnc_solver import McncKnobs, solve_mcnc
from .oracles import OracleBudget, exact_energy, exact_mcnc_fractional, exact_ssnc
from .ssnc_solver import SsncKnobs, solve_ssnc

COLUMNS = ("instance", "seed", "kind", "status", "cost", "oracle_cost", "ratio", "congestion_q", "iterations", "deferrals")


@dataclass(frozen=True)
class Knobs:
    ssnc: SsncKnobs = SsncKnobs()
    mcnc: McncKnobs = McncKnobs()

    @classmethod
    def from_dict(cls, raw: dict) -> "Knobs":
        unknown = set(raw) - {"ssnc", "mcnc"}
        if unknown:
            raise ValueError(f"unknown knob groups {sorted(unknown)}")
        ssnc = SsncKnobs(**raw.get("ssnc", {}))
        mcnc_raw = dict(raw.get("mcnc", {}))
        if "ssnc" in mcnc_raw:
            mcnc_raw["ssnc"] = SsncKnobs(**mcnc_raw["ssnc"])
        return cls(ssnc, McncKnobs(**mcnc_raw))


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, Fraction):
        return str(x) if x.denominator == 1 else f"{float(x):.6f}"
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def run_one(f: InstanceFile, knobs: Knobs, seed: int, budget: OracleBudget = OracleBudget()) -> dict:
    row = dict.fromkeys(COLUMNS)
    row.update(kind=f.kind, seed=seed)
    inst = f.to_instance()
    try:
        if f.kind == "ssnc":
            sol = solve_ssnc(inst, knobs.ssnc)
            row.update(cost=sol.cost, congestion_q=sol.congestion, iterations=1 + len(sol.escalations), deferrals=0)
        elif f.kind == "mcnc":
            sol = solve_mcnc(inst, knobs.mcnc, seed)
            row.update(cost=sol.cost, congestion_q=sol.congestion, iterations=sol.outer_iterations,
                       deferrals=sol.deferrals)
        else:
            lifted, sol, _ = solve_energy(inst, knobs.mcnc, seed)
            row.update(cost=lifted.energy, congestion_q=sol.congestion, iterations=sol.outer_iterations,
                       deferrals=sol.deferrals)
        row["status"] = "ok"
    except NodecapError as exc:
        row["status"] = type(exc).__name__
        return row
    try:
        if f.kind == "ssnc":
            oracle = exact_ssnc(inst, budget)
            opt = oracle.cost
        elif f.kind == "mcnc":
            oracle = exact_mcnc_fractional(inst, budget)
            opt = oracle.cost
        else:
            opt, _ = exact_energy(inst.graph, [(p.source, p.sink) for p in inst.pairs], inst.static_power,
                                  inst.exponent, budget)
    except Exhausted:
        row["oracle_cost"] = "exhausted"
        return row
    if opt is None:
        row["oracle_cost"] = "infeasible"
        return row
    row["oracle_cost"] = opt
    if opt == 0:
        row["ratio"] = 1.0 if row["cost"] == 0 else float("inf")
    else:
        row["ratio"] = float(Fraction(row["cost"]) / Fraction(opt)) if f.kind != "eevrp" else row["cost"] / opt
    return row


def _timed_row(name: str, f: InstanceFile, knobs: Knobs, seed: int, timing: bool, budget: OracleBudget) -> dict:
    start = time.perf_counter()
    row = run_one(f, knobs, seed, budget)
    row["instance"] = name
    if timing:
        row["runtime_s"] = time.perf_counter() - start
    return row


def bench(corpus: Sequence[tuple[str, InstanceFile]], knobs: Knobs = Knobs(), seeds: Iterable[int] = (0,),
          timing: bool = False, budget: OracleBudget = OracleBudget(), workers: int = 1) -> list[dict]:
    """Rows in corpus-then-seed order; ``workers > 1`` fans the jobs out to processes without reordering."""
    jobs = [(name, f, knobs, seed, timing, budget) for name, f in corpus for seed in seeds]
    if workers <= 1 or len(jobs) <= 1:
        return [_timed_row(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_timed_row, *zip(*jobs)))


def format_table(rows: Sequence[dict], timing: bool = False) -> str:
    cols = COLUMNS + (("runtime_s",) if timing else ())
    lines = ["\t".join(cols)]
    for row in rows:
        lines.append("\t".join(_fmt(row.get(c)) for c in cols))
    return "\n".join(lines) + "\n"
