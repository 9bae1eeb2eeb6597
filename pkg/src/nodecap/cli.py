"""Command-line entry point.

Exit codes: 0 ok, 2 infeasible, 3 stall, 4 parse error, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction

from .bench import Knobs, bench, format_table
from .energy_routing import solve_energy
from .errors import Exhausted, Infeasible, NodecapError, OuterStall, ParseError, PhaseStall
from .instance_io import GENERATORS, dump, generate, load, serialize
from .mcnc_solver import solve_mcnc
from .oracles import OracleBudget, exact_energy, exact_mcnc_fractional, exact_ssnc
from .ssnc_solver import solve_ssnc

EXIT_OK, EXIT_OTHER, EXIT_INFEASIBLE, EXIT_STALL, EXIT_PARSE = 0, 1, 2, 3, 4


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (frozenset, set)):
        return sorted(x)
    if isinstance(x, tuple):
        return list(x)
    return x


def _emit(obj, out=None):
    text = json.dumps(obj, sort_keys=True, indent=2, default=_jsonable)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _load_knobs(path):
    if not path:
        return Knobs()
    with open(path, encoding="utf-8") as fh:
        return Knobs.from_dict(json.load(fh))


def _write_ledger(path, records):
    if not path:
        return
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, default=_jsonable) + "\n")


def _expect(f, kind):
    if f.kind != kind:
        raise ParseError(f"expected a {kind} instance, got {f.kind}", path="$.kind")


def cmd_solve_ssnc(args):
    f = load(args.instance, args.strict)
    _expect(f, "ssnc")
    sol = solve_ssnc(f.to_instance(), _load_knobs(args.knobs).ssnc)
    _write_ledger(args.audit_ledger, [
        {"phase": "clustering", "clusters": len(sol.clusters), "load_bound": sol.load_bound,
         "max_membership": max(sol.cluster_report.membership.values(), default=0) if sol.cluster_report else 0},
        {"phase": "routing", "u": sol.u, "escalations": sol.escalations, "congestion": sol.congestion},
    ])
    _emit({"status": "ok", "cost": sol.cost, "nodes": sol.nodes, "congestion": sol.congestion, "u": sol.u,
           "routing": {str(s): p for s, p in sorted(sol.routing.items())}}, args.out)


def cmd_solve_mcnc(args):
    f = load(args.instance, args.strict)
    _expect(f, "mcnc")
    sol = solve_mcnc(f.to_instance(), _load_knobs(args.knobs).mcnc, args.seed)
    _write_ledger(args.audit_ledger, [r.as_dict() for r in sol.ledger.records])
    _emit({"status": "ok", "cost": sol.cost, "nodes": sol.nodes, "congestion": sol.congestion,
           "outer_iterations": sol.outer_iterations, "deferrals": sol.deferrals,
           "audit_failures": len(sol.ledger.failures()),
           "routing": {str(i): [[p, a] for p, a in pl] for i, pl in sorted(sol.routing.items())}}, args.out)


def cmd_solve_energy(args):
    f = load(args.instance, args.strict)
    _expect(f, "eevrp")
    lifted, sol, red = solve_energy(f.to_instance(), _load_knobs(args.knobs).mcnc, args.seed)
    _write_ledger(args.audit_ledger, [r.as_dict() for r in sol.ledger.records])
    _emit({"status": "ok", "energy": lifted.energy, "block_size": red.q_prime, "tier_costs": list(red.tier_costs),
           "congestion": sol.congestion, "notes": lifted.notes,
           "routing": {str(i): [[p, a] for p, a in pl] for i, pl in sorted(lifted.routing.items())}}, args.out)


def cmd_oracle(args):
    f = load(args.instance, args.strict)
    inst = f.to_instance()
    budget = OracleBudget(args.max_nodes, args.max_pairs, args.time_cap)
    if f.kind == "ssnc":
        res = exact_ssnc(inst, budget)
        _emit({"feasible": res.feasible, "cost": res.cost, "nodes": res.nodes, "notes": res.notes}, args.out)
    elif f.kind == "mcnc":
        res = exact_mcnc_fractional(inst, budget)
        _emit({"feasible": res.feasible, "cost": res.cost, "nodes": res.nodes, "integral_cost": res.integral_cost,
               "notes": res.notes}, args.out)
    else:
        energy, paths = exact_energy(inst.graph, [(p.source, p.sink) for p in inst.pairs], inst.static_power,
                                     inst.exponent, budget)
        _emit({"energy": energy, "paths": paths}, args.out)


def cmd_gen(args):
    params = {}
    for item in args.param or []:
        key, _, value = item.partition("=")
        if not key or not value:
            raise SystemExit(f"bad --param {item!r}; expected key=value")
        params[key] = value
    f = generate(args.kind, params, args.seed)
    if args.out:
        dump(f, args.out)
    else:
        sys.stdout.write(serialize(f))


def cmd_bench(args):
    corpus = [(path, load(path, args.strict)) for path in args.instances]
    rows = bench(corpus, _load_knobs(args.knobs), args.seeds, args.timing, workers=args.workers)
    table = format_table(rows, args.timing)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodecap", description="Node-capacitated network design solvers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, seed=True):
        p.add_argument("--knobs", help="JSON knob file")
        p.add_argument("--audit-ledger", help="write audit records as JSON lines")
        p.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                       help="reject unknown fields (default); --no-strict only warns")
        p.add_argument("--out", help="write output here instead of stdout")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    for name, fn in (("solve-ssnc", cmd_solve_ssnc), ("solve-mcnc", cmd_solve_mcnc), ("solve-energy", cmd_solve_energy)):
        p = sub.add_parser(name)
        p.add_argument("instance")
        common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("oracle")
    p.add_argument("instance")
    p.add_argument("--max-nodes", type=int, default=12)
    p.add_argument("--max-pairs", type=int, default=5)
    p.add_argument("--time-cap", type=float, default=60.0)
    common(p)
    p.set_defaults(func=cmd_oracle)
    p = sub.add_parser("gen")
    p.add_argument("kind", choices=GENERATORS)
    p.add_argument("--param", action="append", help="generator parameter key=value (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("bench")
    p.add_argument("instances", nargs="+")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--timing", action="store_true", help="add a runtime column (breaks byte-identical output)")
    p.add_argument("--workers", type=int, default=1, help="worker processes; row order is unaffected")
    common(p, seed=False)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except Infeasible as exc:
        print(f"infeasible: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PhaseStall, OuterStall) as exc:
        print(f"stalled: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_STALL
    except (NodecapError, Exhausted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
