"""Node-capacitated network design: single-sink and multicommodity solvers, energy reduction, exact oracles."""

from .energy_routing import EevrpInstance, energy_of, lift_solution, reduce_to_mcnc, solve_energy
from .errors import (
    Degenerate,
    Exhausted,
    Infeasible,
    MalformedFlow,
    MalformedSolution,
    NodecapError,
    OuterStall,
    ParseError,
    PhaseStall,
    SparsifierFailure,
)
from .graph_core import McncInstance, RequestPair, SsncInstance, UndirectedMultigraph, validate_instance
from .mcnc_solver import McncKnobs, McncSolution, solve_mcnc
from .ssnc_solver import SsncKnobs, SsncSolution, solve_ssnc

__version__ = "0.1.0"
