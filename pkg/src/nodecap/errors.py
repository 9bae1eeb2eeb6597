"""Exception hierarchy shared by every solver."""

from __future__ import annotations


class NodecapError(Exception):
    """Base class; ``diagnostics`` carries machine-readable context."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class Infeasible(NodecapError):
    pass


class MalformedFlow(NodecapError):
    pass


class MalformedSolution(NodecapError):
    pass


class PhaseStall(NodecapError):
    pass


class OuterStall(NodecapError):
    pass


class SparsifierFailure(NodecapError):
    pass


class Degenerate(NodecapError):
    pass


class Exhausted(NodecapError):
    """Raised by the exact oracles when an instance exceeds the enumeration budget."""


class ParseError(NodecapError):
    pass
