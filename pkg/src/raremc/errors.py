"""Exception hierarchy.

Configuration and domain problems derive from ``RareMCError`` + ``ValueError``;
numerical failures derive from ``NoConvergence``. The CLI maps the former to
exit code 2 and the latter to exit code 3.
"""


class RareMCError(Exception):
    """Base class for all package errors."""


class DomainError(RareMCError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class ChainError(DomainError):
    """A transition matrix fails a structural requirement."""


class RowSumViolation(ChainError):
    pass


class NegativeEntry(ChainError):
    pass


class Reducible(ChainError):
    pass


class Periodic(ChainError):
    pass


class UnstableSystem(DomainError):
    pass


class RatesNotNormalized(DomainError):
    pass


class NotLattice(DomainError):
    """Exact recursions need an integer-valued additive functional."""


class MemoryBound(DomainError):
    """The lattice recursion would exceed the configured memory budget."""


class NoConvergence(RareMCError, ArithmeticError):
    """An iterative solver hit its iteration cap."""
