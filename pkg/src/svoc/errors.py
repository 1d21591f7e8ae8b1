"""Exception types raised by the solver modules."""

from __future__ import annotations


class SvocError(Exception):
    """Base class for all package errors."""


class GridError(SvocError, ValueError):
    pass


class NonFiniteError(SvocError, ArithmeticError):
    def __init__(self, node: int, message: str = ""):
        self.node = int(node)
        super().__init__(message or f"iterate left the finite range at node {node}")


class NonConvergence(SvocError, RuntimeError):
    """Iteration cap exhausted.

    ``node`` is set for per-node inner solves, ``best`` may carry the best
    iterate found by an outer solver, and ``history`` a residual log.
    """

    def __init__(self, message: str, node: int | None = None, residual: float | None = None,
                 best=None, history=None):
        self.node = node
        self.residual = residual
        self.best = best
        self.history = history
        super().__init__(message)


class SingularDiagonal(SvocError, ArithmeticError):
    def __init__(self, node: int, cond: float):
        self.node = int(node)
        self.cond = float(cond)
        super().__init__(f"diagonal system at node {node} is numerically singular (cond={cond:.3e})")


class RNotPositive(SvocError, ValueError):
    pass


class InfeasibleGuess(SvocError, RuntimeError):
    pass


class SchemaError(SvocError, ValueError):
    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")
