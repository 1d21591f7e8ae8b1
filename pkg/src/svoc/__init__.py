"""Optimal control of Volterra equations with weakly singular kernels."""

from .core_types import (Cost, Dynamics, InequalityConstraint, MultiplierSet, ProblemSpec, SolveReport,
                         TerminalConstraint, TimeGrid, Trajectory, validate_spec)
from .errors import (InfeasibleGuess, NonConvergence, NonFiniteError, RNotPositive, SchemaError,
                     SingularDiagonal, SvocError)
from .forward_solver import ForwardOptions, solve_forward
from .mp_solver import (SolverOptions, check_certificate, solve_constrained, solve_lq_shooting,
                        solve_unconstrained)

__version__ = "0.1.0"
