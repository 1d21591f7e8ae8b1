"""Built-in problem specifications used by the demos and acceptance tests."""

from __future__ import annotations

import numpy as np

from .core_types import (Cost, Dynamics, InequalityConstraint, ProblemSpec,
                         TerminalConstraint, TimeGrid)
from .special import gamma

TWO_PI = 2.0 * np.pi


def zero_cost(n: int) -> Cost:
    return Cost(
        l=lambda t, x, u: np.zeros(len(x)),
        l_x=lambda t, x, u: np.zeros_like(x),
        l_u=lambda t, x, u: np.zeros_like(u),
        h=lambda x0, xT: 0.0,
        h_x0=lambda x0, xT: np.zeros(n),
        h_x=lambda x0, xT: np.zeros(n),
        control_hessian=np.zeros((1, 1)),
    )


def caputo_to_volterra(lambda_coeff, alpha: float) -> Dynamics:
    """Dynamics of the Caputo equation D^alpha x = A x written in Volterra form.

    f(t, s, x, u) = A x / Gamma(alpha), g = 0; the control is a dummy scalar.
    """
    A = np.atleast_2d(np.asarray(lambda_coeff, float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("Caputo coefficient must be a square matrix")
    n = A.shape[0]
    return Dynamics.from_matrices(A / gamma(alpha), np.zeros((n, n)), np.zeros((n, 1)), np.zeros((n, 1)))


def figure1_dynamics() -> Dynamics:
    """f = -0.4 sin(2 pi x), g = -x (scalar state, dummy control)."""
    return Dynamics(
        f=lambda t, s, x, u: -0.4 * np.sin(TWO_PI * x),
        g=lambda t, s, x, u: -x,
        f_x=lambda t, s, x, u: (-0.4 * TWO_PI * np.cos(TWO_PI * x))[:, :, None],
        g_x=lambda t, s, x, u: -np.ones((len(x), 1, 1)),
        f_u=lambda t, s, x, u: np.zeros((len(x), 1, 1)),
        g_u=lambda t, s, x, u: np.zeros((len(x), 1, 1)),
        state_dim=1, control_dim=1, outer_time_dependent=False, control_affine=True,
    )


def figure1_spec(alpha: float, N: int, T: float = 1.0) -> ProblemSpec:
    return ProblemSpec(alpha=alpha, grid=TimeGrid(T, N), dynamics=figure1_dynamics(),
                       cost=zero_cost(1), x0=np.array([1.0]), name="figure1")


def figure1_control_spec(alpha: float, N: int, T: float = 1.0) -> ProblemSpec:
    """Figure-1 memory terms plus an additive control and a quadratic cost.

    f = -0.4 sin(2 pi x) + u, g = -x + 0.5 u, l = (x^2 + u^2)/2, h = xT^2/2.
    Used for gradient and duality checks on a nonlinear problem.
    """
    dyn = Dynamics(
        f=lambda t, s, x, u: -0.4 * np.sin(TWO_PI * x) + u,
        g=lambda t, s, x, u: -x + 0.5 * u,
        f_x=lambda t, s, x, u: (-0.4 * TWO_PI * np.cos(TWO_PI * x))[:, :, None],
        g_x=lambda t, s, x, u: -np.ones((len(x), 1, 1)),
        f_u=lambda t, s, x, u: np.ones((len(x), 1, 1)),
        g_u=lambda t, s, x, u: np.full((len(x), 1, 1), 0.5),
        state_dim=1, control_dim=1, outer_time_dependent=False, control_affine=True,
    )
    cost = Cost.quadratic(np.eye(1), np.eye(1), np.eye(1))
    return ProblemSpec(alpha=alpha, grid=TimeGrid(T, N), dynamics=dyn, cost=cost,
                       x0=np.array([1.0]), control_bounds=(-50.0, 50.0), name="figure1-control")


EXAMPLE2 = dict(A1=-1.0, A2=0.2, B1=2.0, B2=0.1, M=1.0, R=1.0, Q=0.0, T=2.0, x0=1.0)


def lq_spec(alpha: float, N: int, A1, A2, B1, B2, Q, R, M, T: float, x0,
            bound: float = 1e6, name: str = "lq") -> ProblemSpec:
    dyn = Dynamics.from_matrices(A1, A2, B1, B2)
    cost = Cost.quadratic(Q, R, M)
    d = dyn.control_dim
    return ProblemSpec(alpha=alpha, grid=TimeGrid(T, N), dynamics=dyn, cost=cost,
                       x0=np.atleast_1d(x0), control_bounds=(np.full(d, -bound), np.full(d, bound)),
                       name=name)


def example2_spec(alpha: float = 0.5, N: int = 1000) -> ProblemSpec:
    p = EXAMPLE2
    return lq_spec(alpha, N, p["A1"], p["A2"], p["B1"], p["B2"], p["Q"], p["R"], p["M"],
                   p["T"], p["x0"], name="example2")


def example1_spec(alpha: float = 0.8, N: int = 1500, bound: float = 1e4) -> ProblemSpec:
    """f = u, g = u, l = x + u^2/2, h = x0 + xT, F = {10} x {-16},
    G = -x - (t^2/5 + 20), on [0, 3]."""
    dyn = Dynamics(
        f=lambda t, s, x, u: u.copy(),
        g=lambda t, s, x, u: u.copy(),
        f_x=lambda t, s, x, u: np.zeros((len(x), 1, 1)),
        g_x=lambda t, s, x, u: np.zeros((len(x), 1, 1)),
        f_u=lambda t, s, x, u: np.ones((len(x), 1, 1)),
        g_u=lambda t, s, x, u: np.ones((len(x), 1, 1)),
        state_dim=1, control_dim=1, outer_time_dependent=False, control_affine=True,
    )
    cost = Cost(
        l=lambda t, x, u: x[:, 0] + 0.5 * u[:, 0] ** 2,
        l_x=lambda t, x, u: np.ones_like(x),
        l_u=lambda t, x, u: u.copy(),
        h=lambda x0, xT: float(x0[0] + xT[0]),
        h_x0=lambda x0, xT: np.ones(1),
        h_x=lambda x0, xT: np.ones(1),
        control_hessian=np.eye(1),
    )
    G = InequalityConstraint(
        G=lambda t, x: -x[:, 0] - (np.asarray(t) ** 2 / 5.0 + 20.0),
        G_x=lambda t, x: -np.ones_like(x),
        label="G1",
    )
    return ProblemSpec(alpha=alpha, grid=TimeGrid(3.0, N), dynamics=dyn, cost=cost,
                       x0=np.array([10.0]), terminal=TerminalConstraint.point([10.0], [-16.0]),
                       inequalities=(G,), control_bounds=(-bound, bound), name="example1")
