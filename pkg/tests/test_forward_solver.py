import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from svoc import problems
from svoc.core_types import Dynamics, ProblemSpec, TimeGrid
from svoc.errors import NonConvergence, NonFiniteError
from svoc.forward_solver import (ForwardOptions, _diag_solve, forward_residual, solve_forward,
                                 solve_forward_figure1)


def mittag_leffler(alpha, z):
    """E_alpha(z) by its power series in high precision."""
    mpmath.mp.dps = 50
    z = mpmath.mpf(z)
    total, k = mpmath.mpf(0), 0
    while True:
        term = z ** k / mpmath.gamma(alpha * k + 1)
        total += term
        if abs(term) < mpmath.mpf(10) ** -30 and k > 10:
            return float(total)
        k += 1


def caputo_spec(lam, alpha, N, T=1.0):
    return ProblemSpec(alpha=alpha, grid=TimeGrid(T, N), dynamics=problems.caputo_to_volterra(lam, alpha),
                       cost=problems.zero_cost(1), x0=np.array([1.0]))


def as_callables(dyn: Dynamics, outer: bool) -> Dynamics:
    """Strip the matrix shortcut so the nonlinear node solver is used."""
    return Dynamics(f=dyn.f, g=dyn.g, f_x=dyn.f_x, g_x=dyn.g_x, f_u=dyn.f_u, g_u=dyn.g_u,
                    state_dim=dyn.state_dim, control_dim=dyn.control_dim, outer_time_dependent=outer)


class TestBridges:
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_caputo_matches_mittag_leffler(self, alpha):
        spec = caputo_spec(-1.0, alpha, 2000)
        x = solve_forward(spec, np.zeros((2001, 1))).values[:, 0]
        for t in (0.25, 0.5, 1.0):
            k = spec.grid.index_of(t)
            assert abs(x[k] - mittag_leffler(alpha, -t ** alpha)) <= 1e-3

    def test_ode_limit(self):
        spec = ProblemSpec(alpha=0.5, grid=TimeGrid(1.0, 2000),
                           dynamics=Dynamics.from_matrices(0.0, -1.0, 0.0, 0.0),
                           cost=problems.zero_cost(1), x0=[1.0])
        x = solve_forward(spec, np.zeros((2001, 1))).values[:, 0]
        assert np.max(np.abs(x - np.exp(-spec.grid.nodes))) <= 1e-5

    def test_control_enters_linearly(self):
        # x = 1 + int u ds with u = 1 gives 1 + t
        spec = ProblemSpec(alpha=0.5, grid=TimeGrid(1.0, 50), dynamics=Dynamics.from_matrices(0.0, 0.0, 0.0, 1.0),
                           cost=problems.zero_cost(1), x0=[1.0])
        x = solve_forward(spec, np.ones((51, 1))).values[:, 0]
        np.testing.assert_allclose(x, 1 + spec.grid.nodes, rtol=1e-14)


class TestNodeSolver:
    @pytest.mark.parametrize("outer", [False, True])
    def test_nonlinear_path_matches_linear_path(self, outer):
        base = caputo_spec(-1.5, 0.6, 200)
        lin = solve_forward(base, np.zeros((201, 1))).values
        spec = base.with_(dynamics=as_callables(base.dynamics, outer))
        nl = solve_forward(spec, np.zeros((201, 1))).values
        np.testing.assert_allclose(nl, lin, atol=1e-10)

    @given(st.floats(0.05, 0.95), st.sampled_from([20, 100, 400]))
    def test_figure1_residual_small(self, alpha, N):
        spec = problems.figure1_spec(alpha, N)
        x = solve_forward(spec, np.zeros((N + 1, 1)))
        assert np.max(forward_residual(spec, np.zeros((N + 1, 1)), x)) <= 1e-9

    def test_figure1_helper(self):
        x = solve_forward_figure1(0.5, 100)
        assert x.values[0, 0] == 1.0 and np.all(np.isfinite(x.values))

    @given(st.floats(0.05, 0.95), st.floats(-5, 5))
    def test_zero_dynamics_keep_state(self, alpha, x0):
        spec = problems.figure1_spec(alpha, 20).with_(
            dynamics=as_callables(Dynamics.from_matrices(0.0, 0.0, 0.0, 0.0), False), x0=np.array([x0]))
        np.testing.assert_array_equal(solve_forward(spec, np.zeros((21, 1))).values, x0)

    def test_blow_up_is_reported(self):
        # y = r + (h/2) e^y has no root once r is large
        dyn = Dynamics(f=lambda t, s, x, u: np.zeros_like(x), g=lambda t, s, x, u: np.exp(x),
                       f_x=lambda t, s, x, u: np.zeros((len(x), 1, 1)),
                       g_x=lambda t, s, x, u: np.exp(x)[:, :, None],
                       state_dim=1, control_dim=1, outer_time_dependent=False)
        spec = ProblemSpec(alpha=0.5, grid=TimeGrid(1.0, 20), dynamics=dyn, cost=problems.zero_cost(1), x0=[10.0])
        with pytest.raises((NonFiniteError, NonConvergence)), np.errstate(over="ignore"):
            solve_forward(spec, np.zeros((21, 1)))

    def test_schedule_reaches_newton(self):
        # y = 2 - 3 y: the Picard map expands, Newton lands on 1/2
        y = _diag_solve(lambda y: -3 * y, lambda y: -3 * np.eye(2), np.zeros(2), np.full(2, 2.0), 1,
                        ForwardOptions())
        np.testing.assert_allclose(y, 0.5, atol=1e-12)

    def test_multiple_roots_pick_nearest(self):
        # y = -4 sin(2 pi y) has many roots; Newton cycles from some starts
        opts = ForwardOptions()
        for y0 in np.linspace(-1, 1, 41):
            y = _diag_solve(lambda y: -4 * np.sin(2 * np.pi * y), lambda y: np.diag(-8 * np.pi * np.cos(2 * np.pi * y)),
                            np.array([y0]), np.zeros(1), 1, opts)
            assert abs(y[0] + 4 * np.sin(2 * np.pi * y[0])) <= 1e-9

    def test_iteration_cap(self):
        opts = ForwardOptions(max_iter=3, undamped_iters=100, newton_after=100)
        with pytest.raises(NonConvergence) as info:
            _diag_solve(lambda y: 0.99 * y + 1.0, lambda y: 0.99 * np.eye(1), np.zeros(1), np.zeros(1), 7, opts)
        assert info.value.node == 7
