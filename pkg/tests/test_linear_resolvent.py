import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special as sp

from svoc.core_types import TimeGrid, Trajectory
from svoc.errors import SingularDiagonal
from svoc.linear_resolvent import (build_resolvent, check_comparison, diagonal_margin, solve_linear,
                                   tabulate_kernel)
from svoc.special import gamma


class TestSolveLinear:
    def test_mittag_leffler_half(self):
        # x = 1 - int x (t-s)^(-1/2)/Gamma(1/2) has x = E_{1/2}(-t^{1/2}) = erfcx(sqrt t)
        grid = TimeGrid(1.0, 2000)
        x = solve_linear(-1.0 / gamma(0.5), 0.0, Trajectory(grid, np.ones(grid.N + 1)), 0.5)
        np.testing.assert_allclose(x.values[:, 0], sp.erfcx(np.sqrt(grid.nodes)), atol=1e-3)

    def test_exponential(self):
        grid = TimeGrid(1.0, 2000)
        x = solve_linear(0.0, -1.0, Trajectory(grid, np.ones(grid.N + 1)), 0.5)
        np.testing.assert_allclose(x.values[:, 0], np.exp(-grid.nodes), atol=1e-7)

    def test_time_dependent_kernel(self):
        # H(t,s) = -2s gives x' = -2t x, x = exp(-t^2)
        grid = TimeGrid(1.0, 1000)
        x = solve_linear(0.0, lambda t, s: -2 * s, Trajectory(grid, np.ones(grid.N + 1)), 0.5)
        np.testing.assert_allclose(x.values[:, 0], np.exp(-grid.nodes ** 2), atol=1e-6)

    def test_singular_diagonal(self):
        grid = TimeGrid(1.0, 10)
        from svoc.quadrature import build_singular_weights
        c = build_singular_weights(0.5, grid).c
        with pytest.raises(SingularDiagonal):
            solve_linear(1.0 / c, 0.0, Trajectory(grid, np.ones(11)), 0.5)

    def test_tabulate_constant_is_view(self):
        tab = tabulate_kernel(2.0, TimeGrid(1.0, 5), 1)
        assert tab.shape == (6, 6, 1, 1) and tab.strides[0] == 0


class TestResolvent:
    @given(st.floats(0.1, 0.9), st.floats(-2, 2), st.floats(-2, 2))
    def test_reproduces_solve_linear(self, alpha, F, H):
        grid = TimeGrid(1.0, 30)
        forcing = Trajectory(grid, np.cos(2 * grid.nodes) + 1)
        R = build_resolvent(F, H, alpha, grid)
        np.testing.assert_allclose(R.apply(forcing), solve_linear(F, H, forcing, alpha).values,
                                   rtol=1e-10, atol=1e-12)

    def test_nonnegative_kernels_have_nonnegative_resolvent(self):
        rng = np.random.default_rng(11)
        grid = TimeGrid(1.0, 25)
        done = 0
        while done < 50:
            alpha = rng.uniform(0.05, 0.95)
            a, b = rng.uniform(0, 3, 2)
            F = lambda t, s: a * (1 + np.sin(t - s) ** 2)  # noqa: E731
            if diagonal_margin(F, b, alpha, grid) <= 0:
                continue
            done += 1
            R = build_resolvent(F, b, alpha, grid)
            i, j = np.tril_indices(26, -1)
            assert R.psi[i, j].min() >= -1e-12
            assert R.diag.min() >= -1e-12


class TestComparison:
    def test_monotone_forcing_orders_solutions(self):
        rng = np.random.default_rng(5)
        grid = TimeGrid(1.0, 200)
        t = grid.nodes
        done = 0
        while done < 50:
            alpha = rng.uniform(0.05, 0.95)
            P = rng.uniform(0, 2)
            if diagonal_margin(P, P, alpha, grid) <= 0:
                continue
            done += 1
            b1 = rng.uniform(0, 1) * (1 + np.sin(5 * t * rng.random()) ** 2)
            b2 = b1 + rng.uniform(0, 1) * t ** rng.uniform(0.5, 2)
            assert check_comparison(P, Trajectory(grid, b1), Trajectory(grid, b2), alpha)

    def test_rejects_bad_inputs(self):
        grid = TimeGrid(1.0, 10)
        one = Trajectory(grid, np.ones(11))
        with pytest.raises(ValueError):
            check_comparison(1.0, Trajectory(grid, 2 * np.ones(11)), one, 0.5)
        with pytest.raises(ValueError):
            check_comparison(-1.0, one, one, 0.5)

    def test_coarse_step_is_refused(self):
        # alpha = 0.05 on h = 0.1: c = h^alpha / (alpha (1 + alpha)) ~ 17, so c P > 1
        grid = TimeGrid(1.0, 10)
        assert diagonal_margin(1.0, 1.0, 0.05, grid) < 0
        one = Trajectory(grid, np.ones(11))
        with pytest.raises(ValueError, match="too coarse"):
            check_comparison(1.0, one, one, 0.05)
