import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from svoc.core_types import TimeGrid, Trajectory
from svoc.errors import GridError
from svoc.quadrature import (build_singular_weights, check_young_bound, cumulative_trapezoid, lp_norm,
                             singular_convolve, singular_convolve_all, trapezoid_integral)

alphas = st.floats(0.02, 0.98)


class TestSingularWeights:
    @pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
    def test_row_sums_integrate_kernel(self, alpha):
        grid = TimeGrid(1.0, 1000)
        W = build_singular_weights(alpha, grid)
        t = grid.nodes[1:]
        sums = W.w.sum(axis=1)[1:]
        np.testing.assert_allclose(sums, t ** alpha / alpha, rtol=1e-12)

    def test_beta_integral(self):
        # int_0^1 s (1-s)^(-1/2) ds = B(2, 1/2) = 4/3; the rule is exact for linear phi
        grid = TimeGrid(1.0, 64)
        W = build_singular_weights(0.5, grid)
        assert singular_convolve(W, grid.nodes, grid.N)[0] == pytest.approx(4.0 / 3.0, abs=1e-12)

    @given(alphas, st.floats(-3, 3), st.floats(-3, 3))
    def test_exact_for_linear_functions(self, alpha, c0, c1):
        grid = TimeGrid(2.0, 40)
        W = build_singular_weights(alpha, grid)
        t = grid.nodes
        got = singular_convolve_all(W, c0 + c1 * t)[:, 0]
        exact = c0 * t ** alpha / alpha + c1 * t ** (alpha + 1) / (alpha * (alpha + 1))
        np.testing.assert_allclose(got, exact, rtol=1e-10, atol=1e-12)

    @given(alphas, st.integers(1, 300))
    def test_weights_positive(self, alpha, N):
        W = build_singular_weights(alpha, TimeGrid(1.0, N))
        assert np.all(W.a > 0) and np.all(W.b0[1:] > 0)

    def test_compact_and_dense_agree(self):
        grid = TimeGrid(1.0, 30)
        W = build_singular_weights(0.3, grid)
        for n in (1, 7, 30):
            np.testing.assert_array_equal(W.w[n, : n + 1], W.row(n))

    def test_convolve_all_matches_rows(self):
        grid = TimeGrid(1.0, 50)
        W = build_singular_weights(0.7, grid)
        v = np.cos(3 * grid.nodes)
        all_ = singular_convolve_all(W, v)[:, 0]
        for n in (0, 1, 25, 50):
            assert all_[n] == pytest.approx(singular_convolve(W, v, n)[0], rel=1e-13, abs=1e-15)

    def test_second_order_on_smooth_integrand(self):
        errs = []
        for N in (100, 200, 400):
            grid = TimeGrid(1.0, N)
            W = build_singular_weights(0.5, grid)
            got = singular_convolve(W, np.exp(grid.nodes), N)[0]
            exact = integrate.quad(lambda s: np.exp(s), 0, 1, weight="alg", wvar=(0, -0.5))[0]
            errs.append(abs(got - exact))
        assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8

    def test_invalid_alpha(self):
        with pytest.raises(ValueError):
            build_singular_weights(1.0, TimeGrid(1.0, 10))

    def test_row_out_of_range(self):
        W = build_singular_weights(0.5, TimeGrid(1.0, 10))
        with pytest.raises(GridError):
            W.row(11)


class TestTrapezoid:
    def test_cumulative_matches_scipy(self):
        grid = TimeGrid(1.0, 37)
        v = np.sin(grid.nodes) + grid.nodes ** 2
        ref = integrate.cumulative_trapezoid(v, grid.nodes, initial=0.0)
        np.testing.assert_allclose(cumulative_trapezoid(v, grid.h), ref, rtol=1e-14)

    def test_partial_integral(self):
        grid = TimeGrid(1.0, 10)
        traj = Trajectory(grid, grid.nodes)
        assert trapezoid_integral(traj, 10)[0] == pytest.approx(0.5)
        assert trapezoid_integral(traj, 0)[0] == 0.0
        with pytest.raises(TypeError):
            trapezoid_integral(grid.nodes, 3)

    def test_lp_norm_constant(self):
        assert lp_norm(np.full(11, 2.0), 0.1, 3.0) == pytest.approx(2.0)


class TestYoungBound:
    def test_random_instances_hold(self):
        rng = np.random.default_rng(7)
        grid = TimeGrid(1.0, 400)
        for _ in range(50):
            alpha = rng.uniform(0.05, 0.95)
            rmax = 1.0 / (1.0 - alpha)
            r = 1.0 + 0.9 * (rmax - 1.0) * rng.random()
            pmax = r / (r - 1.0) if r > 1.0 else 4.0
            p = 1.0 + (min(pmax, 4.0) - 1.0) * 0.9 * rng.random()
            q = 1.0 / (1.0 / p + 1.0 / r - 1.0)
            coeffs = rng.standard_normal(4)
            psi = Trajectory(grid, np.polynomial.chebyshev.chebval(2 * grid.nodes - 1, coeffs))
            tau = rng.uniform(0.05, 1.0)
            res = check_young_bound(psi, alpha, p, q, r, tau)
            assert res.satisfied, (alpha, p, q, r, tau, res)

    def test_exponent_validation(self):
        grid = TimeGrid(1.0, 10)
        psi = Trajectory(grid, np.ones(11))
        with pytest.raises(ValueError):
            check_young_bound(psi, 0.5, 2.0, 2.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            check_young_bound(psi, 0.5, 1.0, 3.0, 1.5, 1.0)
