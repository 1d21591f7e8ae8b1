import numpy as np
import pytest

from svoc import _kernels
from svoc.core_types import TimeGrid
from svoc.quadrature import build_singular_weights


@pytest.fixture
def tables():
    rng = np.random.default_rng(3)
    N, n = 40, 2
    grid = TimeGrid(1.0, N)
    W = build_singular_weights(0.4, grid)
    F = np.tril(np.ones((N + 1, N + 1)))[:, :, None, None] * rng.standard_normal((N + 1, N + 1, n, n))
    H = np.tril(np.ones((N + 1, N + 1)))[:, :, None, None] * rng.standard_normal((N + 1, N + 1, n, n))
    return grid, W, F, H, rng


def both(fn):
    out = {}
    old = _kernels.backend()
    try:
        for name in ("numpy", "numba"):
            _kernels.set_backend(name)
            out[name] = fn()
    finally:
        _kernels.set_backend(old)
    return out["numpy"], out["numba"]


class TestBackends:
    def test_forward_sweep_parity(self, tables):
        grid, W, F, H, rng = tables
        rhs = rng.standard_normal((grid.N + 1, 2, 3))
        a, b = both(lambda: _kernels.forward_sweep(W.a, W.b0, grid.h, F, H, rhs))
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
        assert a[1] == b[1] == -1

    def test_forward_sweep_start(self, tables):
        grid, W, F, H, rng = tables
        rhs = rng.standard_normal((grid.N + 1, 2, 1))
        a, b = both(lambda: _kernels.forward_sweep(W.a, W.b0, grid.h, F, H, rhs, 10))
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(a[0][:10], 0.0)

    def test_adjoint_sweep_parity(self, tables):
        grid, W, F, H, rng = tables
        src = rng.standard_normal((grid.N + 1, 2))
        c = rng.standard_normal(2)
        a, b = both(lambda: _kernels.adjoint_sweep(W.a, W.b0, grid.h, F, H, src, c))
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)

    def test_tail_sums_parity(self, tables):
        grid, W, F, H, rng = tables
        phat = rng.standard_normal((grid.N + 1, 2))
        q = grid.trapezoid_weights
        a, b = both(lambda: _kernels.tail_sums(W.a, W.b0, grid.h, phat, q))
        np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-12)

    def test_forward_solves_lower_triangular_system(self, tables):
        # dense reference: (I - K) x = rhs with K assembled from the weights
        grid, W, F, H, rng = tables
        N1, n = grid.N + 1, 2
        rhs = rng.standard_normal((N1, n))
        q = np.full((N1, N1), grid.h)
        q[:, 0] = 0.5 * grid.h
        q[np.arange(N1), np.arange(N1)] = 0.5 * grid.h
        K = np.zeros((N1 * n, N1 * n))
        for i in range(1, N1):
            for j in range(i + 1):
                K[i * n:(i + 1) * n, j * n:(j + 1) * n] = W.w[i, j] * F[i, j] + q[i, j] * H[i, j]
        x_ref = np.linalg.solve(np.eye(N1 * n) - K, rhs.ravel()).reshape(N1, n)
        x, node, _ = _kernels.forward_sweep(W.a, W.b0, grid.h, F, H, rhs[:, :, None])
        np.testing.assert_allclose(x[:, :, 0], x_ref, rtol=1e-9, atol=1e-10)

    def test_singular_diagonal_detected(self):
        grid = TimeGrid(1.0, 4)
        W = build_singular_weights(0.5, grid)
        F = np.zeros((5, 5, 1, 1))
        F[2, 2] = 1.0 / W.c
        H = np.zeros_like(F)
        _, node, cond = _kernels.forward_sweep(W.a, W.b0, grid.h, F, H, np.ones((5, 1, 1)))
        assert node == 2

    def test_unknown_backend(self):
        with pytest.raises(ValueError):
            _kernels.set_backend("cuda")
