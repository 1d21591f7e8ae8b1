"""Linear Volterra equations, the discrete state-transition kernel and comparison checks.

The linear equation is

    x(t) = x0(t) + int_0^t F(t,s) x(s) (t-s)^(alpha-1) ds + int_0^t H(t,s) x(s) ds

discretized with the product-trapezoid singular weights and the trapezoid
rule, with the diagonal unknown solved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .core_types import TimeGrid, Trajectory, values_of
from .errors import SingularDiagonal
from .quadrature import SingularWeights, build_singular_weights


def tabulate_kernel(K, grid: TimeGrid, n: int) -> np.ndarray:
    """Tabulate a kernel on the lower triangle as an ``(N+1, N+1, n, n)`` array.

    ``K`` is a constant (scalar or n x n) or a callable ``K(t, s)`` taking
    equal-length arrays and returning ``(m,)`` or ``(m, n, n)`` values.
    Constants become zero-stride views.
    """
    N1 = grid.N + 1
    if not callable(K):
        A = np.broadcast_to(np.asarray(K, float), (n, n)) if np.ndim(K) < 2 else np.asarray(K, float)
        return np.broadcast_to(A, (N1, N1, n, n))
    i, j = np.tril_indices(N1)
    t = grid.nodes
    vals = np.asarray(K(t[i], t[j]), float)
    if vals.ndim == 0:
        return np.broadcast_to(vals.reshape(1, 1), (N1, N1, n, n))
    vals = vals.reshape(len(i), n, n)
    table = np.zeros((N1, N1, n, n))
    table[i, j] = vals
    return table


def linear_sweep(W: SingularWeights, Ftab: np.ndarray, Htab: np.ndarray, rhs: np.ndarray,
                 start: int = 0) -> np.ndarray:
    """Run the forward sweep on ``rhs`` of shape (N+1, n) or (N+1, n, r)."""
    squeeze = rhs.ndim == 2
    r3 = rhs[:, :, None] if squeeze else rhs
    x, node, cond = _kernels.forward_sweep(W.a, W.b0, W.grid.h, Ftab, Htab, np.ascontiguousarray(r3), start)
    if node >= 0:
        raise SingularDiagonal(node, cond)
    return x[:, :, 0] if squeeze else x


def solve_linear(F, H, forcing, alpha: float, grid: TimeGrid | None = None) -> Trajectory:
    """Solve the linear Volterra equation for the forcing trajectory x0(t)."""
    if grid is None:
        grid = forcing.grid
    v = values_of(forcing, grid)
    n = v.shape[1]
    W = build_singular_weights(alpha, grid)
    x = linear_sweep(W, tabulate_kernel(F, grid, n), tabulate_kernel(H, grid, n), v)
    return Trajectory(grid, x)


@dataclass(frozen=True, eq=False)
class ResolventKernel:
    """Discrete state-transition kernel.

    ``psi_reg[j, k]`` is the regularized density Psi(t_j, t_k) (t_j - t_k)^(1-alpha)
    for k < j.  The discrete resolvent mass of node k in row j is q_k Psi[j][k];
    ``diag[j]`` holds the mass of the integrable singularity at k = j, so that

        x_j = x0_j + sum_{k<j} q_k Psi[j][k] x0_k + diag[j] x0_j

    reproduces ``solve_linear`` exactly.
    """

    grid: TimeGrid
    dim: int
    alpha: float
    psi_reg: np.ndarray
    diag: np.ndarray

    @cached_property
    def psi(self) -> np.ndarray:
        t = self.grid.nodes
        gap = t[:, None] - t[None, :]
        with np.errstate(divide="ignore"):
            factor = np.where(gap > 0, np.abs(gap) ** (self.alpha - 1.0), 0.0)
        return self.psi_reg * factor[:, :, None, None]

    def apply(self, forcing) -> np.ndarray:
        f = values_of(forcing, self.grid, self.dim)
        q = self.grid.trapezoid_weights
        masses = self.psi * q[None, :, None, None]
        return f + np.einsum("jkab,kb->ja", masses, f) + np.einsum("jab,jb->ja", self.diag, f)


def build_resolvent(F, H, alpha: float, grid: TimeGrid, n: int = 1) -> ResolventKernel:
    """Column-by-column resolvent: column k is the response to an impulse at t_k."""
    W = build_singular_weights(alpha, grid)
    Ftab, Htab = tabulate_kernel(F, grid, n), tabulate_kernel(H, grid, n)
    N1 = grid.N + 1
    q = grid.trapezoid_weights
    t = grid.nodes
    psi_reg = np.zeros((N1, N1, n, n))
    diag = np.zeros((N1, n, n))
    eye = np.eye(n)
    for k in range(N1):
        rhs = np.zeros((N1, n, n))
        rhs[k] = eye
        col = linear_sweep(W, Ftab, Htab, rhs, start=k)
        diag[k] = col[k] - eye
        if k < N1 - 1:
            gap = (t[k + 1:] - t[k]) ** (1.0 - alpha)
            psi_reg[k + 1:, k] = col[k + 1:] / q[k] * gap[:, None, None]
    return ResolventKernel(grid, n, alpha, psi_reg, diag)


def diagonal_margin(F, H, alpha: float, grid: TimeGrid) -> float:
    """min_n of 1 - c F(t_n,t_n) - (h/2) H(t_n,t_n) for scalar kernels.

    With nonnegative kernels the discrete solution operator is nonnegative
    exactly when this margin is positive; coarse steps or small alpha (large
    diagonal weight c) can make it negative.
    """
    W = build_singular_weights(alpha, grid)
    Ft, Ht = tabulate_kernel(F, grid, 1), tabulate_kernel(H, grid, 1)
    k = np.arange(1, grid.N + 1)
    return float(np.min(1.0 - W.c * Ft[k, k, 0, 0] - 0.5 * grid.h * Ht[k, k, 0, 0]))


def check_comparison(P, b1, b2, alpha: float, grid: TimeGrid | None = None,
                     slack: float = 1e-10) -> bool:
    """Solve z_i = b_i + int P z_i (t-s)^(alpha-1) + int P z_i and test z1 <= z2.

    Raises ValueError when the grid is too coarse for the discrete scheme to
    be monotone (see ``diagonal_margin``).
    """
    if grid is None:
        grid = b1.grid
    v1, v2 = values_of(b1, grid, 1), values_of(b2, grid, 1)
    if np.any(v1 < 0) or np.any(v1 > v2):
        raise ValueError("comparison requires 0 <= b1 <= b2 nodewise")
    Ptab = tabulate_kernel(P, grid, 1)
    i, j = np.tril_indices(grid.N + 1)
    if np.any(Ptab[i, j] < 0):
        raise ValueError("comparison kernel must be nonnegative")
    margin = diagonal_margin(P, P, alpha, grid)
    if margin <= 0.0:
        raise ValueError(f"step too coarse for a monotone discrete scheme (diagonal margin {margin:.3e})")
    W = build_singular_weights(alpha, grid)
    z1 = linear_sweep(W, Ptab, Ptab, v1)
    z2 = linear_sweep(W, Ptab, Ptab, v2)
    return bool(np.all(z1 <= z2 + slack))
