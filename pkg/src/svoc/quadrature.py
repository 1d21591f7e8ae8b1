"""Product-trapezoid rules for int_0^t phi(s) (t-s)^(alpha-1) ds and int_0^t phi ds.

The singular weights are Toeplitz away from the first column, so a table is
stored as two vectors of length N+1 (``a`` by lag, ``b0`` for column 0) and
the dense lower-triangular table is materialized only on request.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .core_types import TimeGrid, Trajectory, values_of
from .errors import GridError


def _binom(beta: float, K: int) -> np.ndarray:
    """Generalized binomial coefficients C(beta, k), k = 0..K."""
    c = np.empty(K + 1)
    c[0] = 1.0
    for k in range(1, K + 1):
        c[k] = c[k - 1] * (beta - k + 1) / k
    return c


def _second_difference(beta: float, d: np.ndarray) -> np.ndarray:
    """(d+1)^beta - 2 d^beta + (d-1)^beta for integer d >= 1.

    For d >= 2 the symmetric binomial series d^beta * 2 sum_k C(beta,2k) d^(-2k)
    is used; its terms share one sign, so no cancellation occurs.
    """
    d = np.asarray(d, dtype=float)
    out = np.empty_like(d)
    one = d == 1
    out[one] = 2.0 * np.expm1((beta - 1.0) * np.log(2.0))  # 2^beta - 2
    big = ~one
    if big.any():
        db = d[big]
        coef = _binom(beta, 80)[2::2]
        inv2 = db ** -2.0
        acc = np.zeros_like(db)
        powk = np.ones_like(db)
        for ck in coef:
            powk = powk * inv2
            acc += ck * powk
        out[big] = 2.0 * db ** beta * acc
    return out


def _first_column(alpha: float, n: np.ndarray) -> np.ndarray:
    """(n-1)^(alpha+1) - n^alpha (n - alpha - 1) for integer n >= 1."""
    beta = alpha + 1.0
    n = np.asarray(n, dtype=float)
    out = np.empty_like(n)
    one = n == 1
    out[one] = alpha
    big = ~one
    if big.any():
        nb = n[big]
        coef = _binom(beta, 90)[2:]
        inv = 1.0 / nb
        acc = np.zeros_like(nb)
        powk = inv.copy()
        for k, ck in enumerate(coef, start=2):
            powk = powk * inv
            acc += ck * (-1.0) ** k * powk
        out[big] = nb ** beta * acc
    return out


@dataclass(frozen=True, eq=False)
class SingularWeights:
    """Product-trapezoid weights w[n][j] for the kernel (t_n - s)^(alpha-1)."""

    alpha: float
    grid: TimeGrid
    a: np.ndarray   # a[d] = w[n][n-d] for n-d >= 1; a[0] is the diagonal weight
    b0: np.ndarray  # b0[n] = w[n][0]

    @property
    def c(self) -> float:
        return float(self.a[0])

    @cached_property
    def w(self) -> np.ndarray:
        N = self.grid.N
        n = np.arange(N + 1)
        lag = n[:, None] - n[None, :]
        table = np.where(lag >= 0, self.a[np.clip(lag, 0, N)], 0.0)
        table[:, 0] = self.b0
        table[0, 0] = 0.0
        table.flags.writeable = False
        return table

    def row(self, n: int) -> np.ndarray:
        if not 0 <= n <= self.grid.N:
            raise GridError(f"node index {n} out of range 0..{self.grid.N}")
        if n == 0:
            return np.zeros(1)
        r = self.a[n - np.arange(n + 1)].copy()
        r[0] = self.b0[n]
        return r


@lru_cache(maxsize=32)
def _weights_cached(alpha: float, T: float, N: int) -> SingularWeights:
    grid = TimeGrid(T, N)
    h = grid.h
    c = h ** alpha / (alpha * (alpha + 1.0))
    a = np.empty(N + 1)
    a[0] = c
    if N >= 1:
        a[1:] = c * _second_difference(alpha + 1.0, np.arange(1, N + 1))
    b0 = np.zeros(N + 1)
    if N >= 1:
        b0[1:] = c * _first_column(alpha, np.arange(1, N + 1))
    a.flags.writeable = False
    b0.flags.writeable = False
    return SingularWeights(alpha, grid, a, b0)


def build_singular_weights(alpha: float, grid: TimeGrid) -> SingularWeights:
    """Weights of the rule exact for piecewise-linear phi; cached per (alpha, grid)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    return _weights_cached(float(alpha), grid.T, grid.N)


def singular_convolve(weights: SingularWeights, samples, n: int) -> np.ndarray:
    """sum_j w[n][j] phi(t_j) for one node."""
    v = values_of(samples, weights.grid)
    return weights.row(n) @ v[: n + 1]


def singular_convolve_all(weights: SingularWeights, samples) -> np.ndarray:
    """The singular convolution at every node, shape (N+1, dim)."""
    v = values_of(samples, weights.grid)
    N = weights.grid.N
    out = np.empty_like(v)
    for i in range(v.shape[1]):
        shifted = v[:, i].copy()
        shifted[0] = 0.0
        out[:, i] = np.convolve(weights.a, shifted)[: N + 1] + weights.b0 * v[0, i]
    return out


def trapezoid_integral(samples, n: int, grid: TimeGrid | None = None) -> np.ndarray:
    """Composite trapezoid over nodes 0..n."""
    if grid is None:
        if not isinstance(samples, Trajectory):
            raise TypeError("grid is required for array samples")
        grid = samples.grid
    v = values_of(samples, grid)
    if not 0 <= n <= grid.N:
        raise GridError(f"node index {n} out of range 0..{grid.N}")
    if n == 0:
        return np.zeros(v.shape[1])
    return grid.h * (0.5 * v[0] + v[1:n].sum(axis=0) + 0.5 * v[n])


def cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    v = np.asarray(values, float)
    out = np.zeros_like(v)
    out[1:] = np.cumsum(0.5 * h * (v[1:] + v[:-1]), axis=0)
    return out


def lp_norm(values: np.ndarray, h: float, p: float) -> float:
    """Discrete L^p norm by the trapezoid rule on |v|^p (1-D samples on a uniform grid)."""
    v = np.abs(np.asarray(values, float).ravel())
    if v.size < 2:
        return 0.0
    integrand = v ** p
    return float((h * (integrand.sum() - 0.5 * (integrand[0] + integrand[-1]))) ** (1.0 / p))


@dataclass(frozen=True)
class YoungBound:
    lhs: float
    rhs: float
    satisfied: bool


def check_young_bound(psi, alpha: float, p: float, q: float, r: float, tau: float,
                      grid: TimeGrid | None = None) -> YoungBound:
    """Compare both sides of the Young-type bound for the Abel kernel.

    lhs is the discrete L^q norm over [0, tau] of the singular convolution of
    psi; rhs = (tau^(1-r(1-alpha)) / (1-r(1-alpha)))^(1/r) ||psi||_{L^p(0,T)}.
    Nodes beyond tau are ignored, so tau need not be a grid node.
    """
    if grid is None:
        grid = psi.grid
    if min(p, q, r) < 1.0:
        raise ValueError("exponents must be >= 1")
    if abs(1.0 / q + 1.0 - 1.0 / p - 1.0 / r) > 1e-12:
        raise ValueError("exponents violate 1/q + 1 = 1/p + 1/r")
    if not r < 1.0 / (1.0 - alpha):
        raise ValueError("r must be < 1/(1 - alpha)")
    if not 0.0 < tau <= grid.T * (1 + 1e-12):
        raise ValueError("tau must lie in (0, T]")
    v = values_of(psi, grid)
    if v.shape[1] != 1:
        raise ValueError("psi must be scalar")
    W = build_singular_weights(alpha, grid)
    conv = singular_convolve_all(W, v)[:, 0]
    k = int(np.floor(tau / grid.h + 1e-9))
    lhs = lp_norm(conv[: k + 1], grid.h, q) if k >= 1 else 0.0
    e = 1.0 - r * (1.0 - alpha)
    rhs = (tau ** e / e) ** (1.0 / r) * lp_norm(v[:, 0], grid.h, p)
    return YoungBound(lhs, rhs, bool(lhs <= rhs * (1.0 + 1e-8)))
