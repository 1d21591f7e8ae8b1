"""Backward adjoint equation, variational equation and the duality check.

The discrete adjoint is the exact transpose of the linearized forward scheme.
With q_k the trapezoid weights, W the singular weights and Q_n[k] the
trapezoid weight of node k in row n, the unknowns p_0..p_{N-1} satisfy

    p_k = -(lam l_x + sum_i Theta_i G^i_x)_k
          + (h/q_k) sum_{n=k}^{N-1} (W[n,k] F[n,k]' + Q_n[k] H[n,k]') p_n
          - (1/q_k) (W[N,k] F[N,k]' + Q_N[k] H[N,k]') pi_N

where F, H are the state Jacobians of f, g along (xbar, ubar) and pi_N is the
terminal vector

    pi_N = (I - W[N,N] F[N,N]' - h/2 H[N,N]')^{-1} (c' + h/2 (lam l_x + sum Theta G_x)_N'),

with c = lam h_x + xi_2' the terminal coefficient.  The singular terminal
source -f_x(T,t)' c' (T-t)^(alpha-1) is thus applied through the transposed
product weights, which keeps its integrable blow-up inside the quadrature.
Internally the terminal term is carried as the mass phat_N = -pi_N / h.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .core_types import MultiplierSet, ProblemSpec, Trajectory, values_of
from .errors import GridError, NonFiniteError, SingularDiagonal
from .linear_resolvent import linear_sweep
from .quadrature import SingularWeights, build_singular_weights, cumulative_trapezoid, singular_convolve_all


def discrete_cost(spec: ProblemSpec, x, u) -> float:
    """J = sum_k q_k l(t_k, x_k, u_k) + h(x_0, x_N)."""
    xv, uv = values_of(x, spec.grid, spec.n), values_of(u, spec.grid, spec.d)
    q = spec.grid.trapezoid_weights
    run = float(q @ spec.cost.l(spec.grid.nodes, xv, uv))
    return run + float(spec.cost.h(xv[0], xv[-1]))


@dataclass(frozen=True, eq=False)
class Linearization:
    """Kernel tables along a state/control pair.

    For dynamics that ignore the outer time, ``F3[k] = f_x(., t_k, x_k, u_k)``
    and the full tables are zero-stride views; otherwise the full lower
    triangle is tabulated.
    """

    spec: ProblemSpec
    x: np.ndarray
    u: np.ndarray
    F: np.ndarray
    H: np.ndarray
    F3: np.ndarray | None = None
    H3: np.ndarray | None = None

    @property
    def separable(self) -> bool:
        return self.F3 is not None

    @cached_property
    def weights(self) -> SingularWeights:
        return build_singular_weights(self.spec.alpha, self.spec.grid)


def linearize(spec: ProblemSpec, xbar, ubar) -> Linearization:
    grid = spec.grid
    x = values_of(xbar, grid, spec.n)
    u = values_of(ubar, grid, spec.d)
    dyn = spec.dynamics
    N1, n = grid.N + 1, spec.n
    t = grid.nodes
    if not dyn.outer_time_dependent:
        F3 = np.asarray(dyn.f_x(t, t, x, u), float).reshape(N1, n, n)
        H3 = np.asarray(dyn.g_x(t, t, x, u), float).reshape(N1, n, n)
        F = np.broadcast_to(F3[None], (N1, N1, n, n))
        H = np.broadcast_to(H3[None], (N1, N1, n, n))
        return Linearization(spec, x, u, F, H, F3, H3)
    i, j = np.tril_indices(N1)
    F = np.zeros((N1, N1, n, n))
    H = np.zeros((N1, N1, n, n))
    F[i, j] = np.asarray(dyn.f_x(t[i], t[j], x[j], u[j]), float).reshape(len(i), n, n)
    H[i, j] = np.asarray(dyn.g_x(t[i], t[j], x[j], u[j]), float).reshape(len(i), n, n)
    return Linearization(spec, x, u, F, H)


def transpose_apply(lin: Linearization, phat: np.ndarray) -> np.ndarray:
    """(h/q_k) sum_{n>=k} (W[n,k] F[n,k]' + Q_n[k] H[n,k]') phat_n for every k.

    A vectorized evaluation independent of the compiled sweep; used for
    residual re-evaluation and the duality check.
    """
    grid = lin.spec.grid
    W = lin.weights
    q = grid.trapezoid_weights
    if lin.separable:
        Pf, Pg = _kernels.tail_sums(W.a, W.b0, grid.h, phat, q)
        return np.einsum("kts,kt->ks", lin.F3, Pf) + np.einsum("kts,kt->ks", lin.H3, Pg)
    N1 = grid.N + 1
    Wd = W.w
    Qd = np.tril(np.full((N1, N1), grid.h), -1)
    Qd[:, 0] = 0.5 * grid.h
    Qd[np.arange(N1), np.arange(N1)] = 0.5 * grid.h
    Qd[0, 0] = 0.0
    out = np.einsum("nk,nkts,nt->ks", Wd, lin.F, phat) + np.einsum("nk,nkts,nt->ks", Qd, lin.H, phat)
    return (grid.h / q)[:, None] * out


def adjoint_sources(spec: ProblemSpec, x: np.ndarray, u: np.ndarray, mult: MultiplierSet) -> np.ndarray:
    """-(lam l_x + sum_i Theta_i G^i_x) at every node, shape (N+1, n)."""
    t = spec.grid.nodes
    src = -mult.lam * np.asarray(spec.cost.l_x(t, x, u), float).reshape(len(t), spec.n)
    for i, con in enumerate(spec.inequalities):
        src -= mult.Theta[:, i:i + 1] * np.asarray(con.G_x(t, x), float).reshape(len(t), spec.n)
    return src


def terminal_coefficient(spec: ProblemSpec, x: np.ndarray, mult: MultiplierSet) -> np.ndarray:
    """c' = lam h_x(x_0, x_N)' + xi_2."""
    return mult.lam * np.asarray(spec.cost.h_x(x[0], x[-1]), float).ravel() + mult.xi2


@dataclass(frozen=True)
class AdjointConfig:
    """Multipliers and terminal handling for the adjoint solve.

    ``terminal_coeff`` defaults to lam h_x + xi_2' evaluated along xbar.
    With ``terminal_source='pointwise'`` the singular terminal source is
    sampled as f_x(T,t_k)' c' (T-t_k)^(alpha-1) at nodes older than the last
    ``endpoint_guard`` fraction of the horizon, and applied through the
    transposed product weights inside that band.  The default 'transpose'
    uses the product weights everywhere, which makes the adjoint the exact
    transpose of the discrete forward scheme.
    """

    multipliers: MultiplierSet
    terminal_coeff: np.ndarray | None = None
    endpoint_guard: float = 0.05
    terminal_source: str = "transpose"

    def __post_init__(self):
        if not (0.0 < self.endpoint_guard <= 0.1):
            raise ValueError("endpoint_guard must lie in (0, 0.1]")
        if self.terminal_source not in ("transpose", "pointwise"):
            raise ValueError("terminal_source must be 'transpose' or 'pointwise'")

    @classmethod
    def unconstrained(cls, spec: ProblemSpec, **kw) -> "AdjointConfig":
        return cls(MultiplierSet.zero(spec.grid, spec.n, spec.m), **kw)


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    p: Trajectory          # p_N copies p_{N-1} (convention, p is only L^p near T)
    phat: np.ndarray       # p_0..p_{N-1} and the terminal mass -pi_N/h in the last row
    pi_N: np.ndarray
    c: np.ndarray
    lin: Linearization

    @property
    def interior(self) -> np.ndarray:
        return self.phat[:-1]

    def integral(self) -> np.ndarray:
        """Discrete int_0^T p, including the terminal-cell mass.

        Equals sum_{k<N} q_k p_k + c' - pi_N; with this definition the
        transversality identity holds exactly for the discrete scheme.
        """
        q = self.lin.spec.grid.trapezoid_weights
        return q[:-1] @ self.interior + self.c - self.pi_N


def _pointwise_correction(spec, lin, phat_N, c, guard):
    """Source correction replacing the transposed terminal term by pointwise samples."""
    grid = spec.grid
    W = lin.weights
    N, h = grid.N, grid.h
    q = grid.trapezoid_weights
    t = grid.nodes
    k = np.arange(N)
    k = k[t[k] < grid.T * (1.0 - guard)]
    if k.size == 0:
        return np.zeros((N + 1, spec.n))
    Wk = np.where(k == 0, W.b0[N], W.a[N - k])
    Qk = np.where(k == 0, 0.5 * h, h)
    FN, HN = lin.F[N, k], lin.H[N, k]
    transposed = (h / q[k])[:, None] * (np.einsum("k,kts,t->ks", Wk, FN, phat_N)
                                        + np.einsum("k,kts,t->ks", Qk, HN, phat_N))
    sing = (grid.T - t[k]) ** (spec.alpha - 1.0)
    pointwise = -(np.einsum("kts,t->ks", FN, c) * sing[:, None] + np.einsum("kts,t->ks", HN, c))
    out = np.zeros((N + 1, spec.n))
    out[k] = pointwise - transposed
    return out


def adjoint_solution(spec: ProblemSpec, xbar, ubar, cfg: AdjointConfig,
                     lin: Linearization | None = None) -> AdjointSolution:
    lin = lin or linearize(spec, xbar, ubar)
    mult = cfg.multipliers
    if mult.m != spec.m or mult.n != spec.n or mult.grid.N != spec.grid.N:
        raise GridError("multipliers do not match the problem dimensions")
    x, u = lin.x, lin.u
    c = terminal_coefficient(spec, x, mult) if cfg.terminal_coeff is None else np.asarray(cfg.terminal_coeff, float).ravel()
    src = adjoint_sources(spec, x, u, mult)
    W = lin.weights
    h = spec.grid.h
    if cfg.terminal_source == "pointwise":
        N, n = spec.grid.N, spec.n
        M = np.eye(n) - W.c * lin.F[N, N].T - 0.5 * h * lin.H[N, N].T
        phat_N = -np.linalg.solve(M, c - 0.5 * h * src[N]) / h
        src = src + _pointwise_correction(spec, lin, phat_N, c, cfg.endpoint_guard)
    phat, node, cond = _kernels.adjoint_sweep(W.a, W.b0, h, lin.F, lin.H, np.ascontiguousarray(src), c)
    if node >= 0:
        raise SingularDiagonal(node, cond)
    if not np.all(np.isfinite(phat)):
        bad = np.argwhere(~np.isfinite(phat))[:, 0]
        raise NonFiniteError(int(bad.max()))
    pvals = phat.copy()
    pvals[-1] = phat[-2]
    return AdjointSolution(Trajectory(spec.grid, pvals), phat, -h * phat[-1], c, lin)


def solve_adjoint(spec: ProblemSpec, xbar, ubar, cfg: AdjointConfig) -> Trajectory:
    """Adjoint trajectory p on the grid (p(T) stored as the last interior value)."""
    return adjoint_solution(spec, xbar, ubar, cfg).p


def adjoint_residual(spec: ProblemSpec, xbar, ubar, p, mult: MultiplierSet,
                     lin: Linearization | None = None, terminal_coeff=None) -> float:
    """max_k<N |p_k - RHS_k(p)| / max(1, max|p|), re-evaluating the discrete equation."""
    lin = lin or linearize(spec, xbar, ubar)
    pv = values_of(p, spec.grid, spec.n)
    x, u = lin.x, lin.u
    c = terminal_coefficient(spec, x, mult) if terminal_coeff is None else np.asarray(terminal_coeff, float)
    src = adjoint_sources(spec, x, u, mult)
    N, h = spec.grid.N, spec.grid.h
    M = np.eye(spec.n) - lin.weights.c * lin.F[N, N].T - 0.5 * h * lin.H[N, N].T
    phat = pv.copy()
    phat[-1] = -np.linalg.solve(M, c - 0.5 * h * src[N]) / h
    rhs = src + transpose_apply(lin, phat)
    err = np.max(np.abs(pv[:-1] - rhs[:-1]))
    return float(err / max(1.0, np.max(np.abs(pv[:-1]))))


@dataclass(frozen=True, eq=False)
class VariationalResult:
    Z: Trajectory
    Zhat_T: float
    forcing: np.ndarray


def spike_forcing(spec: ProblemSpec, x: np.ndarray, ubar: np.ndarray, u_alt: np.ndarray) -> np.ndarray:
    """Quadrature of f(.,.,x,u_alt) - f(.,.,x,ubar) and the same for g, at every node."""
    grid = spec.grid
    dyn = spec.dynamics
    t = grid.nodes
    if not dyn.outer_time_dependent:
        df = dyn.f(t, t, x, u_alt) - dyn.f(t, t, x, ubar)
        dg = dyn.g(t, t, x, u_alt) - dyn.g(t, t, x, ubar)
        W = build_singular_weights(spec.alpha, grid)
        return singular_convolve_all(W, df) + cumulative_trapezoid(dg, grid.h)
    W = build_singular_weights(spec.alpha, grid)
    out = np.zeros((grid.N + 1, spec.n))
    for k in range(1, grid.N + 1):
        tt = np.full(k + 1, t[k])
        df = dyn.f(tt, t[:k + 1], x[:k + 1], u_alt[:k + 1]) - dyn.f(tt, t[:k + 1], x[:k + 1], ubar[:k + 1])
        dg = dyn.g(tt, t[:k + 1], x[:k + 1], u_alt[:k + 1]) - dyn.g(tt, t[:k + 1], x[:k + 1], ubar[:k + 1])
        out[k] = W.row(k) @ df + grid.h * (dg[1:k].sum(axis=0) + 0.5 * (dg[0] + dg[k]))
    return out


def solve_variational(spec: ProblemSpec, xbar, ubar, a, u_alt,
                      lin: Linearization | None = None) -> VariationalResult:
    """Z for the initial perturbation ``a`` and the control replacement ``u_alt``."""
    lin = lin or linearize(spec, xbar, ubar)
    x, u = lin.x, lin.u
    ua = values_of(u_alt, spec.grid, spec.d)
    a = np.atleast_1d(np.asarray(a, float))
    forcing = a + spike_forcing(spec, x, u, ua)
    Z = linear_sweep(lin.weights, lin.F, lin.H, forcing)
    t = spec.grid.nodes
    q = spec.grid.trapezoid_weights
    cost = spec.cost
    lx = np.asarray(cost.l_x(t, x, u), float).reshape(len(t), spec.n)
    dl = cost.l(t, x, ua) - cost.l(t, x, u)
    Zhat = (q @ np.einsum("ks,ks->k", lx, Z) + q @ dl
            + np.asarray(cost.h_x0(x[0], x[-1])) @ a + np.asarray(cost.h_x(x[0], x[-1])) @ Z[-1])
    return VariationalResult(Trajectory(spec.grid, Z), float(Zhat), forcing)


@dataclass(frozen=True)
class DualityCheck:
    lhs: float
    rhs: float
    gap: float


def check_duality(spec: ProblemSpec, xbar, ubar, cfg: AdjointConfig, a, u_alt) -> DualityCheck:
    """Both sides of the integration-order exchange for the adjoint pairing.

    lhs = sum_{k<N} q_k [-p_k + (K* p)_k]' Z_k with K* the transposed kernel
    operator; rhs = -sum_{k<N} q_k p_k' (a + spike forcing)_k.
    """
    lin = linearize(spec, xbar, ubar)
    sol = adjoint_solution(spec, xbar, ubar, cfg, lin)
    var = solve_variational(spec, xbar, ubar, a, u_alt, lin)
    q = spec.grid.trapezoid_weights
    phat = sol.phat.copy()
    phat[-1] = 0.0
    Kp = transpose_apply(lin, phat)
    p = sol.interior
    Z = var.Z.values[:-1]
    lhs = float(q[:-1] @ np.einsum("ks,ks->k", -p + Kp[:-1], Z))
    rhs = float(-(q[:-1] @ np.einsum("ks,ks->k", p, var.forcing[:-1])))
    return DualityCheck(lhs, rhs, abs(lhs - rhs) / (1.0 + abs(lhs)))
