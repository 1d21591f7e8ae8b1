"""Node-by-node solution of the nonlinear state equation

    x(t) = x0 + int_0^t f(t,s,x,u) (t-s)^(alpha-1) ds + int_0^t g(t,s,x,u) ds.

At node n the history sums are explicit; the diagonal term makes x_n the
solution of y = r + c f(t_n,t_n,y,u_n) + (h/2) g(t_n,t_n,y,u_n), solved by
fixed-point iteration (plain, then damped, then Newton).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core_types import ProblemSpec, Trajectory, values_of
from .errors import NonConvergence, NonFiniteError
from .linear_resolvent import linear_sweep
from .problems import caputo_to_volterra, figure1_spec  # noqa: F401  (re-exported)
from .quadrature import build_singular_weights, cumulative_trapezoid, singular_convolve_all


@dataclass(frozen=True)
class ForwardOptions:
    tol_fp: float = 1e-10
    damping: float = 0.5
    undamped_iters: int = 10
    newton_after: int = 50
    max_iter: int = 200


def _linear_forward(spec: ProblemSpec, u: np.ndarray, x0: np.ndarray) -> np.ndarray:
    lin = spec.dynamics.linear
    grid = spec.grid
    W = build_singular_weights(spec.alpha, grid)
    N1, n = grid.N + 1, spec.n
    rhs = x0 + singular_convolve_all(W, u @ lin.B1.T) + cumulative_trapezoid(u @ lin.B2.T, grid.h)
    Ftab = np.broadcast_to(lin.A1, (N1, N1, n, n))
    Htab = np.broadcast_to(lin.A2, (N1, N1, n, n))
    return linear_sweep(W, Ftab, Htab, rhs)


def _scalar_bracket(F, y0, tol, node):
    """Root of a scalar F nearest y0: expand a bracket both ways, then brentq."""
    f0 = F(y0)
    step = 1e-3 * (1.0 + abs(y0))
    lo_y, lo_f, hi_y, hi_f = y0, f0, y0, f0
    for _ in range(80):
        for side in (-1.0, 1.0):
            y = y0 + side * step
            fy = F(y)
            if not np.isfinite(fy):
                continue
            prev_y, prev_f = (lo_y, lo_f) if side < 0 else (hi_y, hi_f)
            if np.sign(fy) != np.sign(prev_f):
                a, b = sorted((prev_y, y))
                return brentq(F, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            if side < 0:
                lo_y, lo_f = y, fy
            else:
                hi_y, hi_f = y, fy
        step *= 1.6
    raise NonConvergence(f"inner iteration found no root at node {node}", node=node, residual=abs(f0))


def _diag_solve(phi, jac, y0, r, node, opts: ForwardOptions):
    """Solve y = r + phi(y) with the plain/damped/Newton schedule.

    Newton steps are backtracked on the residual norm.  When the diagonal
    map is strongly nonlinear (large c Lip) several roots can exist and
    Newton may cycle; scalar equations then fall back to bracketing the root
    nearest the starting value.
    """
    y = y0.copy()
    n = y.size
    prev = np.inf
    growth = 0
    newton = False
    stuck = 0
    fallback = False
    for it in range(1, opts.max_iter + 1):
        val = r + phi(y)
        res = y - val
        err = float(np.abs(res).max())
        if err != err or err == np.inf:
            raise NonFiniteError(node)
        if err <= opts.tol_fp:
            return y
        # a Picard map that expands cannot converge; go to Newton directly
        growth = growth + 1 if err > prev else 0
        prev = err
        if it > opts.newton_after or growth >= 3:
            newton = True
        if newton:
            J = np.eye(n) - jac(y)
            try:
                step = np.linalg.solve(J, res)
            except np.linalg.LinAlgError:
                step = res
            lam = 1.0
            for _ in range(30):
                cand = y - lam * step
                with np.errstate(all="ignore"):
                    cerr = float(np.abs(cand - r - phi(cand)).max())
                if cerr < err:
                    break
                lam *= 0.5
            else:
                stuck += 1
            y = cand
            if stuck >= 3 and n == 1:
                fallback = True
                break
        elif it > opts.undamped_iters:
            y = (1.0 - opts.damping) * y + opts.damping * val
        else:
            y = val
        if not np.isfinite(y).all():
            if n == 1:
                fallback = True
                break
            raise NonFiniteError(node)
    if fallback:
        def F(v):
            with np.errstate(all="ignore"):
                return float(v - r[0] - phi(np.array([v]))[0])
        root = _scalar_bracket(F, float(y0[0]), opts.tol_fp, node)
        if abs(F(root)) <= max(opts.tol_fp, 1e3 * np.finfo(float).eps * (1.0 + abs(root))):
            return np.array([root])
        err = abs(F(root))
    raise NonConvergence(f"inner iteration did not converge at node {node} (residual {err:.3e})",
                         node=node, residual=err)


def solve_forward(spec: ProblemSpec, control, x0=None, opts: ForwardOptions | None = None) -> Trajectory:
    """Discrete state trajectory for the given control samples."""
    opts = opts or ForwardOptions()
    grid = spec.grid
    u = values_of(control, grid, spec.d)
    x0 = spec.x0 if x0 is None else np.atleast_1d(np.asarray(x0, float))
    dyn = spec.dynamics
    if dyn.linear is not None:
        return Trajectory(grid, _linear_forward(spec, u, x0))

    W = build_singular_weights(spec.alpha, grid)
    a, b0, c, h = W.a, W.b0, W.c, grid.h
    t = grid.nodes
    N, n = grid.N, spec.n
    x = np.empty((N + 1, n))
    x[0] = x0
    one = np.ones(1)
    if not dyn.outer_time_dependent:
        Fh = np.empty((N + 1, n))
        Gh = np.empty((N + 1, n))
        Fh[0] = dyn.f(t[:1], t[:1], x[:1], u[:1])[0]
        Gh[0] = dyn.g(t[:1], t[:1], x[:1], u[:1])[0]
        gsum = np.zeros(n)
    for k in range(1, N + 1):
        tk = t[k] * one
        uk = u[k:k + 1]
        if dyn.outer_time_dependent:
            tt = np.full(k, t[k])
            fv = dyn.f(tt, t[:k], x[:k], u[:k])
            gv = dyn.g(tt, t[:k], x[:k], u[:k])
            r = x0 + b0[k] * fv[0] + a[k - 1:0:-1] @ fv[1:] + h * (0.5 * gv[0] + gv[1:].sum(axis=0))
        else:
            r = x0 + b0[k] * Fh[0] + a[k - 1:0:-1] @ Fh[1:k] + h * (0.5 * Gh[0] + gsum)

        def phi(y):
            yy = y[None, :]
            return c * dyn.f(tk, tk, yy, uk)[0] + 0.5 * h * dyn.g(tk, tk, yy, uk)[0]

        def jac(y):
            yy = y[None, :]
            return c * dyn.f_x(tk, tk, yy, uk)[0] + 0.5 * h * dyn.g_x(tk, tk, yy, uk)[0]

        x[k] = _diag_solve(phi, jac, x[k - 1], r, k, opts)
        if not dyn.outer_time_dependent:
            Fh[k] = dyn.f(tk, tk, x[k:k + 1], uk)[0]
            Gh[k] = dyn.g(tk, tk, x[k:k + 1], uk)[0]
            gsum = gsum + Gh[k]
    return Trajectory(grid, x)


def forward_residual(spec: ProblemSpec, control, xtraj) -> np.ndarray:
    """Per-node residual of the discrete state equation (re-evaluation)."""
    grid = spec.grid
    u = values_of(control, grid, spec.d)
    x = values_of(xtraj, grid, spec.n)
    W = build_singular_weights(spec.alpha, grid)
    t, h = grid.nodes, grid.h
    dyn = spec.dynamics
    out = np.zeros(grid.N + 1)
    for k in range(1, grid.N + 1):
        tt = np.full(k + 1, t[k])
        fv = dyn.f(tt, t[:k + 1], x[:k + 1], u[:k + 1])
        gv = dyn.g(tt, t[:k + 1], x[:k + 1], u[:k + 1])
        rhs = x[0] + W.row(k) @ fv + h * (0.5 * gv[0] + gv[1:k].sum(axis=0) + 0.5 * gv[k])
        out[k] = np.max(np.abs(x[k] - rhs))
    return out


def solve_forward_figure1(alpha: float, N: int, T: float = 1.0) -> Trajectory:
    """State of x0 = 1, f = -0.4 sin(2 pi x), g = -x on [0, T]."""
    spec = figure1_spec(alpha, N, T)
    return solve_forward(spec, np.zeros((N + 1, 1)))
