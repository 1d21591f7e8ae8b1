"""Domain types shared by every solver module.

All callables in this package are vectorized over sample points.  With ``m``
probe points, state dimension ``n`` and control dimension ``d``:

* dynamics ``f(t, s, x, u)`` takes ``t, s`` of shape ``(m,)``, ``x`` of shape
  ``(m, n)`` and ``u`` of shape ``(m, d)`` and returns ``(m, n)``; the state
  Jacobians ``f_x``/``g_x`` return ``(m, n, n)`` and the optional control
  Jacobians ``f_u``/``g_u`` return ``(m, n, d)``;
* running cost ``l(t, x, u)`` returns ``(m,)``, ``l_x`` returns ``(m, n)``;
* terminal cost ``h(x0, xT)`` takes two vectors and returns a float, with
  gradients ``h_x0``/``h_x`` returning ``(n,)``;
* inequality constraints ``G(t, x)`` return ``(m,)`` and ``G_x`` ``(m, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import GridError, NonFiniteError

FD_REL_TOL = 1e-5


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/N on [0, T]."""

    T: float
    N: int

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N:
            raise GridError(f"N must be an integer, got {self.N!r}")
        if self.N < 1:
            raise GridError(f"N must be positive, got {self.N}")
        if not np.isfinite(self.T) or self.T <= 0:
            raise GridError(f"T must be positive and finite, got {self.T}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "T", float(self.T))

    @property
    def h(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.h
        t[-1] = self.T
        t.flags.writeable = False
        return t

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        q = np.full(self.N + 1, self.h)
        q[0] = q[-1] = 0.5 * self.h
        q.flags.writeable = False
        return q

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        k = int(round(t / self.h))
        if k < 0 or k > self.N or abs(k * self.h - t) > tol * max(1.0, self.T):
            raise GridError(f"t = {t} is not a node of the grid (T={self.T}, N={self.N})")
        return k


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Grid function with ``N + 1`` rows; row k is the value at t_k."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if v.ndim != 2 or v.shape[0] != self.grid.N + 1:
            raise GridError(f"trajectory needs {self.grid.N + 1} rows, got shape {np.shape(self.values)}")
        bad = ~np.isfinite(v)
        if bad.any():
            raise NonFiniteError(int(np.argwhere(bad)[0, 0]), "trajectory contains non-finite entries")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]

    @classmethod
    def constant(cls, grid: TimeGrid, value) -> "Trajectory":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.N + 1, 1)))

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "Trajectory":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float))


def values_of(traj, grid: TimeGrid | None = None, dim: int | None = None) -> np.ndarray:
    """Return the ``(N+1, dim)`` array behind a Trajectory or array-like."""
    if isinstance(traj, Trajectory):
        if grid is not None and (traj.grid.N != grid.N or traj.grid.T != grid.T):
            raise GridError("trajectory lives on a different grid")
        v = traj.values
    else:
        v = np.asarray(traj, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1)
        if grid is not None and v.shape[0] != grid.N + 1:
            raise GridError(f"expected {grid.N + 1} rows, got {v.shape[0]}")
    if dim is not None and v.shape[1] != dim:
        raise GridError(f"expected {dim} columns, got {v.shape[1]}")
    return v


@dataclass(frozen=True)
class LinearData:
    """Constant matrices of linear dynamics f = A1 x + B1 u, g = A2 x + B2 u."""

    A1: np.ndarray
    A2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray


@dataclass(frozen=True)
class Dynamics:
    f: Callable
    g: Callable
    f_x: Callable
    g_x: Callable
    state_dim: int
    control_dim: int
    f_u: Callable | None = None
    g_u: Callable | None = None
    # False when f and g ignore the outer time t; enables cached history sums.
    outer_time_dependent: bool = True
    control_affine: bool = False
    linear: LinearData | None = None

    @classmethod
    def from_matrices(cls, A1, A2, B1, B2) -> "Dynamics":
        A1, A2 = np.atleast_2d(np.asarray(A1, float)), np.atleast_2d(np.asarray(A2, float))
        B1, B2 = np.atleast_2d(np.asarray(B1, float)), np.atleast_2d(np.asarray(B2, float))
        n, d = B1.shape

        def jac(A):
            return lambda t, s, x, u: np.broadcast_to(A, (len(x),) + A.shape)

        return cls(
            f=lambda t, s, x, u: x @ A1.T + u @ B1.T,
            g=lambda t, s, x, u: x @ A2.T + u @ B2.T,
            f_x=jac(A1), g_x=jac(A2), f_u=jac(B1), g_u=jac(B2),
            state_dim=n, control_dim=d,
            outer_time_dependent=False, control_affine=True,
            linear=LinearData(A1, A2, B1, B2),
        )


@dataclass(frozen=True)
class LQCost:
    Q: np.ndarray
    R: np.ndarray
    M: np.ndarray


@dataclass(frozen=True)
class Cost:
    l: Callable
    l_x: Callable
    h: Callable
    h_x0: Callable
    h_x: Callable
    l_u: Callable | None = None
    # Constant d x d matrix when l is quadratic in u (closed-form maximization).
    control_hessian: np.ndarray | None = None
    lq: LQCost | None = None

    @classmethod
    def quadratic(cls, Q, R, M) -> "Cost":
        """l = (x'Qx + u'Ru)/2, h = xT'M xT/2."""
        Q, R, M = (np.atleast_2d(np.asarray(a, float)) for a in (Q, R, M))
        n = Q.shape[0]
        return cls(
            l=lambda t, x, u: 0.5 * (np.einsum("mi,ij,mj->m", x, Q, x) + np.einsum("mi,ij,mj->m", u, R, u)),
            l_x=lambda t, x, u: x @ Q.T,
            l_u=lambda t, x, u: u @ R.T,
            h=lambda x0, xT: 0.5 * float(xT @ M @ xT),
            h_x0=lambda x0, xT: np.zeros(n),
            h_x=lambda x0, xT: 0.5 * (M + M.T) @ xT,
            control_hessian=R,
            lq=LQCost(Q, R, M),
        )


@dataclass(frozen=True)
class TerminalConstraint:
    """Terminal set F in R^{2n} for the pair (x0, x(T)).

    Point and box sets are both stored as coordinate bounds; a point set has
    ``lower == upper``.
    """

    kind: str = "none"
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "point", "box"):
            raise ValueError(f"unknown terminal constraint kind {self.kind!r}")
        if self.kind != "none":
            lo = np.asarray(self.lower, float).ravel()
            hi = np.asarray(self.upper, float).ravel()
            if lo.shape != hi.shape or lo.size % 2:
                raise ValueError("terminal bounds must be two vectors of equal even length")
            if np.isnan(lo).any() or np.isnan(hi).any():
                raise ValueError("terminal bounds contain NaN")
            if self.kind == "point" and not np.all(np.isfinite(lo)):
                raise ValueError("point terminal set must be finite")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def none(cls) -> "TerminalConstraint":
        return cls("none")

    @classmethod
    def point(cls, x0_target, xT_target) -> "TerminalConstraint":
        z = np.concatenate([np.atleast_1d(x0_target), np.atleast_1d(xT_target)]).astype(float)
        return cls("point", z, z.copy())

    @classmethod
    def box(cls, lower, upper) -> "TerminalConstraint":
        return cls("box", lower, upper)

    @property
    def nonempty(self) -> bool:
        return self.kind == "none" or bool(np.all(self.lower <= self.upper))

    def project(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, float)
        if self.kind == "none":
            return z.copy()
        return np.clip(z, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, around: np.ndarray, count: int) -> np.ndarray:
        """Draw points of F; infinite sides are sampled near ``around``."""
        around = np.asarray(around, float)
        lo = np.where(np.isfinite(self.lower), self.lower, around - 1.0 - np.abs(around))
        hi = np.where(np.isfinite(self.upper), self.upper, around + 1.0 + np.abs(around))
        lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        return lo + (hi - lo) * rng.random((count, around.size))


@dataclass(frozen=True)
class InequalityConstraint:
    G: Callable
    G_x: Callable
    label: str = "G"


@dataclass(frozen=True)
class ProblemSpec:
    alpha: float
    grid: TimeGrid
    dynamics: Dynamics
    cost: Cost
    x0: np.ndarray
    terminal: TerminalConstraint = field(default_factory=TerminalConstraint.none)
    inequalities: tuple = ()
    control_bounds: tuple | None = None
    u_ref: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        n, d = self.dynamics.state_dim, self.dynamics.control_dim
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)).copy())
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        if self.control_bounds is None:
            lo, hi = np.full(d, -np.inf), np.full(d, np.inf)
        else:
            lo = np.broadcast_to(np.asarray(self.control_bounds[0], float), (d,)).copy()
            hi = np.broadcast_to(np.asarray(self.control_bounds[1], float), (d,)).copy()
        object.__setattr__(self, "control_bounds", (lo, hi))
        u_ref = np.zeros(d) if self.u_ref is None else np.atleast_1d(np.asarray(self.u_ref, float))
        object.__setattr__(self, "u_ref", np.clip(u_ref, lo, hi) if np.all(lo <= hi) else u_ref)
        if self.x0.size != n:
            raise ValueError(f"x0 has {self.x0.size} entries, state_dim is {n}")

    @property
    def n(self) -> int:
        return self.dynamics.state_dim

    @property
    def d(self) -> int:
        return self.dynamics.control_dim

    @property
    def m(self) -> int:
        return len(self.inequalities)

    def with_(self, **changes) -> "ProblemSpec":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class MultiplierSet:
    """(lambda, xi, Theta) with Theta the densities of the constraint measures.

    ``Theta`` has shape ``(N + 1, m)``.  The cumulative functions
    theta_i(t) = int_0^t Theta_i are built by the trapezoid rule.
    """

    grid: TimeGrid
    lam: float
    xi: np.ndarray
    Theta: np.ndarray

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, float)).copy()
        Th = np.asarray(self.Theta, float)
        if Th.ndim == 1:
            Th = Th.reshape(-1, 1) if Th.size else np.zeros((self.grid.N + 1, 0))
        if Th.shape[0] != self.grid.N + 1:
            raise GridError("Theta needs one row per grid node")
        if not (np.isfinite(xi).all() and np.isfinite(Th).all() and np.isfinite(self.lam)):
            raise ValueError("multipliers must be finite")
        xi.flags.writeable = False
        Th = Th.copy()
        Th.flags.writeable = False
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "Theta", Th)
        object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def zero(cls, grid: TimeGrid, n: int, m: int, lam: float = 1.0) -> "MultiplierSet":
        return cls(grid, lam, np.zeros(2 * n), np.zeros((grid.N + 1, m)))

    @property
    def n(self) -> int:
        return self.xi.size // 2

    @property
    def m(self) -> int:
        return self.Theta.shape[1]

    @property
    def xi1(self) -> np.ndarray:
        return self.xi[: self.n]

    @property
    def xi2(self) -> np.ndarray:
        return self.xi[self.n:]

    @cached_property
    def theta(self) -> np.ndarray:
        h = self.grid.h
        out = np.zeros_like(self.Theta)
        out[1:] = np.cumsum(0.5 * h * (self.Theta[1:] + self.Theta[:-1]), axis=0)
        return out

    @property
    def theta_T(self) -> np.ndarray:
        return self.theta[-1]

    @property
    def theta_density(self) -> list:
        return [Trajectory(self.grid, self.Theta[:, i]) for i in range(self.m)]

    @property
    def theta_cumulative(self) -> list:
        return [Trajectory(self.grid, self.theta[:, i]) for i in range(self.m)]

    def replace(self, **changes) -> "MultiplierSet":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class RegularityData:
    K0: Callable
    K: Callable
    omega: Callable

    def check(self, grid: TimeGrid) -> list:
        t = grid.nodes
        issues = []
        for name in ("K0", "K"):
            vals = np.asarray(getattr(self, name)(t), float)
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                issues.append(f"{name} must be finite and nonnegative on [0, T]")
        return issues


@dataclass
class SolveReport:
    cost: float
    residuals: dict
    iterations: int
    converged: bool
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cost": float(self.cost),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "tolerances": {k: float(v) for k, v in sorted(self.tolerances.items())},
            "options": self.options,
            "notes": list(self.notes),
        }


# ---------------------------------------------------------------------------
# validation

def _fd_step(v):
    return 1e-6 * (1.0 + np.abs(v))


def _rel_err(analytic, fd_noise):
    fd, noise = fd_noise
    analytic = np.asarray(analytic, float)
    if analytic.shape != fd.shape:
        try:
            analytic = np.broadcast_to(analytic, fd.shape)
        except ValueError:
            return np.inf
    if not np.all(np.isfinite(analytic)):
        return np.inf
    excess = np.maximum(np.abs(analytic - fd) - noise, 0.0)
    return float(np.max(excess / np.maximum(1.0, np.abs(fd)), initial=0.0))


def _fd_jacobian(fun, x, out_shape_last):
    """Central-difference Jacobian of a batched map wrt the columns of x,
    with the rounding noise of each entry (large function values cancel)."""
    m, n = x.shape
    cols, noise = [], []
    for j in range(n):
        step = _fd_step(x[:, j])
        xp, xm = x.copy(), x.copy()
        xp[:, j] += step
        xm[:, j] -= step
        fp = np.asarray(fun(xp), float).reshape(m, -1)
        fm = np.asarray(fun(xm), float).reshape(m, -1)
        cols.append((fp - fm) / (2 * step)[:, None])
        noise.append(64 * np.finfo(float).eps * np.maximum(np.abs(fp), np.abs(fm)) / step[:, None])
    jac = np.stack(cols, axis=-1)  # (m, out, n)
    err = np.stack(noise, axis=-1)
    return (jac, err) if out_shape_last else (jac[:, 0, :], err[:, 0, :])


def _probe_points(spec: ProblemSpec, rng: np.random.Generator, count: int):
    T = spec.grid.T
    a, b = rng.random(count) * T, rng.random(count) * T
    t, s = np.maximum(a, b), np.minimum(a, b)
    x = spec.x0 + rng.standard_normal((count, spec.n))
    lo, hi = spec.control_bounds
    lo_f = np.where(np.isfinite(lo), lo, spec.u_ref - 1.0)
    hi_f = np.where(np.isfinite(hi), hi, spec.u_ref + 1.0)
    u = lo_f + (hi_f - lo_f) * rng.random((count, spec.d))
    return t, s, x, u


def validate_spec(spec: ProblemSpec, seed: int = 0, probes: int = 8) -> list:
    """Check the standing assumptions that are checkable numerically.

    Returns human-readable diagnostics; an empty list means the spec passed.
    """
    out = []
    if not (0.0 < spec.alpha < 1.0):
        out.append("alpha out of (0,1)")
    g = spec.grid
    if not (np.all(np.diff(g.nodes) > 0) and g.nodes[0] == 0.0 and g.nodes[-1] == g.T):
        out.append("grid nodes are not strictly increasing from 0 to T")
    if abs(g.h * g.N - g.T) > 2 * np.finfo(float).eps * g.T:
        out.append("grid step does not tile the horizon")
    lo, hi = spec.control_bounds
    if lo.shape != (spec.d,) or np.any(lo > hi) or np.isnan(lo).any() or np.isnan(hi).any():
        out.append("control_bounds empty")
    if not spec.terminal.nonempty:
        out.append("terminal set empty (lower > upper)")
    if spec.terminal.kind != "none" and spec.terminal.lower.size != 2 * spec.n:
        out.append("terminal set dimension does not match 2*state_dim")
    if out:
        return out

    rng = np.random.default_rng(seed)
    t, s, x, u = _probe_points(spec, rng, probes)
    dyn, cost = spec.dynamics, spec.cost
    n, d = spec.n, spec.d
    try:
        checks = [
            ("f_x", dyn.f_x(t, s, x, u), _fd_jacobian(lambda xx: dyn.f(t, s, xx, u), x, True)),
            ("g_x", dyn.g_x(t, s, x, u), _fd_jacobian(lambda xx: dyn.g(t, s, xx, u), x, True)),
            ("l_x", cost.l_x(t, x, u), _fd_jacobian(lambda xx: cost.l(t, xx, u), x, False)),
        ]
        if dyn.f_u is not None:
            checks.append(("f_u", dyn.f_u(t, s, x, u), _fd_jacobian(lambda uu: dyn.f(t, s, x, uu), u, True)))
        if dyn.g_u is not None:
            checks.append(("g_u", dyn.g_u(t, s, x, u), _fd_jacobian(lambda uu: dyn.g(t, s, x, uu), u, True)))
        if cost.l_u is not None:
            checks.append(("l_u", cost.l_u(t, x, u), _fd_jacobian(lambda uu: cost.l(t, x, uu), u, False)))
        for i, con in enumerate(spec.inequalities):
            checks.append((f"G_x[{con.label or i}]", con.G_x(t, x),
                           _fd_jacobian(lambda xx, c=con: c.G(t, xx), x, False)))
        x0p = spec.x0 + rng.standard_normal((probes, n))
        xTp = spec.x0 + rng.standard_normal((probes, n))
        for k in range(probes):
            a, b = x0p[k:k + 1], xTp[k:k + 1]
            checks.append(("h_x0", cost.h_x0(a[0], b[0]),
                           tuple(v[0] for v in _fd_jacobian(lambda z: np.array([cost.h(zz, b[0]) for zz in z]), a, False))))
            checks.append(("h_x", cost.h_x(a[0], b[0]),
                           tuple(v[0] for v in _fd_jacobian(lambda z: np.array([cost.h(a[0], zz) for zz in z]), b, False))))
    except Exception as exc:  # user callables may fail in arbitrary ways
        return [f"evaluating problem callables failed: {type(exc).__name__}: {exc}"]

    reported = set()
    for name, analytic, fd in checks:
        err = _rel_err(analytic, fd)
        if not err <= FD_REL_TOL and name not in reported:
            reported.add(name)
            out.append(f"{name} disagrees with central finite differences (max rel err {err:.3e})")
    for name, fn, shape in (("f", dyn.f, (probes, n)), ("g", dyn.g, (probes, n))):
        val = np.asarray(fn(t, s, x, u), float)
        if val.shape != shape or not np.all(np.isfinite(val)):
            out.append(f"{name} must return finite values of shape {shape}, got {val.shape}")
    return out
