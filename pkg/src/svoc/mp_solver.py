"""Maximum-principle solvers and the certificate checker.

Everything here works on the discrete problem: the forward scheme of
``forward_solver``, its exact transpose from ``adjoint_variational`` and the
node-wise function

    Lambda_k(u) = (h/q_k) sum_{n>=k} [W[n,k] phat_n . f(t_n,t_k,x_k,u) + Q_n[k] phat_n . g(t_n,t_k,x_k,u)]
                  - lam l(t_k, x_k, u),

whose u-gradient is -(1/q_k) times the gradient of the (multiplier-augmented)
discrete cost with respect to u_k.  A control is stationary when it maximizes
Lambda_k at every node.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import _kernels
from .adjoint_variational import (AdjointConfig, AdjointSolution, Linearization, adjoint_residual,
                                  adjoint_solution, discrete_cost, linearize, terminal_coefficient,
                                  adjoint_sources)
from .core_types import MultiplierSet, ProblemSpec, SolveReport, TerminalConstraint, Trajectory, values_of
from .errors import GridError, InfeasibleGuess, NonConvergence, NonFiniteError, RNotPositive, SingularDiagonal
from .forward_solver import ForwardOptions, forward_residual, solve_forward

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

DEFAULT_TOLERANCES = {
    "adjoint_residual": 1e-9,
    "stationarity_residual": 1e-6,
    "transversality_residual": 1e-4,
    "slackness_residual": 1e-4,
    "terminal_violation": 1e-2,
    "inequality_violation": 1e-8,
    "max_condition_gap": 1e-8,
    "state_residual": 1e-8,
    "nontriviality_violation": 0.0,
    "nonnegativity_violation": 0.0,
}


@dataclass(frozen=True)
class SolverOptions:
    method: str = "newton"          # "newton" (Newton-Krylov) or "sweep" (damped successive approximation)
    tol_stat: float = 1e-9
    tol_change: float = 1e-8        # sweep only: stop on sup-node control change
    max_iter: int = 200
    damping: float = 0.5
    max_halvings: int = 40
    gmres_tol: float = 1e-6         # inexact Newton; the outer loop supplies the accuracy
    gmres_restart: int = 80
    gmres_maxiter: int = 5
    maximizer: str = "auto"         # "auto", "closed" or "golden"
    golden_tol: float = 1e-10
    sigma: float = 1.0              # projected-ascent step for Theta
    max_outer: int = 500
    xi_mode: str = "secant"         # "secant" or "zero"
    theta_accel: str = "anderson"   # "anderson" or "none": mixing of the projected-ascent iterates
    anderson_memory: int = 8
    tol_terminal: float = 1e-8      # relative target of the xi update (tol_F is the acceptance bound)
    seed: int = 0
    forward: ForwardOptions = field(default_factory=ForwardOptions)

    def __post_init__(self):
        if self.method not in ("newton", "sweep"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.maximizer not in ("auto", "closed", "golden"):
            raise ValueError(f"unknown maximizer {self.maximizer!r}")
        if self.xi_mode not in ("secant", "zero"):
            raise ValueError(f"unknown xi_mode {self.xi_mode!r}")
        if self.theta_accel not in ("anderson", "none"):
            raise ValueError(f"unknown theta_accel {self.theta_accel!r}")
        if self.anderson_memory < 1:
            raise ValueError("anderson_memory must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["forward"] = dataclasses.asdict(self.forward)
        return d


@dataclass(frozen=True, eq=False)
class SolveResult:
    ubar: Trajectory
    xbar: Trajectory
    p: Trajectory
    multipliers: MultiplierSet
    report: SolveReport


# ---------------------------------------------------------------------------
# terminal projection

@dataclass(frozen=True)
class ProjectionResult:
    projection: np.ndarray
    distance: float
    normal_vector: np.ndarray


def project_terminal(point, F: TerminalConstraint) -> ProjectionResult:
    """Euclidean projection onto a point or box set; the residual is a normal vector."""
    z = np.asarray(point, float).ravel()
    if F.kind == "none":
        proj = z.copy()
    else:
        if z.size != F.lower.size:
            raise ValueError(f"point has {z.size} entries, the set lives in R^{F.lower.size}")
        proj = np.clip(z, F.lower, F.upper)
    normal = z - proj
    return ProjectionResult(proj, float(np.linalg.norm(normal)), normal)


# ---------------------------------------------------------------------------
# Lambda

class HamiltonianEvaluator:
    """Node-wise Lambda_k(u) for a fixed state, adjoint and multiplier set."""

    def __init__(self, spec: ProblemSpec, lin: Linearization, phat: np.ndarray, mult: MultiplierSet):
        self.spec = spec
        self.lin = lin
        self.x = lin.x
        self.phat = np.asarray(phat, float)
        self.lam = mult.lam
        self.mult = mult
        grid = spec.grid
        self.t = grid.nodes
        self.q = grid.trapezoid_weights
        W = lin.weights
        if not spec.dynamics.outer_time_dependent:
            self.Pf, self.Pg = _kernels.tail_sums(W.a, W.b0, grid.h, self.phat, self.q)
        else:
            N1 = grid.N + 1
            i, j = np.tril_indices(N1)
            keep = i > 0
            self._i, self._j = i[keep], j[keep]
            Qd = np.where(self._j == 0, 0.5 * grid.h, np.where(self._i == self._j, 0.5 * grid.h, grid.h))
            scale = grid.h / self.q[self._j]
            self._wf = scale * W.w[self._i, self._j]
            self._wg = scale * Qd

    @classmethod
    def from_adjoint(cls, spec: ProblemSpec, sol: AdjointSolution, mult: MultiplierSet):
        return cls(spec, sol.lin, sol.phat, mult)

    def memory_values(self, U: np.ndarray) -> np.ndarray:
        """Lambda_k(U_k) + lam l(t_k, x_k, U_k) for every node."""
        dyn = self.spec.dynamics
        t, x = self.t, self.x
        if not dyn.outer_time_dependent:
            return (np.einsum("ks,ks->k", self.Pf, dyn.f(t, t, x, U))
                    + np.einsum("ks,ks->k", self.Pg, dyn.g(t, t, x, U)))
        i, j = self._i, self._j
        fv = dyn.f(t[i], t[j], x[j], U[j])
        gv = dyn.g(t[i], t[j], x[j], U[j])
        contrib = self._wf * np.einsum("ps,ps->p", fv, self.phat[i]) + self._wg * np.einsum("ps,ps->p", gv, self.phat[i])
        return np.bincount(j, weights=contrib, minlength=len(t))

    def values(self, U) -> np.ndarray:
        U = np.asarray(U, float).reshape(len(self.t), self.spec.d)
        return self.memory_values(U) - self.lam * self.spec.cost.l(self.t, self.x, U)

    def eval_lambda(self, t: float, x, u) -> float:
        """Lambda at node time ``t`` for state value ``x`` and control ``u``."""
        k = self.spec.grid.index_of(t)
        u = np.atleast_1d(np.asarray(u, float))
        lo, hi = self.spec.control_bounds
        if u.shape != (self.spec.d,):
            raise ValueError(f"control must have {self.spec.d} entries")
        if np.any(u < lo) or np.any(u > hi):
            raise ValueError("control outside control_bounds")
        saved = self.x
        try:
            xs = saved.copy()
            xs[k] = np.atleast_1d(np.asarray(x, float))
            self.x = xs
            U = np.broadcast_to(u, (len(self.t), self.spec.d)).copy()
            return float(self.values(U)[k])
        finally:
            self.x = saved

    # -- maximization -----------------------------------------------------

    def _closed_form_available(self) -> bool:
        return self.spec.dynamics.control_affine and self.spec.cost.control_hessian is not None

    def linear_coefficients(self) -> np.ndarray:
        """beta_k with memory_values(u) = memory_values(0) + beta_k . u (control-affine dynamics)."""
        spec = self.spec
        dyn = spec.dynamics
        N1, d = len(self.t), spec.d
        if not dyn.outer_time_dependent and dyn.f_u is not None and dyn.g_u is not None:
            U0 = np.zeros((N1, d))
            fu = np.asarray(dyn.f_u(self.t, self.t, self.x, U0), float).reshape(N1, spec.n, d)
            gu = np.asarray(dyn.g_u(self.t, self.t, self.x, U0), float).reshape(N1, spec.n, d)
            return np.einsum("ksd,ks->kd", fu, self.Pf) + np.einsum("ksd,ks->kd", gu, self.Pg)
        base = self.memory_values(np.zeros((N1, d)))
        beta = np.empty((N1, d))
        for i in range(d):
            E = np.zeros((N1, d))
            E[:, i] = 1.0
            beta[:, i] = self.memory_values(E) - base
        return beta

    def _cost_linear_part(self) -> np.ndarray:
        spec = self.spec
        N1, d = len(self.t), spec.d
        U0 = np.zeros((N1, d))
        if spec.cost.l_u is not None:
            return np.asarray(spec.cost.l_u(self.t, self.x, U0), float).reshape(N1, d)
        R = np.asarray(spec.cost.control_hessian, float)
        l0 = spec.cost.l(self.t, self.x, U0)
        out = np.empty((N1, d))
        for i in range(d):
            E = np.zeros((N1, d))
            E[:, i] = 1.0
            out[:, i] = spec.cost.l(self.t, self.x, E) - l0 - 0.5 * R[i, i]
        return out

    def argmax(self, method: str = "auto", tol: float = 1e-10) -> np.ndarray:
        """Maximizer of Lambda_k over the control box at every node."""
        if method == "closed" or (method == "auto" and self._closed_form_available()):
            if not self._closed_form_available():
                raise ValueError("closed-form maximization needs control-affine dynamics and a quadratic cost")
            return self._argmax_closed()
        return self._argmax_golden(tol)

    def _argmax_closed(self) -> np.ndarray:
        lo, hi = self.spec.control_bounds
        beta = self.linear_coefficients() - self.lam * self._cost_linear_part()
        if self.lam == 0.0:
            # linear in u: bang-bang, ties toward the smallest-norm point
            return np.where(beta > 0, hi, np.where(beta < 0, lo, np.clip(0.0, lo, hi)))
        A = self.lam * np.asarray(self.spec.cost.control_hessian, float)
        u = np.linalg.solve(A, beta.T).T
        if np.all((u >= lo) & (u <= hi)):
            return u
        u = np.clip(u, lo, hi)
        d = self.spec.d
        if d == 1 or np.allclose(A, np.diag(np.diag(A))):
            return u
        # box QP by projected Gauss-Seidel (A is positive definite)
        diag = np.diag(A)
        for _ in range(500):
            prev = u.copy()
            for i in range(d):
                r = beta[:, i] - u @ A[i] + u[:, i] * diag[i]
                u[:, i] = np.clip(r / diag[i], lo[i], hi[i])
            if np.max(np.abs(u - prev)) <= 1e-15 * (1.0 + np.max(np.abs(u))):
                break
        return u

    def _argmax_golden(self, tol: float) -> np.ndarray:
        lo, hi = self.spec.control_bounds
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("golden-section maximization needs finite control bounds")
        N1, d = len(self.t), self.spec.d
        U = np.broadcast_to(np.clip(0.0, lo, hi), (N1, d)).copy()
        for _sweep in range(1 if d == 1 else 20):
            before = U.copy()
            for i in range(d):
                U = self._golden_coordinate(U, i, lo[i], hi[i], tol)
            if np.max(np.abs(U - before)) <= tol:
                break
        return U

    def _golden_coordinate(self, U, i, lo, hi, tol):
        N1 = U.shape[0]
        a = np.full(N1, lo)
        b = np.full(N1, hi)

        def val(v):
            V = U.copy()
            V[:, i] = v
            return self.values(V)

        c = b - GOLDEN * (b - a)
        e = a + GOLDEN * (b - a)
        fc, fe = val(c), val(e)
        while np.max(b - a) > tol:
            left = fc >= fe   # maximum lies in [a, e]
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            new_c = b - GOLDEN * (b - a)
            new_e = a + GOLDEN * (b - a)
            c_next = np.where(left, new_c, e)
            e_next = np.where(left, c, new_e)
            f_new = val(np.where(left, new_c, new_e))
            fc, fe = np.where(left, f_new, fe), np.where(left, fc, f_new)
            c, e = c_next, e_next
        # polish: compare with the endpoints, prefer smaller |u| on ties
        cands = [0.5 * (a + b), np.full(N1, lo), np.full(N1, hi), np.full(N1, np.clip(0.0, lo, hi))]
        vals = [val(v) for v in cands]
        best, bestv = cands[0], vals[0]
        for v, fv in zip(cands[1:], vals[1:]):
            scale = 1e-14 * (1.0 + np.abs(bestv))
            better = (fv > bestv + scale) | ((np.abs(fv - bestv) <= scale) & (np.abs(v) < np.abs(best)))
            best = np.where(better, v, best)
            bestv = np.where(better, fv, bestv)
        out = U.copy()
        out[:, i] = best
        return out


# ---------------------------------------------------------------------------
# evaluation pipeline: control -> state -> adjoint -> Lambda

@dataclass(frozen=True, eq=False)
class _Point:
    u: np.ndarray
    x: np.ndarray
    sol: AdjointSolution
    ev: HamiltonianEvaluator
    argmax: np.ndarray
    J: float             # multiplier-augmented cost being minimized

    @property
    def residual(self) -> np.ndarray:
        return self.argmax - self.u

    @property
    def stationarity(self) -> float:
        return float(np.max(np.abs(self.residual)))


def _lagrangian(spec: ProblemSpec, x: np.ndarray, u: np.ndarray, mult: MultiplierSet) -> float:
    J = mult.lam * discrete_cost(spec, x, u) if mult.lam != 1.0 else discrete_cost(spec, x, u)
    if spec.m:
        t = spec.grid.nodes
        q = spec.grid.trapezoid_weights
        for i, con in enumerate(spec.inequalities):
            J += float(q @ (mult.Theta[:, i] * con.G(t, x)))
    return J + float(mult.xi2 @ x[-1])


def _evaluate(spec, u, mult, opts: SolverOptions) -> _Point:
    x = solve_forward(spec, u, opts=opts.forward).values
    cfg = AdjointConfig(mult)
    sol = adjoint_solution(spec, x, u, cfg)
    ev = HamiltonianEvaluator.from_adjoint(spec, sol, mult)
    am = ev.argmax(opts.maximizer, opts.golden_tol)
    return _Point(u, x, sol, ev, am, _lagrangian(spec, x, u, mult))


def _clip(spec, u):
    lo, hi = spec.control_bounds
    return np.clip(u, lo, hi)


def _initial_control(spec: ProblemSpec, init) -> np.ndarray:
    if init is None:
        return np.broadcast_to(spec.u_ref, (spec.grid.N + 1, spec.d)).copy()
    return _clip(spec, values_of(init, spec.grid, spec.d).copy())


def _newton_direction(spec, pt: _Point, mult, opts: SolverOptions) -> np.ndarray:
    """Solve (I - D argmax) delta = residual with finite-difference products."""
    shape = pt.u.shape
    F0 = pt.residual.ravel()
    unorm = np.max(np.abs(pt.u), initial=0.0)

    def matvec(v):
        v = np.asarray(v).ravel()
        vn = np.max(np.abs(v))
        if vn == 0.0:
            return np.zeros_like(v)
        eps = 1e-7 * (1.0 + unorm) / vn
        up = (pt.u.ravel() + eps * v).reshape(shape)
        x = solve_forward(spec, up, opts=opts.forward).values
        sol = adjoint_solution(spec, x, up, AdjointConfig(mult))
        am = HamiltonianEvaluator.from_adjoint(spec, sol, mult).argmax(opts.maximizer, opts.golden_tol)
        Fp = (am - up).ravel()
        return -(Fp - F0) / eps

    n = F0.size
    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    delta, _info = gmres(op, F0, rtol=opts.gmres_tol, atol=0.0,
                         restart=min(opts.gmres_restart, n), maxiter=opts.gmres_maxiter)
    return delta.reshape(shape)


def _descends(cand: _Point, pt: _Point) -> bool:
    """J does not increase; changes below rounding count when stationarity improves."""
    if cand.J <= pt.J:
        return True
    return cand.J - pt.J <= 1e-14 * max(1.0, abs(pt.J)) and cand.stationarity < pt.stationarity


def _minimize(spec: ProblemSpec, u0: np.ndarray, mult: MultiplierSet, opts: SolverOptions):
    """Drive u to a fixed point of the argmax map with monotone descent of J."""
    pt = _evaluate(spec, u0, mult, opts)
    history = [{"iter": 0, "J": pt.J, "stationarity": pt.stationarity, "step": 1.0}]
    best = pt
    stalled = 0

    def small(point):
        return point.stationarity <= opts.tol_stat * max(1.0, float(np.max(np.abs(point.u), initial=0.0)))

    for it in range(1, opts.max_iter + 1):
        if small(pt):
            return pt, history, it - 1
        if opts.method == "newton":
            direction = _newton_direction(spec, pt, mult, opts)
            gamma = 1.0
        else:
            direction = pt.residual
            gamma = opts.damping
        accepted = None
        # an inexact Newton direction may fail to descend; give up on it early
        # rather than accept rounding-level steps along it
        halvings = opts.max_halvings if opts.method == "sweep" else min(opts.max_halvings, 20)
        for _ in range(halvings):
            trial = _clip(spec, pt.u + gamma * direction)
            try:
                cand = _evaluate(spec, trial, mult, opts)
            except (NonFiniteError, NonConvergence, SingularDiagonal):
                cand = None
            if cand is not None and _descends(cand, pt):
                accepted = cand
                break
            gamma *= 0.5
        if accepted is None and opts.method == "newton":
            # fall back to the relaxation direction, which is a descent direction
            gamma = opts.damping
            for _ in range(opts.max_halvings):
                cand = _evaluate(spec, _clip(spec, pt.u + gamma * pt.residual), mult, opts)
                if _descends(cand, pt):
                    accepted = cand
                    break
                gamma *= 0.5
        if accepted is None:
            # no descent left: the iterate sits at the rounding floor if it is already stationary
            if pt.stationarity <= DEFAULT_TOLERANCES["stationarity_residual"]:
                history.append({"iter": it, "J": pt.J, "stationarity": pt.stationarity, "step": 0.0})
                return pt, history, it
            break
        change = float(np.max(np.abs(accepted.u - pt.u)))
        pt = accepted
        history.append({"iter": it, "J": pt.J, "stationarity": pt.stationarity, "step": gamma})
        if pt.stationarity < 0.999 * best.stationarity:
            best = pt
            stalled = 0
        else:
            stalled += 1
            if stalled >= 5 and pt.stationarity <= DEFAULT_TOLERANCES["stationarity_residual"]:
                return pt, history, it
        if opts.method == "sweep" and change <= opts.tol_change:
            return pt, history, it
    if small(pt):
        return pt, history, len(history) - 1
    raise NonConvergence(f"control iteration stalled (stationarity {best.stationarity:.3e})",
                         residual=best.stationarity, best=best, history=history)


def _xi1_from_identity(spec: ProblemSpec, sol: AdjointSolution, x: np.ndarray, mult: MultiplierSet) -> np.ndarray:
    h_x0 = np.asarray(spec.cost.h_x0(x[0], x[-1]), float).ravel()
    h_x = np.asarray(spec.cost.h_x(x[0], x[-1]), float).ravel()
    return sol.integral() - mult.xi2 - mult.lam * (h_x0 + h_x)


def _finish(spec, pt: _Point, mult: MultiplierSet, opts: SolverOptions, history, iterations,
            tolerances, notes) -> SolveResult:
    xi1 = _xi1_from_identity(spec, pt.sol, pt.x, mult)
    mult = mult.replace(xi=np.concatenate([xi1, mult.xi2]))
    grid = spec.grid
    ubar, xbar = Trajectory(grid, pt.u), Trajectory(grid, pt.x)
    report = check_certificate(spec, xbar, ubar, mult, pt.sol.p, tolerances, seed=opts.seed, opts=opts)
    report.iterations = iterations
    report.history = history
    report.options = opts.as_dict()
    report.notes = list(notes) + report.notes
    return SolveResult(ubar, xbar, pt.sol.p, mult, report)


def solve_unconstrained(spec: ProblemSpec, init_control=None, opts: SolverOptions | None = None,
                        tolerances: dict | None = None) -> SolveResult:
    """Stationary control of the problem without terminal or state constraints (lam = 1)."""
    opts = opts or SolverOptions()
    if spec.terminal.kind != "none" or spec.m:
        raise ValueError("solve_unconstrained needs a problem without terminal set and inequalities")
    mult = MultiplierSet.zero(spec.grid, spec.n, 0)
    try:
        pt, history, iterations = _minimize(spec, _initial_control(spec, init_control), mult, opts)
    except NonConvergence as exc:
        if isinstance(exc.best, _Point):
            exc.best = _finish(spec, exc.best, mult, opts, exc.history, len(exc.history) - 1,
                               tolerances, ["best iterate of a non-converged run"])
            exc.best.report.converged = False
        raise
    return _finish(spec, pt, mult, opts, history, iterations, tolerances,
                   ["x0 is fixed; xi1 is the multiplier of the initial-state constraint"])


# ---------------------------------------------------------------------------
# LQ shooting

def _lq_data(spec: ProblemSpec):
    lin, lq = spec.dynamics.linear, spec.cost.lq
    if lin is None or lq is None:
        raise ValueError("solve_lq_shooting needs matrix dynamics and a quadratic cost")
    R = np.asarray(lq.R, float)
    if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0.0:
        raise RNotPositive("R must be symmetric positive definite")
    return lin, lq


def _lq_control(spec, x, mult):
    """Closed-form control R^{-1}(B1' Pf + B2' Pg) from the adjoint of state x."""
    lin, lq = spec.dynamics.linear, spec.cost.lq
    sol = adjoint_solution(spec, x, np.zeros((spec.grid.N + 1, spec.d)), AdjointConfig(mult))
    ev = HamiltonianEvaluator.from_adjoint(spec, sol, mult)
    rhs = ev.Pf @ lin.B1 + ev.Pg @ lin.B2
    return np.linalg.solve(np.asarray(lq.R, float), rhs.T).T, sol


def solve_lq_shooting(spec: ProblemSpec, opts: SolverOptions | None = None,
                      tolerances: dict | None = None) -> SolveResult:
    """Linear-quadratic problem by shooting on the coupled state/adjoint system.

    With Q = 0 the adjoint depends on the state only through x(T), so the
    unknown is x(T) and the shooting map is affine in it; it is assembled
    from n + 1 sweeps and solved exactly.  Otherwise GMRES is applied to the
    affine control map.  ``opts.method = 'sweep'`` runs the plain damped
    forward-backward iteration instead.
    """
    opts = opts or SolverOptions()
    lin, lq = _lq_data(spec)
    if spec.terminal.kind != "none" or spec.m:
        raise ValueError("solve_lq_shooting handles problems without terminal set and inequalities")
    mult = MultiplierSet.zero(spec.grid, spec.n, 0)
    grid, n, d = spec.grid, spec.n, spec.d
    N1 = grid.N + 1
    notes = []

    def control_of_state(x):
        return _lq_control(spec, x, mult)[0]

    def state_of_control(u):
        return solve_forward(spec, u, opts=opts.forward).values

    history = []
    if opts.method == "sweep":
        u = np.zeros((N1, d))
        for it in range(1, opts.max_iter + 1):
            x = state_of_control(u)
            new = control_of_state(x)
            change = float(np.max(np.abs(new - u)))
            history.append({"iter": it, "change": change})
            if not np.isfinite(change):
                raise NonConvergence("forward-backward sweep diverged", best=None, history=history)
            u = (1.0 - opts.damping) * u + opts.damping * new
            if change <= opts.tol_change:
                break
        else:
            raise NonConvergence(f"forward-backward sweep did not converge (change {change:.3e})",
                                 residual=change, history=history)
        iterations = len(history)
    elif np.allclose(lq.Q, 0.0):
        # unknown x(T): build the affine map x(T) -> x_N(u(x(T)))
        def shoot(xT):
            x = np.zeros((N1, n))
            x[-1] = xT
            u = control_of_state(x)
            return u, state_of_control(u)

        u0, x0traj = shoot(np.zeros(n))
        base = x0traj[-1]
        S = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            S[:, i] = shoot(e)[1][-1] - base
        xT = np.linalg.solve(np.eye(n) - S, base)
        u, _ = shoot(xT)
        history.append({"iter": 1, "xT": xT.tolist()})
        iterations = 1
    else:
        # the control map is linear in the state and the state affine in the control
        x_free = state_of_control(np.zeros((N1, d)))

        def matvec(v):
            V = v.reshape(N1, d)
            return (V - control_of_state(state_of_control(V) - x_free)).ravel()

        op = LinearOperator((N1 * d, N1 * d), matvec=matvec, dtype=float)
        sol_u, info = gmres(op, control_of_state(x_free).ravel(), rtol=1e-13, atol=0.0,
                            restart=min(200, N1 * d), maxiter=20)
        u = sol_u.reshape(N1, d)
        history.append({"iter": 1, "gmres_info": int(info)})
        iterations = 1
    lo, hi = spec.control_bounds
    if np.any(u < lo) or np.any(u > hi):
        notes.append("closed-form control leaves control_bounds; bounds ignored by the shooting solve")
    x = state_of_control(u)
    sol = adjoint_solution(spec, x, u, AdjointConfig(mult))
    ev = HamiltonianEvaluator.from_adjoint(spec, sol, mult)
    pt = _Point(u, x, sol, ev, ev.argmax("closed"), discrete_cost(spec, x, u))
    return _finish(spec, pt, mult, opts, history, iterations, tolerances,
                   notes + ["shooting on the closed-form LQ control"])


# ---------------------------------------------------------------------------
# state constraints and terminal set

def _terminal_violation(spec: ProblemSpec, x: np.ndarray) -> float:
    if spec.terminal.kind == "none":
        return 0.0
    return project_terminal(np.concatenate([x[0], x[-1]]), spec.terminal).distance


def _G_values(spec: ProblemSpec, x: np.ndarray) -> np.ndarray:
    t = spec.grid.nodes
    if not spec.m:
        return np.zeros((len(t), 0))
    return np.stack([np.asarray(c.G(t, x), float) for c in spec.inequalities], axis=1)


class _Anderson:
    """Type-II Anderson mixing for the fixed-point map Theta -> max(0, Theta + sigma G).

    Plain projected ascent converges linearly with a rate set by the
    smallest eigenvalues of the (smoothing) map Theta -> G(x(Theta)), which
    is slow once a state constraint is active on an interval.  Mixed iterates
    are projected back onto Theta >= 0; the memory is cleared whenever the
    fixed-point residual grows.
    """

    def __init__(self, memory: int):
        self.memory = memory
        self.dz, self.dr = [], []
        self.last = None
        self.best = np.inf

    def step(self, z: np.ndarray, Tz: np.ndarray) -> np.ndarray:
        r = Tz - z
        norm = float(np.linalg.norm(r))
        if self.last is not None:
            self.dz.append(Tz - self.last[1])
            self.dr.append(r - self.last[2])
            if len(self.dz) > self.memory:
                self.dz.pop(0)
                self.dr.pop(0)
        if norm > 2.0 * self.best:
            self.dz, self.dr = [], []
        self.best = min(self.best, norm)
        self.last = (z, Tz, r)
        if not self.dz:
            return Tz
        DR = np.stack(self.dr, axis=1)
        gamma = np.linalg.lstsq(DR, r, rcond=1e-12)[0]
        return np.maximum(0.0, Tz - np.stack(self.dz, axis=1) @ gamma)


def solve_constrained(spec: ProblemSpec, init_control=None, opts: SolverOptions | None = None,
                      tolerances: dict | None = None) -> SolveResult:
    """Multiplier iteration for terminal-set and state-constrained problems (lam = 1).

    Inner solve: stationary control of the augmented cost
    J + sum_i int Theta_i G^i + xi_2 . x(T).  Outer updates:
    Theta_i <- max(0, Theta_i + sigma G^i(t, x(t))), and xi_2 by a secant
    step on x(T) - P(x(T)) for pinned coordinates or projected ascent for
    box faces.  xi_1 follows from the transversality identity.
    """
    opts = opts or SolverOptions()
    if spec.terminal.kind == "none" and not spec.m:
        return solve_unconstrained(spec, init_control, opts, tolerances)
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    grid, n = spec.grid, spec.n
    mult = MultiplierSet.zero(grid, n, spec.m)
    u = _initial_control(spec, init_control)
    term = spec.terminal
    pinned = np.zeros(n, bool)
    if term.kind != "none":
        pinned = term.lower[n:] == term.upper[n:]
    history = []
    jac = None
    prev = None
    inner_total = 0
    accel = _Anderson(opts.anderson_memory) if opts.theta_accel == "anderson" and spec.m else None
    notes = [f"projected ascent on Theta with sigma={opts.sigma}"
             + (f", Anderson mixing (memory {opts.anderson_memory})" if accel else ""),
             f"xi_2 update: {opts.xi_mode}; xi_1 from the transversality identity"]

    def inner(m, u_start):
        nonlocal inner_total
        try:
            pt, _h, its = _minimize(spec, u_start, m, opts)
        except (NonFiniteError, SingularDiagonal) as exc:
            raise InfeasibleGuess(f"forward solve failed: {exc}") from exc
        except NonConvergence as exc:
            if isinstance(exc.best, _Point):
                exc.best = _finish(spec, exc.best, m, opts, history, inner_total, tolerances,
                                   notes + ["best inner iterate of a non-converged run"])
                exc.best.report.converged = False
            raise
        inner_total += its
        return pt

    pt = inner(mult, u)
    for outer in range(1, opts.max_outer + 1):
        x = pt.x
        G = _G_values(spec, x)
        tv = _terminal_violation(spec, x)
        slack = float(np.sum(np.abs(grid.trapezoid_weights @ (G * mult.Theta)))) if spec.m else 0.0
        ineq = float(max(0.0, np.max(G, initial=-np.inf))) if spec.m else 0.0
        term_target = opts.tol_terminal * (1.0 + np.max(np.abs(x[-1])))
        gap = x[-1] - term.project(np.concatenate([x[0], x[-1]]))[n:] if term.kind != "none" else np.zeros(n)
        history.append({"outer": outer, "terminal_violation": tv, "inequality_violation": ineq,
                        "slackness_residual": slack, "stationarity": pt.stationarity,
                        "theta_T": mult.theta_T.tolist(), "xi2": mult.xi2.tolist()})
        # new multipliers
        Theta = np.maximum(0.0, mult.Theta + opts.sigma * G) if spec.m else mult.Theta
        xi2 = mult.xi2.copy()
        if opts.xi_mode == "secant" and term.kind != "none":
            e = x[-1] - np.where(pinned, term.lower[n:], x[-1])
            if np.any(pinned) and np.max(np.abs(e)) > term_target:
                if jac is None:
                    jac = np.eye(n)
                    for i in np.flatnonzero(pinned):
                        trial = mult.xi2.copy()
                        step = 1e-3 * (1.0 + abs(trial[i]))
                        trial[i] += step
                        pti = inner(mult.replace(xi=np.concatenate([mult.xi1, trial])), pt.u)
                        jac[:, i] = (pti.x[-1] - x[-1]) / step
                elif prev is not None:
                    dxi, dx = mult.xi2 - prev[0], x[-1] - prev[1]
                    # steps at the inner-solve noise level would corrupt the update
                    if np.linalg.norm(dxi) > 1e-6 * (1.0 + np.linalg.norm(mult.xi2)):
                        jac = jac + np.outer(dx - jac @ dxi, dxi) / (dxi @ dxi)
                P = np.flatnonzero(pinned)
                xi2[P] = mult.xi2[P] - np.linalg.solve(jac[np.ix_(P, P)], e[P])
            box = ~pinned
            if np.any(box):
                up = np.maximum(0.0, np.maximum(mult.xi2, 0.0) + opts.sigma * (x[-1] - term.upper[n:]))
                dn = np.maximum(0.0, np.maximum(-mult.xi2, 0.0) + opts.sigma * (term.lower[n:] - x[-1]))
                xi2[box] = (up - dn)[box]
        stop_theta = not spec.m or np.max(np.abs(Theta - mult.Theta)) <= 1e-10 * (1.0 + np.max(np.abs(Theta)))
        box_change = np.max(np.abs(xi2 - mult.xi2)[~pinned], initial=0.0)
        settled = opts.xi_mode == "zero" or (np.max(np.abs(gap), initial=0.0) <= term_target
                                             and box_change <= 1e-10 * (1.0 + np.max(np.abs(xi2), initial=0.0)))
        if (settled and stop_theta and tv <= tol["terminal_violation"]
                and ineq <= tol["inequality_violation"] and slack <= tol["slackness_residual"]):
            break
        prev = (mult.xi2.copy(), x[-1].copy())
        if accel is not None:
            Theta = accel.step(mult.Theta.ravel(), Theta.ravel()).reshape(Theta.shape)
        mult = mult.replace(Theta=Theta, xi=np.concatenate([mult.xi1, xi2]))
        pt = inner(mult, pt.u)
    else:
        res = _finish(spec, pt, mult, opts, history, inner_total, tolerances, notes)
        res.report.converged = False
        raise NonConvergence("multiplier iteration reached max_outer", best=res, history=history)
    return _finish(spec, pt, mult, opts, history, inner_total, tolerances, notes)


# ---------------------------------------------------------------------------
# certificate

def check_certificate(spec: ProblemSpec, xbar, ubar, multipliers: MultiplierSet, p,
                      tol_profile: dict | None = None, seed: int = 0,
                      opts: SolverOptions | None = None) -> SolveReport:
    """Re-evaluate every first-order condition for a candidate (x, u, multipliers, p).

    Residuals: adjoint re-substitution (relative), stationarity sup|argmax - u|,
    transversality (identity plus the normal-cone inequality on 100 samples of
    F, tested at the projection of (x0, x(T))), slackness sum_i |int G^i dtheta_i|,
    terminal and inequality violation, the 64-point maximum-condition gap,
    the forward-equation residual, nontriviality and nonnegativity.
    """
    opts = opts or SolverOptions()
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tol_profile or {})
    grid, n = spec.grid, spec.n
    x = values_of(xbar, grid, n)
    u = values_of(ubar, grid, spec.d)
    pv = values_of(p, grid, n)
    mult = multipliers
    res = {}
    notes = []
    lin = linearize(spec, x, u)
    c = terminal_coefficient(spec, x, mult)
    res["adjoint_residual"] = adjoint_residual(spec, x, u, pv, mult, lin)

    src = adjoint_sources(spec, x, u, mult)
    N, h = grid.N, grid.h
    Mt = np.eye(n) - lin.weights.c * lin.F[N, N].T - 0.5 * h * lin.H[N, N].T
    pi_N = np.linalg.solve(Mt, c - 0.5 * h * src[N])
    phat = pv.copy()
    phat[-1] = -pi_N / h
    ev = HamiltonianEvaluator(spec, lin, phat, mult)

    try:
        am = ev.argmax(opts.maximizer, opts.golden_tol)
        res["stationarity_residual"] = float(np.max(np.abs(am - u)))
    except ValueError as exc:
        res["stationarity_residual"] = float("nan")
        notes.append(f"stationarity not evaluated: {exc}")

    # maximum condition on a 64-point control grid around u
    lo, hi = spec.control_bounds
    base = ev.values(u)
    gap = -np.inf
    span = np.maximum(1.0, np.abs(u))
    for i in range(spec.d):
        a = np.maximum(lo[i], u[:, i] - span[:, i])
        b = np.minimum(hi[i], u[:, i] + span[:, i])
        for s in np.linspace(0.0, 1.0, 64):
            V = u.copy()
            V[:, i] = a + s * (b - a)
            gap = max(gap, float(np.max((ev.values(V) - base) / np.maximum(1.0, np.abs(base)))))
    res["max_condition_gap"] = max(gap, 0.0)

    # transversality
    q = grid.trapezoid_weights
    integral = q[:-1] @ pv[:-1] + c - pi_N
    h_x0 = np.asarray(spec.cost.h_x0(x[0], x[-1]), float).ravel()
    h_x = np.asarray(spec.cost.h_x(x[0], x[-1]), float).ravel()
    eq = float(np.linalg.norm(integral - mult.xi1 - mult.xi2 - mult.lam * (h_x0 + h_x)))
    vi = 0.0
    if spec.terminal.kind != "none":
        z = np.concatenate([x[0], x[-1]])
        zp = project_terminal(z, spec.terminal).projection
        ys = spec.terminal.sample(np.random.default_rng(seed), zp, 100)
        inner = (zp[None, :] - ys) @ mult.xi
        vi = float(max(0.0, -np.min(inner)))
    res["transversality_residual"] = eq + vi

    G = _G_values(spec, x)
    res["slackness_residual"] = float(np.sum(np.abs(q @ (G * mult.Theta)))) if spec.m else 0.0
    res["inequality_violation"] = float(max(0.0, np.max(G, initial=-np.inf))) if spec.m else 0.0
    res["terminal_violation"] = _terminal_violation(spec, x)
    res["state_residual"] = float(np.max(forward_residual(spec, u, x)) / max(1.0, np.max(np.abs(x))))
    norm = np.sqrt(mult.lam ** 2 + mult.xi @ mult.xi + np.sum(mult.theta_T ** 2))
    res["nontriviality_violation"] = 0.0 if norm > 0 else 1.0
    res["nonnegativity_violation"] = float(max(0.0, -mult.lam, -np.min(mult.Theta, initial=0.0)))

    ok = all(np.isfinite(res[k]) and res[k] <= tol[k] for k in res if k in tol)
    return SolveReport(cost=discrete_cost(spec, x, u), residuals=res, iterations=0, converged=bool(ok),
                       tolerances={k: tol[k] for k in res if k in tol}, notes=notes)
