"""Command-line entry point: load problem configs, run solvers, write CSV/JSON output.

Exit codes: 0 on success, 2 when an iteration does not converge or a
certificate fails its tolerances (outputs are still written), 1 on input
errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import _kernels
from .core_types import (Cost, Dynamics, InequalityConstraint, LQCost, MultiplierSet, ProblemSpec,
                         SolveReport, TerminalConstraint, TimeGrid, Trajectory, validate_spec)
from .errors import NonConvergence, SchemaError, SvocError
from .expr_dsl import Expr, ParseError, differentiate, evaluate, parse
from .forward_solver import ForwardOptions, forward_residual, solve_forward
from .mp_solver import (SolverOptions, check_certificate, solve_constrained, solve_lq_shooting,
                        solve_unconstrained)
from .adjoint_variational import discrete_cost
from . import problems

CONVERGENCE_NS = (250, 500, 1000, 2000)


# ---------------------------------------------------------------------------
# config loading

def _get(doc: dict, key: str, pointer: str, kind=None):
    if not isinstance(doc, dict):
        raise SchemaError(pointer, "expected an object")
    if key not in doc:
        raise SchemaError(f"{pointer}/{key}", "required field is missing")
    value = doc[key]
    if kind == "number" and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise SchemaError(f"{pointer}/{key}", "expected a number")
    if kind == "integer" and (isinstance(value, bool) or not isinstance(value, int)):
        raise SchemaError(f"{pointer}/{key}", "expected an integer")
    if kind == "string" and not isinstance(value, str):
        raise SchemaError(f"{pointer}/{key}", "expected a string")
    return value


def _vector(value, length: int, pointer: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != length:
        raise SchemaError(pointer, f"expected a list of {length} numbers")
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{pointer}/{i}", "expected a number")
    return np.asarray(value, float)


def _matrix(value, rows: int, cols: int, pointer: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != rows:
        raise SchemaError(pointer, f"expected a {rows} x {cols} matrix (list of rows)")
    return np.stack([_vector(r, cols, f"{pointer}/{i}") for i, r in enumerate(value)]).reshape(rows, cols)


def _expr(value, pointer: str, allowed: set) -> Expr:
    if not isinstance(value, str):
        raise SchemaError(pointer, "expected an expression string")
    try:
        e = parse(value)
    except ParseError as exc:
        exc.pointer = pointer
        raise
    bad = sorted(e.variables - allowed)
    if bad:
        raise SchemaError(pointer, f"variable(s) not allowed here: {', '.join(bad)}")
    return e


def _names(prefix: str, count: int, suffix: str = "") -> list:
    return [f"{prefix}{i + 1}{suffix}" for i in range(count)]


def _col(value, m):
    return np.broadcast_to(np.asarray(value, float), (m,))


def _vector_function(exprs, with_s: bool):
    """(t, s, x, u) -> (m, n) from one expression per row."""
    def fn(t, s, x, u):
        env = {"t": np.asarray(t, float), "s": np.asarray(s, float), "x": x, "u": u}
        m = len(x)
        return np.stack([_col(evaluate(e, env), m) for e in exprs], axis=1)
    return fn


def _jacobian_function(table):
    """(t, s, x, u) -> (m, rows, cols) from a table of derivative expressions."""
    rows, cols = len(table), len(table[0])

    def fn(t, s, x, u):
        env = {"t": np.asarray(t, float), "s": np.asarray(s, float), "x": x, "u": u}
        m = len(x)
        out = np.empty((m, rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[:, i, j] = _col(evaluate(table[i][j], env), m)
        return out
    return fn


def _diff_table(exprs, names):
    return [[differentiate(e, v) for v in names] for e in exprs]


def _constant_value(e: Expr) -> float | None:
    return evaluate(e, {}) if e.is_constant else None


def _expr_dynamics(doc, n, d, pointer) -> Dynamics:
    allowed = {"t", "s", *_names("x", n), *_names("u", d)}
    f = [_expr(v, f"{pointer}/f/{i}", allowed) for i, v in enumerate(_list(doc, "f", n, pointer))]
    g = [_expr(v, f"{pointer}/g/{i}", allowed) for i, v in enumerate(_list(doc, "g", n, pointer))]
    xs, us = _names("x", n), _names("u", d)
    fx, gx, fu, gu = _diff_table(f, xs), _diff_table(g, xs), _diff_table(f, us), _diff_table(g, us)
    uses_t = any("t" in e.variables for e in f + g)
    affine = all(not (e.variables & set(us)) for row in fu + gu for e in row)
    tables = [fx, gx, fu, gu]
    consts = [[[_constant_value(e) for e in row] for row in tab] for tab in tables]
    linear = all(v is not None for tab in consts for row in tab for v in row)
    if linear:
        zero = {"t": 0.0, "s": 0.0, "x": np.zeros(n), "u": np.zeros(d)}
        linear = all(evaluate(e, zero) == 0.0 for e in f + g) and not uses_t and not any(
            "s" in e.variables for e in f + g)
    if linear:
        A1, A2, B1, B2 = (np.asarray(c, float) for c in consts)
        return Dynamics.from_matrices(A1, A2, B1, B2)
    return Dynamics(f=_vector_function(f, True), g=_vector_function(g, True),
                    f_x=_jacobian_function(fx), g_x=_jacobian_function(gx),
                    f_u=_jacobian_function(fu), g_u=_jacobian_function(gu),
                    state_dim=n, control_dim=d, outer_time_dependent=uses_t, control_affine=affine)


def _list(doc, key, length, pointer):
    value = _get(doc, key, pointer)
    if not isinstance(value, list) or len(value) != length:
        raise SchemaError(f"{pointer}/{key}", f"expected a list of {length} entries")
    return value


def _expr_cost(doc, n, d, pointer) -> Cost:
    xs, us = _names("x", n), _names("u", d)
    l = _expr(_get(doc, "l", pointer), f"{pointer}/l", {"t", *xs, *us})
    h = _expr(_get(doc, "h", pointer), f"{pointer}/h", {*_names("x", n, "_0"), *_names("x", n, "_T")})
    lx = [differentiate(l, v) for v in xs]
    lu = [differentiate(l, v) for v in us]
    h0 = [differentiate(h, v) for v in _names("x", n, "_0")]
    hT = [differentiate(h, v) for v in _names("x", n, "_T")]
    hess = [[_constant_value(differentiate(a, v)) for v in us] for a in lu]
    R = np.asarray(hess, float) if all(v is not None for row in hess for v in row) else None

    def env_l(t, x, u):
        return {"t": np.asarray(t, float), "x": x, "u": u}

    def env_h(x0, xT):
        return {"x0": np.asarray(x0, float), "xT": np.asarray(xT, float)}

    return Cost(
        l=lambda t, x, u: _col(evaluate(l, env_l(t, x, u)), len(x)).copy(),
        l_x=lambda t, x, u: np.stack([_col(evaluate(e, env_l(t, x, u)), len(x)) for e in lx], axis=1),
        l_u=lambda t, x, u: np.stack([_col(evaluate(e, env_l(t, x, u)), len(x)) for e in lu], axis=1),
        h=lambda x0, xT: float(evaluate(h, env_h(x0, xT))),
        h_x0=lambda x0, xT: np.array([float(evaluate(e, env_h(x0, xT))) for e in h0]),
        h_x=lambda x0, xT: np.array([float(evaluate(e, env_h(x0, xT))) for e in hT]),
        control_hessian=R,
    )


def _terminal(doc, n, pointer) -> TerminalConstraint:
    kind = _get(doc, "kind", pointer, "string")
    if kind == "none":
        return TerminalConstraint.none()
    if kind == "point":
        return TerminalConstraint.point(_vector(_get(doc, "x0", pointer), n, f"{pointer}/x0"),
                                        _vector(_get(doc, "xT", pointer), n, f"{pointer}/xT"))
    if kind == "box":
        lo = _vector(_get(doc, "lower", pointer), 2 * n, f"{pointer}/lower")
        hi = _vector(_get(doc, "upper", pointer), 2 * n, f"{pointer}/upper")
        if np.any(lo > hi):
            raise SchemaError(pointer, "box lower bound exceeds upper bound")
        return TerminalConstraint.box(lo, hi)
    raise SchemaError(f"{pointer}/kind", "expected 'none', 'point' or 'box'")


def _inequality(doc, i, n, pointer) -> InequalityConstraint:
    xs = _names("x", n)
    G = _expr(_get(doc, "G", pointer), f"{pointer}/G", {"t", *xs})
    Gx = [differentiate(G, v) for v in xs]
    label = doc.get("label", f"G{i + 1}")
    if not isinstance(label, str):
        raise SchemaError(f"{pointer}/label", "expected a string")

    def env(t, x):
        return {"t": np.asarray(t, float), "x": x}

    return InequalityConstraint(
        G=lambda t, x: _col(evaluate(G, env(t, x)), len(x)).copy(),
        G_x=lambda t, x: np.stack([_col(evaluate(e, env(t, x)), len(x)) for e in Gx], axis=1),
        label=label,
    )


def problem_from_dict(doc: dict, name: str = "") -> ProblemSpec:
    """Build and validate a ProblemSpec from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise SchemaError("", "top level must be an object")
    alpha = float(_get(doc, "alpha", "", "number"))
    T = float(_get(doc, "T", "", "number"))
    N = _get(doc, "N", "", "integer")
    n = _get(doc, "state_dim", "", "integer")
    d = _get(doc, "control_dim", "", "integer")
    if n < 1 or d < 1:
        raise SchemaError("/state_dim" if n < 1 else "/control_dim", "dimension must be positive")
    if not 0.0 < alpha < 1.0:
        raise SchemaError("/alpha", "alpha must lie in (0, 1)")
    try:
        grid = TimeGrid(T, N)
    except ValueError as exc:
        raise SchemaError("/T" if "T" in str(exc) else "/N", str(exc)) from exc

    dyn_doc = _get(doc, "dynamics", "")
    kind = _get(dyn_doc, "kind", "/dynamics", "string")
    if kind == "expr":
        dynamics = _expr_dynamics(dyn_doc, n, d, "/dynamics")
    elif kind == "lq":
        mats = [_matrix(_get(dyn_doc, k, "/dynamics"), n, c, f"/dynamics/{k}")
                for k, c in (("A1", n), ("A2", n), ("B1", d), ("B2", d))]
        dynamics = Dynamics.from_matrices(*mats)
    else:
        raise SchemaError("/dynamics/kind", "expected 'expr' or 'lq'")

    cost_doc = _get(doc, "cost", "")
    kind = _get(cost_doc, "kind", "/cost", "string")
    if kind == "expr":
        cost = _expr_cost(cost_doc, n, d, "/cost")
    elif kind == "lq":
        Q = _matrix(_get(cost_doc, "Q", "/cost"), n, n, "/cost/Q")
        R = _matrix(_get(cost_doc, "R", "/cost"), d, d, "/cost/R")
        M = _matrix(_get(cost_doc, "M", "/cost"), n, n, "/cost/M")
        cost = Cost.quadratic(Q, R, M)
    else:
        raise SchemaError("/cost/kind", "expected 'expr' or 'lq'")

    terminal = _terminal(doc["terminal"], n, "/terminal") if "terminal" in doc else TerminalConstraint.none()
    ineq_doc = doc.get("inequalities", [])
    if not isinstance(ineq_doc, list):
        raise SchemaError("/inequalities", "expected a list")
    inequalities = tuple(_inequality(c, i, n, f"/inequalities/{i}") for i, c in enumerate(ineq_doc))
    bounds = None
    if "control_bounds" in doc:
        b = doc["control_bounds"]
        lo = _vector(_get(b, "lower", "/control_bounds"), d, "/control_bounds/lower")
        hi = _vector(_get(b, "upper", "/control_bounds"), d, "/control_bounds/upper")
        bounds = (lo, hi)
    x0 = _vector(_get(doc, "x0", ""), n, "/x0")
    spec = ProblemSpec(alpha=alpha, grid=grid, dynamics=dynamics, cost=cost, x0=x0, terminal=terminal,
                       inequalities=inequalities, control_bounds=bounds, name=doc.get("name", name))
    diagnostics = validate_spec(spec)
    if diagnostics:
        raise SchemaError("", "; ".join(diagnostics))
    return spec


def load_problem(path) -> ProblemSpec:
    """Read a JSON problem file; SchemaError carries a JSON pointer."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON at line {exc.lineno}, col {exc.colno}: {exc.msg}") from exc
    return problem_from_dict(doc, name=path.stem)


def bundled_config(name: str) -> Path:
    return Path(__file__).resolve().parent / "data" / f"{name}.json"


# ---------------------------------------------------------------------------
# output

def _fmt(v: float) -> str:
    return "%.12e" % v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def report_document(report: SolveReport, multipliers: MultiplierSet | None = None, extra: dict | None = None) -> dict:
    doc = report.to_dict()
    doc["history"] = report.history
    if multipliers is not None:
        doc["multipliers"] = {"lam": multipliers.lam, "xi": multipliers.xi,
                              "theta_T": multipliers.theta_T, "Theta": multipliers.Theta.T}
    if extra:
        doc.update(extra)
    return _jsonable(doc)


def write_outputs(out_dir, xbar, ubar, p, multipliers, report: SolveReport, extra: dict | None = None,
                  stem: str = "trajectories") -> tuple:
    """Write ``<stem>.csv`` and ``report.json``; byte-identical for identical inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = xbar.grid
    x, u = xbar.values, ubar.values
    pv = p.values if p is not None else np.zeros_like(x)
    theta = multipliers.theta if multipliers is not None else np.zeros((grid.N + 1, 0))
    n, d, m = x.shape[1], u.shape[1], theta.shape[1]
    header = ["t"] + _names("x", n) + _names("u", d) + _names("p", n) + _names("theta", m)
    table = np.column_stack([grid.nodes, x, u, pv, theta])
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    rep_path = None
    if report is not None:
        rep_path = out / ("report.json" if stem == "trajectories" else f"{stem}_report.json")
        doc = report_document(report, multipliers, extra)
        with open(rep_path, "w", newline="\n", encoding="ascii") as fh:
            fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, rep_path


def read_outputs(out_dir, spec: ProblemSpec):
    """Inverse of write_outputs: (xbar, ubar, p, multipliers)."""
    out = Path(out_dir)
    table = np.loadtxt(out / "trajectories.csv", delimiter=",", skiprows=1, ndmin=2)
    n, d, m = spec.n, spec.d, spec.m
    if table.shape != (spec.grid.N + 1, 1 + 2 * n + d + m):
        raise SchemaError("", f"trajectories.csv has shape {table.shape}, expected "
                              f"{(spec.grid.N + 1, 1 + 2 * n + d + m)}")
    x = table[:, 1:1 + n]
    u = table[:, 1 + n:1 + n + d]
    p = table[:, 1 + n + d:1 + 2 * n + d]
    doc = json.loads((out / "report.json").read_text())
    md = doc.get("multipliers", {})
    if m:
        Theta = np.asarray(md.get("Theta", np.zeros((m, spec.grid.N + 1))), float).reshape(m, -1).T
    else:
        Theta = np.zeros((spec.grid.N + 1, 0))
    mult = MultiplierSet(spec.grid, md.get("lam", 1.0), md.get("xi", np.zeros(2 * n)), Theta)
    grid = spec.grid
    return Trajectory(grid, x), Trajectory(grid, u), Trajectory(grid, p), mult


# ---------------------------------------------------------------------------
# commands

def _options(args) -> SolverOptions:
    fwd = ForwardOptions(tol_fp=args.tol_fp,
                         damping=args.damping if args.damping is not None else ForwardOptions.damping)
    kw = dict(forward=fwd, seed=args.seed, method=args.method)
    if args.tol_stat is not None:
        kw["tol_stat"] = args.tol_stat
    if args.max_iter is not None:
        kw["max_iter"] = args.max_iter
    if args.damping is not None:
        kw["damping"] = args.damping
    return SolverOptions(**kw)


def _override(spec: ProblemSpec, args, alpha=None) -> ProblemSpec:
    changes = {}
    a = alpha if alpha is not None else (args.alpha[0] if getattr(args, "alpha", None) else None)
    if a is not None:
        if not 0.0 < a < 1.0:
            raise SchemaError("/alpha", "alpha must lie in (0, 1)")
        changes["alpha"] = float(a)
    if getattr(args, "n", None) is not None:
        changes["grid"] = TimeGrid(spec.grid.T, args.n)
    return spec.with_(**changes) if changes else spec


def _summary(report: SolveReport, out) -> None:
    print(f"converged: {str(report.converged).lower()}  cost: {report.cost:.12e}  iterations: {report.iterations}")
    for k, v in sorted(report.residuals.items()):
        print(f"  {k}: {v:.3e}")
    if out is not None:
        print(f"wrote {out}")


def _run_solver(solver, spec, opts, out) -> int:
    try:
        res = solver(spec, opts=opts) if solver is solve_lq_shooting else solver(spec, None, opts)
        code = 0 if res.report.converged else 2
    except NonConvergence as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        res = exc.best
        code = 2
        if res is None:
            return code
    write_outputs(out, res.xbar, res.ubar, res.p, res.multipliers, res.report)
    _summary(res.report, out)
    return code


def _forward_result(spec: ProblemSpec, opts: SolverOptions):
    u = Trajectory(spec.grid, np.broadcast_to(spec.u_ref, (spec.grid.N + 1, spec.d)))
    x = solve_forward(spec, u, opts=opts.forward)
    res = {"state_residual": float(np.max(forward_residual(spec, u, x)))}
    report = SolveReport(cost=discrete_cost(spec, x, u), residuals=res, iterations=0,
                         converged=bool(res["state_residual"] <= 10 * opts.forward.tol_fp),
                         tolerances={"state_residual": 10 * opts.forward.tol_fp},
                         options={"forward": opts.as_dict()["forward"]})
    mult = MultiplierSet.zero(spec.grid, spec.n, spec.m)
    return x, u, mult, report


def cmd_forward(args) -> int:
    spec = _override(load_problem(args.config), args)
    opts = _options(args)
    x, u, mult, report = _forward_result(spec, opts)
    write_outputs(args.out, x, u, None, mult, report)
    _summary(report, args.out)
    return 0 if report.converged else 2


def cmd_solve(args) -> int:
    spec = _override(load_problem(args.config), args)
    return _run_solver(solve_unconstrained, spec, _options(args), args.out)


def cmd_solve_lq(args) -> int:
    spec = _override(load_problem(args.config), args)
    return _run_solver(solve_lq_shooting, spec, _options(args), args.out)


def cmd_solve_constrained(args) -> int:
    spec = _override(load_problem(args.config), args)
    return _run_solver(solve_constrained, spec, _options(args), args.out)


def cmd_check(args) -> int:
    spec = _override(load_problem(args.config), args)
    source = Path(args.source)
    x, u, p, mult = read_outputs(source, spec)
    report = check_certificate(spec, x, u, mult, p, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "check.json", "w", newline="\n", encoding="ascii") as fh:
        fh.write(json.dumps(report_document(report), indent=2, sort_keys=True) + "\n")
    _summary(report, out / "check.json")
    return 0 if report.converged else 2


def _demo_spec(name: str, alpha: float | None, N: int | None) -> ProblemSpec:
    if name == "example1":
        return problems.example1_spec(alpha if alpha is not None else 0.8, N or 1500)
    if name == "example2":
        return problems.example2_spec(alpha if alpha is not None else 0.5, N or 1000)
    raise SchemaError("", f"unknown demo {name!r}")


def cmd_demo(args) -> int:
    opts = _options(args)
    alphas = args.alpha or [None]
    if args.name == "figure1":
        N = args.n or 2000
        rows = []
        for a in (args.alpha or [0.1, 0.3, 0.5, 0.7, 0.9]):
            spec = problems.figure1_spec(a, N)
            x, u, mult, report = _forward_result(spec, opts)
            write_outputs(args.out, x, u, None, None, None, stem=f"figure1_alpha{a:g}")
            k = spec.grid.index_of(0.01) if N % 100 == 0 else int(round(0.01 / spec.grid.h))
            rows.append((a, abs(x.values[k, 0] - 1.0)))
        out = Path(args.out)
        with open(out / "figure1_summary.csv", "w", newline="\n", encoding="ascii") as fh:
            fh.write("alpha,deviation_at_0.01\n")
            for a, dev in rows:
                fh.write(f"{_fmt(a)},{_fmt(dev)}\n")
        for a, dev in rows:
            print(f"alpha={a:g}  |x(0.01) - 1| = {dev:.6e}")
        print(f"wrote {out}")
        return 0
    code = 0
    for a in alphas:
        spec = _demo_spec(args.name, a, args.n)
        out = Path(args.out) if len(alphas) == 1 else Path(args.out) / f"alpha{a:g}"
        solver = solve_constrained if args.name == "example1" else solve_unconstrained
        code = max(code, _run_solver(solver, spec, opts, out))
    return code


def cmd_convergence(args) -> int:
    opts = _options(args)
    target = args.target
    alpha = args.alpha[0] if args.alpha else None

    def spec_for(N):
        if target == "figure1":
            return problems.figure1_spec(alpha if alpha is not None else 0.5, N)
        if target == "caputo":
            a = alpha if alpha is not None else 0.5
            return ProblemSpec(alpha=a, grid=TimeGrid(1.0, N), dynamics=problems.caputo_to_volterra(-1.0, a),
                               cost=problems.zero_cost(1), x0=np.array([1.0]), name="caputo")
        base = load_problem(target)
        return _override(base, args, alpha).with_(grid=TimeGrid(base.grid.T, N))

    sols = {}
    for N in CONVERGENCE_NS:
        spec = spec_for(N)
        u = np.broadcast_to(spec.u_ref, (N + 1, spec.d))
        sols[N] = solve_forward(spec, u, opts=opts.forward).values
    finest = CONVERGENCE_NS[-1]
    lines = ["N,h,error,order"]
    prev = None
    T = spec_for(CONVERGENCE_NS[0]).grid.T
    for N in CONVERGENCE_NS[:-1]:
        stride = finest // N
        err = float(np.max(np.abs(sols[N] - sols[finest][::stride])))
        order = np.log2(prev / err) if prev and err > 0 else float("nan")
        lines.append(f"{N},{_fmt(T / N)},{_fmt(err)},{'nan' if not np.isfinite(order) else f'{order:.3f}'}")
        prev = err
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w", newline="\n", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=float, action="append", help="singularity order (repeatable for demos)")
    common.add_argument("--n", type=int, help="number of grid intervals")
    common.add_argument("--tol-fp", type=float, default=1e-10, help="forward inner-iteration tolerance")
    common.add_argument("--tol-stat", type=float, help="stationarity tolerance of the control iteration")
    common.add_argument("--max-iter", type=int, help="iteration cap of the control iteration")
    common.add_argument("--damping", type=float, help="damping of the relaxed iterations")
    common.add_argument("--method", choices=["newton", "sweep"], default="newton")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(prog="svoc", description="Optimal control of singular Volterra equations")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (("forward", cmd_forward, "solve the state equation for the reference control"),
                           ("solve", cmd_solve, "unconstrained maximum-principle solve"),
                           ("solve-lq", cmd_solve_lq, "linear-quadratic shooting"),
                           ("solve-constrained", cmd_solve_constrained, "terminal and state constraints")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("config")
        p.set_defaults(func=fn)
    p = sub.add_parser("check", parents=[common], help="re-check a written certificate")
    p.add_argument("config")
    p.add_argument("source", help="directory holding trajectories.csv and report.json")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("demo", parents=[common], help="built-in examples")
    p.add_argument("name", choices=["example1", "example2", "figure1"])
    p.set_defaults(func=cmd_demo)
    p = sub.add_parser("convergence", parents=[common], help="error table over N = 250..2000")
    p.add_argument("target", help="'figure1', 'caputo' or a config path")
    p.set_defaults(func=cmd_convergence)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    threads = os.environ.get("SVOC_THREADS")
    if threads:
        try:
            _kernels.set_threads(int(threads))
        except ValueError:
            print(f"ignoring SVOC_THREADS={threads!r}", file=sys.stderr)
    config = getattr(args, "config", None) or getattr(args, "target", None)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
    except ParseError as exc:
        where = getattr(exc, "pointer", "")
        print(f"error: {config}: {where}: {exc}\n{exc.context()}", file=sys.stderr)
    except SchemaError as exc:
        print(f"error: {config}: {exc}", file=sys.stderr)
    except (SvocError, ValueError) as exc:
        print(f"error: {config}: {exc}", file=sys.stderr)
    return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
