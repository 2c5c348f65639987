"""Optional backend translating a :class:`Problem` to cvxpy.

Selected with ``RNNSTAB_BACKEND=cvxpy`` (default conic solver) or
``RNNSTAB_BACKEND=cvxpy:<SOLVER>`` (for example ``cvxpy:SCS``).  Supports
log-det objectives, which the reference interior-point method does not.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalFailure
from .expr import DIAG, RECT, SCALAR, SYM
from .problem import Problem

__all__ = ["solve_cvxpy"]


def _cp():
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise NumericalFailure("cvxpy backend requested but cvxpy is not installed") from exc
    return cp


def _expr(cp, aff, cvars):
    out = cp.Constant(aff.const) if np.any(aff.const) else None
    terms = []
    for t in aff.mat_terms:
        x = cvars[t.var]
        terms.append(t.left @ (x.T if t.trans else x) @ t.right)
    for t in aff.scal_terms:
        terms.append(cvars[t.var] * t.coef)
    for e in terms:
        out = e if out is None else out + e
    if out is None:
        out = cp.Constant(np.zeros(aff.shape))
    return out


def _build(problem: Problem, box, phase1):
    cp = _cp()
    cvars = {}
    for v in problem.vars:
        if v.kind == SYM:
            cvars[v] = cp.Variable(v.shape, symmetric=True, name=v.name)
        elif v.kind == DIAG:
            cvars[v] = cp.diag(cp.Variable(v.shape[0], name=v.name))
        elif v.kind == RECT:
            cvars[v] = cp.Variable(v.shape, name=v.name)
        else:
            cvars[v] = cp.Variable((1, 1), name=v.name)
    t = cp.Variable(name="phase1_t") if phase1 else None
    cons = []
    for blk in problem.blocks:
        nbl = len(blk.sizes)
        rows = []
        for i in range(nbl):
            row = []
            for j in range(nbl):
                if j <= i:
                    row.append(_expr(cp, blk.entries[i][j], cvars))
                else:
                    row.append(_expr(cp, blk.entries[j][i], cvars).T)
            rows.append(row)
        m = cp.bmat(rows) if nbl > 1 else rows[0][0]
        m = 0.5 * (m + m.T)
        shift = blk.margin()
        rhs = shift * np.eye(blk.size)
        if phase1:
            cons.append(m - rhs - t * np.eye(blk.size) >> 0)
        else:
            cons.append(m - rhs >> 0)
    if box is not None:
        for v, x in cvars.items():
            cons += [x <= box, x >= -box]
    if phase1:
        cons.append(t <= 1)
    return cp, cvars, t, cons


def _solver_name(backend):
    if ":" in backend:
        return backend.split(":", 1)[1].upper()
    return None


def solve_cvxpy(problem: Problem, backend="cvxpy", feasibility=False, box=1e6):
    from .solve import FEASIBLE, INFEASIBLE, MARGINAL, NUMERICAL_FAILURE, _finish

    solver = _solver_name(backend)
    if feasibility or (problem.objective is None and problem.logdet is None):
        cp, cvars, t, cons = _build(problem, box, phase1=True)
        prob = cp.Problem(cp.Maximize(t), cons)
        try:
            prob.solve(solver=solver)
        except cp.error.SolverError as exc:
            raise NumericalFailure(f"cvxpy solver error: {exc}") from exc
        if t.value is None:
            return _finish(problem, {v: np.zeros(v.shape) for v in problem.vars},
                           NUMERICAL_FAILURE, backend=backend, message=prob.status)
        tv = float(t.value)
        margins = [b.margin() for b in problem.blocks if b.strict] or [1e-7]
        status = FEASIBLE if tv >= -1e-9 else (INFEASIBLE if tv < -0.5 * min(margins) else MARGINAL)
        vals = {v: np.asarray(cvars[v].value, dtype=float).reshape(v.shape) for v in problem.vars}
        return _finish(problem, vals, status, t_star=tv, backend=backend,
                       message=f"{prob.status}; t* = {tv:.3e}")
    cp, cvars, _, cons = _build(problem, box, phase1=False)
    obj = 0
    if problem.objective is not None:
        obj = _expr(cp, problem.objective, cvars)[0, 0]
    if problem.logdet is not None:
        obj = obj + cp.log_det(cvars[problem.logdet.var])
    goal = cp.Maximize(obj) if problem.sense == "max" else cp.Minimize(obj)
    prob = cp.Problem(goal, cons)
    try:
        prob.solve(solver=solver)
    except cp.error.SolverError as exc:
        raise NumericalFailure(f"cvxpy solver error: {exc}") from exc
    if prob.status in ("infeasible", "infeasible_inaccurate"):
        return _finish(problem, {v: np.zeros(v.shape) for v in problem.vars}, INFEASIBLE,
                       backend=backend, message=prob.status)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        return _finish(problem, {v: np.zeros(v.shape) for v in problem.vars},
                       NUMERICAL_FAILURE, backend=backend, message=prob.status)
    vals = {v: np.asarray(cvars[v].value, dtype=float).reshape(v.shape) for v in problem.vars}
    return _finish(problem, vals, FEASIBLE, objective=float(prob.value), backend=backend,
                   message=prob.status)
