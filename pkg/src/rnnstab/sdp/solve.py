"""Solver front end: status classification, residual verification, backends."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import NumericalFailure, UnsupportedObjective
from .ipm import IpmOptions, solve_ipm
from .problem import Compiled, Problem

log = logging.getLogger(__name__)

__all__ = ["SolverResult", "solve_feasibility", "solve_min_linear", "verify_assignment",
           "FEASIBLE", "INFEASIBLE", "MARGINAL", "NUMERICAL_FAILURE", "default_backend"]

FEASIBLE = "Feasible"
INFEASIBLE = "Infeasible"
MARGINAL = "Marginal"
NUMERICAL_FAILURE = "NumericalFailure"

# a Feasible result must have every assembled block above -RESIDUAL_TOL
RESIDUAL_TOL = 1e-8
RETRY_MAX_VARS = 1000
DEFAULT_BOX = 1e6


@dataclass
class SolverResult:
    """Outcome of a solve.

    Attributes:
        status: one of ``Feasible``, ``Infeasible``, ``Marginal``,
            ``NumericalFailure``.
        values: variable name to matrix value.
        block_min_eigs: smallest eigenvalue of every assembled LMI block
            (problem order, including 1x1 blocks).
        objective: objective value in the problem's own sense.
        t_star: phase I value ``max t`` when phase I was run.
    """

    status: str
    values: dict = field(default_factory=dict)
    block_min_eigs: list = field(default_factory=list)
    objective: Optional[float] = None
    t_star: Optional[float] = None
    iterations: int = 0
    backend: str = "ipm"
    message: str = ""
    trace: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.status == FEASIBLE

    def __getitem__(self, name):
        return self.values[name]

    def min_residual(self):
        return min(self.block_min_eigs) if self.block_min_eigs else np.inf


def default_backend():
    return os.environ.get("RNNSTAB_BACKEND", "ipm").strip().lower() or "ipm"


def verify_assignment(problem: Problem, values_by_var):
    """Smallest eigenvalue of each assembled block at the given values."""
    out = []
    for blk in problem.blocks:
        z = blk.value(values_by_var)
        out.append(float(np.linalg.eigvalsh(z)[0]))
    return out


def _by_name(problem, values_by_var):
    return {v.name: values_by_var[v] for v in problem.vars}


def _finish(problem, vals, status, **kw):
    eigs = verify_assignment(problem, vals)
    if status == FEASIBLE and min(eigs, default=np.inf) < -RESIDUAL_TOL:
        status = MARGINAL
        kw["message"] = (kw.get("message", "") + " residual check failed: "
                         f"min eigenvalue {min(eigs):.3g}").strip()
    return SolverResult(status=status, values=_by_name(problem, vals), block_min_eigs=eigs, **kw)


def _phase1(problem, box, opts):
    comp = Compiled(problem, box=box, phase1=True)
    opts = replace(opts or IpmOptions(), stop_t=0.0)
    res = solve_ipm(comp, opts)
    t = float(res.x[comp.t_index])
    return comp, res, t


def _classify_phase1(problem, box, opts):
    comp, res, t = _phase1(problem, box, opts)
    margins = [b.margin() for b in problem.blocks if b.strict]
    eps_min = min(margins) if margins else 1e-7
    vals = problem.values_from(res.x[:comp.t_index])
    if t >= -1e-10:
        status = FEASIBLE
    elif t < -0.5 * eps_min and (res.status == "optimal"
                                 or (res.dinf < 1e-6 and res.dobj > 0.5 * eps_min)):
        # a stalled run only counts as infeasible when the dual bound t <= -dobj agrees
        status = INFEASIBLE
    else:
        status = MARGINAL
    if res.status != "optimal" and status == FEASIBLE and t < 1e-6:
        status = MARGINAL
    return _finish(problem, vals, status, t_star=t, iterations=res.iterations,
                   backend="ipm", trace=res.trace,
                   message=f"phase I t* = {t:.3e} ({res.status})")


def solve_feasibility(problem: Problem, backend=None, box=DEFAULT_BOX,
                      opts: IpmOptions | None = None) -> SolverResult:
    """Decide feasibility of the LMI set (objective ignored)."""
    backend = backend or default_backend()
    if backend != "ipm":
        from .cvxpy_backend import solve_cvxpy
        return solve_cvxpy(problem, backend, feasibility=True, box=box)
    return _classify_phase1(problem, box, opts)


def solve_min_linear(problem: Problem, backend=None, box=DEFAULT_BOX,
                     opts: IpmOptions | None = None) -> SolverResult:
    """Optimize the problem's objective over the LMI set.

    The reference backend runs the optimization directly; when it does not
    converge, a phase I solve decides between ``Infeasible`` and
    ``Marginal``.
    """
    backend = backend or default_backend()
    if problem.logdet is not None and backend == "ipm":
        raise UnsupportedObjective(
            "log-det objectives need the cvxpy backend (set RNNSTAB_BACKEND=cvxpy)")
    if backend != "ipm":
        from .cvxpy_backend import solve_cvxpy
        return solve_cvxpy(problem, backend, feasibility=False, box=box)
    if problem.objective is None:
        return solve_feasibility(problem, backend, box, opts)
    comp = Compiled(problem, box=box)
    base = opts or IpmOptions()
    res = None
    # a badly scaled optimum can stall from the default start; small problems
    # retry from larger starts and keep the best verified iterate
    scales = [base.init_scale]
    if comp.p <= RETRY_MAX_VARS:
        scales += [1e2 * base.init_scale, 1e4 * base.init_scale]
    for scale in scales:
        try:
            r = solve_ipm(comp, replace(base, init_scale=scale))
        except NumericalFailure as exc:
            log.debug("phase II failed (%s)", exc)
            continue
        if r.status == "optimal":
            vals = problem.values_from(r.x)
            obj = r.pobj if problem.sense == "min" else -r.pobj
            out = _finish(problem, vals, FEASIBLE, objective=obj, iterations=r.iterations,
                          backend="ipm", trace=r.trace)
            if out.status == FEASIBLE:
                return out
        if res is None or (_verified(problem, r) and
                           (not _verified(problem, res) or r.pobj < res.pobj)):
            res = r
        if r is res and r.gap < 1e-6 and _verified(problem, r):
            break
    ph = _classify_phase1(problem, box, opts)
    if ph.status == FEASIBLE and res is not None:
        # feasible but the optimization did not converge cleanly; return the
        # last iterate if it verifies, otherwise the phase I point
        vals = problem.values_from(res.x)
        eigs = verify_assignment(problem, vals)
        if min(eigs, default=np.inf) >= -RESIDUAL_TOL:
            obj = res.pobj if problem.sense == "min" else -res.pobj
            return SolverResult(FEASIBLE, _by_name(problem, vals), eigs, obj, ph.t_star,
                                res.iterations, "ipm", f"optimization {res.status}; "
                                "returning last verified iterate", res.trace)
        ph.status = MARGINAL
        ph.message += f"; optimization {res.status}"
    if ph.status == FEASIBLE:
        ph.objective = _objective_value(problem, ph.values)
    return ph


def _verified(problem, res):
    eigs = verify_assignment(problem, problem.values_from(res.x))
    return res.pinf < 1e-6 and min(eigs, default=np.inf) >= -RESIDUAL_TOL


def _objective_value(problem, values_by_name):
    if problem.objective is None:
        return None
    vals = {v: values_by_name[v.name] for v in problem.vars}
    return float(problem.objective.value(vals)[0, 0])
