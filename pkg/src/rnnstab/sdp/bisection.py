"""Bisection for quasi-convex (generalized eigenvalue) programs."""

from __future__ import annotations

import logging
from typing import Callable

from ..errors import NoFeasibleUpperBound, NumericalFailure
from .solve import FEASIBLE, SolverResult

log = logging.getLogger(__name__)

__all__ = ["solve_gevp_bisection"]


def solve_gevp_bisection(build: Callable[[float], SolverResult], delta_lo=1e-6, delta_hi=1.0,
                         tol=1e-4, cap=2.0 ** 40):
    """Smallest ``delta`` for which ``build(delta)`` is feasible.

    ``build`` maps a value of the bisection parameter to a solved
    :class:`SolverResult`.  The upper end is doubled from ``delta_hi`` until
    feasible (at most up to ``cap``).  Bisection stops when the bracket is
    within ``tol`` relative; the assignment returned is the one at the upper
    end of the final bracket, i.e. at most ``delta* (1 + tol)``.  One extra
    probe between that end and the first feasible upper value checks that
    feasibility is monotone.

    Returns:
        ``(delta, result, trace)`` with ``trace`` the list of probed
        ``(delta, feasible)`` pairs.

    Raises:
        NoFeasibleUpperBound: when no feasible ``delta <= cap`` is found.
        NumericalFailure: when the probed feasibility is not monotone.
    """
    trace = []

    def probe(d):
        res = build(d)
        ok = res.status == FEASIBLE
        trace.append((d, ok))
        log.debug("bisection probe delta=%.6g -> %s", d, res.status)
        return ok, res

    hi = float(delta_hi)
    ok, best = probe(hi)
    while not ok:
        if hi >= cap:
            raise NoFeasibleUpperBound(f"no feasible value up to {cap:.3g}")
        hi = min(2.0 * hi, cap)
        ok, best = probe(hi)
    top = hi
    lo = float(delta_lo)
    if lo >= hi:
        return hi, best, trace
    ok_lo, res_lo = probe(lo)
    if ok_lo:
        return lo, res_lo, trace
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi) if hi < 1e3 * max(lo, 1e-300) else (lo * hi) ** 0.5
        ok, res = probe(mid)
        if ok:
            hi, best = mid, res
        else:
            lo = mid
    if top > hi * (1.0 + 10 * tol):
        # bisection alone never probes above a feasible point; one extra
        # probe inside (hi, top) gives the monotonicity check something to see
        probe((hi * top) ** 0.5)
    _check_monotone(trace)
    return hi, best, trace


def _check_monotone(trace):
    feas = sorted(trace)
    seen_ok = False
    for d, ok in feas:
        if ok:
            seen_ok = True
        elif seen_ok:
            raise NumericalFailure(
                f"non-monotone feasibility: infeasible at delta={d:.6g} above a feasible value",
                trace=feas)
