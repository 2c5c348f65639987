"""H2 state-feedback design joined with the stability programs.

The performance channel is the linearization ``x+ = (F + G K) x + d``,
``z = (Q~ + R~ K) x``.  Its squared H2 norm is bounded by ``delta`` through

    [[S, S F^T + J^T G^T, S Q~^T + J^T R~^T],
     [F S + G J, S, 0],
     [Q~ S + R~ J, 0, eta I]] > 0,
    [[Gamma, eta I], [eta I, S]] >= 0,     trace(Gamma) < eta delta,

with ``K = J S^-1``.  For fixed ``delta`` these are LMIs; :func:`h2_gevp`
bisects on ``delta``.  The joint designs add the auxiliary-function or the
sector-narrowing stability blocks written in the variables ``(S, J)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .analysis import (GLOBAL, LAMBDA_MIN, REGIONAL_AUX, REGIONAL_NARROW,
                       StabilityCertificate, _add_basin_objective, _gamma_of, _ladder,
                       algorithm1, analyze_regional_aux, analyze_regional_narrow,
                       default_delta_h, select_best)
from .errors import Infeasible, NoFeasibleUpperBound, NumericalFailure, RnnStabError
from .model import (DesignMatrices, RnnModel, build_closed_loop, design_matrices, is_schur)
from .sdp import (FEASIBLE, Problem, scalar_times, solve_feasibility, solve_gevp_bisection,
                  solve_min_linear, trace)
from .sigmoid import SectorData, compute_theta, is_unbounded
from .verify import h2_norm_oracle

log = logging.getLogger(__name__)

__all__ = [
    "H2Weights", "FixedDelta", "Scalarized", "SynthesisResult", "H2Result",
    "benchmark_weights", "h2_gevp", "synthesize_global", "synthesize_aux",
    "synthesize_narrow", "synthesize_ladder", "refine_basin", "min_h_design",
]


@dataclass(frozen=True)
class H2Weights:
    """Performance output ``z = Q~ x + R~ u``."""

    q_tilde: np.ndarray
    r_tilde: np.ndarray

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_tilde, dtype=float))
        r = np.asarray(self.r_tilde, dtype=float)
        if r.ndim == 1:
            r = r.reshape(-1, 1)
        if q.shape[0] != r.shape[0]:
            raise ValueError(f"Q~ has {q.shape[0]} rows but R~ has {r.shape[0]}")
        if not np.any(q) and not np.any(r):
            warnings.warn("performance output is identically zero", RuntimeWarning, stacklevel=2)
        object.__setattr__(self, "q_tilde", q)
        object.__setattr__(self, "r_tilde", r)

    @property
    def pz(self):
        return self.q_tilde.shape[0]

    def check(self, n, m):
        if self.q_tilde.shape[1] != n or self.r_tilde.shape[1] != m:
            raise ValueError(f"weights shaped {self.q_tilde.shape}/{self.r_tilde.shape} "
                             f"do not fit n={n}, m={m}")

    def to_dict(self):
        return {"q_tilde": self.q_tilde.tolist(), "r_tilde": self.r_tilde.tolist()}


def benchmark_weights(wy, q_y=0.1, q_i=0.1, r_u=0.05) -> H2Weights:
    """Weights for the integrator-augmented ESN: ``z = [sqrt(q_y) y; sqrt(q_i) x_i; sqrt(r_u) u]``."""
    wy = np.atleast_2d(np.asarray(wy, dtype=float))
    ns = wy.shape[1]
    q = np.zeros((3, ns + 1))
    q[0, :ns] = math.sqrt(q_y) * wy[0]
    q[1, ns] = math.sqrt(q_i)
    r = np.array([[0.0], [0.0], [math.sqrt(r_u)]])
    return H2Weights(q, r)


@dataclass(frozen=True)
class FixedDelta:
    delta_bar: float


@dataclass(frozen=True)
class Scalarized:
    """Minimize ``w delta - gamma`` by an outer search over ``delta``."""

    w: float = 1.0
    rel_tol: float = 1e-3
    max_doublings: int = 20


Mode = Union[FixedDelta, Scalarized]


@dataclass
class H2Result:
    k: np.ndarray
    delta: float
    s: np.ndarray
    j: np.ndarray
    eta: float
    trace_gamma: float
    probes: list = field(default_factory=list)


@dataclass
class SynthesisResult:
    """Gain, H2 bound and basin measure of a joint design.

    Attributes:
        k: gain ``J S^-1``.
        delta: squared H2 bound (``sqrt(delta)`` bounds the norm).
        gamma: basin measure of ``certificate``.
        eta, trace_gamma: values of the H2 multipliers.
    """

    k: np.ndarray
    delta: float
    gamma: float
    certificate: StabilityCertificate
    eta: float
    trace_gamma: float
    method: str = ""
    j: Optional[np.ndarray] = None
    hbar: Optional[float] = None
    table: list = field(default_factory=list)

    def h2_oracle(self, model: RnnModel, w8: H2Weights):
        dm = design_matrices(model)
        return h2_norm_oracle(dm.f + dm.g @ self.k, w8.q_tilde + w8.r_tilde @ self.k)

    def to_dict(self):
        return {"method": self.method, "gain": self.k.tolist(), "delta": self.delta,
                "gamma": self.gamma, "eta": self.eta, "trace_gamma": self.trace_gamma,
                "hbar": self.hbar, "certificate": self.certificate.to_dict(),
                "table": [dict(r) for r in self.table]}


# -- program pieces ------------------------------------------------------------

def _h2_blocks(P: Problem, S, J, dm: DesignMatrices, w8: H2Weights, delta, fix_eta=False):
    n = dm.f.shape[0]
    pz = w8.pz
    gam = P.sym("Gamma", n)
    lam = dm.f @ S + dm.g @ J
    zq = w8.q_tilde @ S + w8.r_tilde @ J
    if fix_eta:
        e_z, e_n, rhs = np.eye(pz), np.eye(n), float(delta)
    else:
        eta = P.scalar("eta")
        e_z = scalar_times(eta, np.eye(pz))
        e_n = scalar_times(eta, np.eye(n))
        rhs = scalar_times(eta, np.array([[float(delta)]]))
    P.add_lmi([[S],
               [lam, S],
               [zq, None, e_z]], name="h2")
    P.add_lmi([[gam], [e_n, S]], strict=False, name="gramian")
    P.add_lmi(rhs - trace(gam), name="trace")


def _eta_of(res, fix_eta):
    return 1.0 if fix_eta else float(res["eta"][0, 0])


def _gain(res):
    s, j = res["S"], res["J"]
    return np.linalg.solve(s.T, j.T).T


def _h2_problem(dm, w8, delta, fix_eta):
    n, m = dm.g.shape
    P = Problem("h2")
    S = P.sym("S", n)
    J = P.rect("J", m, n)
    _h2_blocks(P, S, J, dm, w8, delta, fix_eta)
    return P


def h2_gevp(dm: DesignMatrices, w8: H2Weights, tol=1e-4, backend=None, fix_eta=False,
            delta_lo=1e-6, delta_hi=1.0, cap=2.0 ** 40) -> H2Result:
    """Smallest H2 bound ``delta`` of the linearization and its gain.

    Raises:
        NoFeasibleUpperBound: when no ``delta`` up to ``cap`` is feasible,
            which is the case for non-stabilizable ``(F, G)``.
    """
    n, m = dm.g.shape
    w8.check(n, m)

    def build(d):
        return solve_feasibility(_h2_problem(dm, w8, d, fix_eta), backend)

    delta, res, probes = solve_gevp_bisection(build, delta_lo, delta_hi, tol, cap)
    k = _gain(res)
    return H2Result(k=k, delta=delta, s=res["S"], j=res["J"], eta=_eta_of(res, fix_eta),
                    trace_gamma=float(np.trace(res["Gamma"])), probes=probes)


def _omega_lambda(model: RnnModel, dm, S, J):
    return model.c0 @ S + model.du @ J, dm.f @ S + dm.g @ J


def _check_result(model, res_k, kind):
    dm = design_matrices(model)
    ok, rho = is_schur(dm.f + dm.g @ res_k)
    if not ok:
        raise NumericalFailure(f"{kind}: returned gain leaves F+GK with spectral radius {rho:.6g}")


# -- global -------------------------------------------------------------------

def _uncontrollable_unstable(a0, bu, tol=1e-9):
    n = a0.shape[0]
    for lam in np.linalg.eigvals(a0):
        if abs(lam) < 1.0 - tol:
            continue
        pbh = np.hstack([a0 - lam * np.eye(n), bu])
        if np.linalg.matrix_rank(pbh, tol=1e-8) < n:
            return lam
    return None


def synthesize_global(model: RnnModel, w8: H2Weights, delta_bar, backend=None,
                      fix_eta=False) -> SynthesisResult:
    """H2 design with the global stability condition at ``delta = delta_bar``.

    Raises:
        Infeasible: with ``lemma="Lemma 2"`` when an eigenvalue of ``A0``
            outside the open unit disc cannot be moved by ``Bu``, so that
            ``A0 + Bu K`` is not Schur for any ``K``.
    """
    lam = _uncontrollable_unstable(model.a0, model.bu)
    if lam is not None:
        raise Infeasible(f"Lemma 2: A0 + Bu K keeps the eigenvalue {lam:.6g} for every K",
                         lemma="Lemma 2")
    dm = design_matrices(model)
    n, m, nu = model.n, model.m, model.nu
    P = Problem("global_design")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    J = P.rect("J", m, n)
    om, lam_ = _omega_lambda(model, dm, S, J)
    B = -model.bsigma
    P.add_lmi([[S], [-om, 2 * U], [lam_, B @ U, S]], name="global_design")
    _h2_blocks(P, S, J, dm, w8, delta_bar, fix_eta)
    res = solve_feasibility(P, backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"global joint program {res.status} at delta={delta_bar:g}", result=res)
    k = _gain(res)
    _check_result(model, k, "global design")
    s = res["S"]
    cert = StabilityCertificate(GLOBAL, s=s, u=res["U"], gamma=float(np.linalg.eigvalsh(s)[0]),
                                residuals=res.block_min_eigs)
    return SynthesisResult(k=k, delta=float(delta_bar), gamma=cert.gamma, certificate=cert,
                           eta=_eta_of(res, fix_eta), trace_gamma=float(np.trace(res["Gamma"])),
                           method=GLOBAL, j=res["J"])


# -- auxiliary-function design --------------------------------------------------

def _aux_design(model, theta, w8, delta, f_lmi, fix_eta, objective=True):
    dm = design_matrices(model)
    n, m, nu = model.n, model.m, model.nu
    Th = np.diag(theta)
    B = -model.bsigma
    P = Problem("aux_design")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    R = P.diag("R", nu)
    L = P.rect("L", nu, n)
    J = P.rect("J", m, n)
    om, lam = _omega_lambda(model, dm, S, J)
    P.add_lmi([[S],
               [-L - om, 2 * U],
               [-Th @ om, None, 2 * R],
               [lam, B @ U, B @ R, S]], name="aux_design")
    for i in range(nu):
        e = np.zeros((1, nu))
        e[0, i] = 1.0
        P.add_lmi([[S], [e @ L, 1.0]], strict=False, name=f"row{i}")
    _h2_blocks(P, S, J, dm, w8, delta, fix_eta)
    if objective:
        _add_basin_objective(P, S, n, f_lmi)
    return P


def _aux_at(model, theta, w8, delta, f_lmi, backend, fix_eta):
    res = solve_min_linear(_aux_design(model, theta, w8, delta, f_lmi, fix_eta), backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"auxiliary-function joint program {res.status} at delta={delta:g}: "
                         f"{res.message}", result=res)
    k = _gain(res)
    _check_result(model, k, "auxiliary-function design")
    s = res["S"]
    cert = StabilityCertificate(REGIONAL_AUX, s=s, u=res["U"], r=res["R"], l=res["L"],
                                theta=theta, gamma=_gamma_of(res, s, f_lmi),
                                residuals=res.block_min_eigs)
    return SynthesisResult(k=k, delta=float(delta), gamma=cert.gamma, certificate=cert,
                           eta=_eta_of(res, fix_eta), trace_gamma=float(np.trace(res["Gamma"])),
                           method=REGIONAL_AUX, j=res["J"])


def synthesize_aux(model: RnnModel, w8: H2Weights, mode: Mode = FixedDelta(10.0), theta=None,
                   f_lmi=LAMBDA_MIN, backend=None, fix_eta=False) -> SynthesisResult:
    """Joint H2 and auxiliary-function design.

    ``FixedDelta`` fixes the H2 bound and maximizes the basin;
    ``Scalarized`` searches ``delta`` to minimize ``w delta - gamma``.

    Raises:
        Infeasible: when the joint program has no solution at the requested
            bound (for example ``delta_bar`` below the unconstrained optimum).
    """
    w8.check(model.n, model.m)
    if theta is None:
        theta = compute_theta(model.kind)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (model.nu,)).copy()

    def inner(d):
        return _aux_at(model, theta, w8, d, f_lmi, backend, fix_eta)

    if isinstance(mode, FixedDelta):
        return inner(mode.delta_bar)

    def feas(d):
        return solve_feasibility(_aux_design(model, theta, w8, d, f_lmi, fix_eta, False), backend)

    return _scalarized(inner, feas, mode)


# -- sector-narrowing design ----------------------------------------------------

def min_h_design(model: RnnModel, backend=None):
    """Smallest uniform slope ``h`` for which some gain satisfies the narrowed condition.

    The minimum-slope program is solved with ``J`` free and without the H2
    blocks.  Returns ``(hbar, result)``.
    """
    dm = design_matrices(model)
    n, m, nu = model.n, model.m, model.nu
    B = -model.bsigma
    P = Problem("min_h_design")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    Hu = P.diag("Hu", nu)
    J = P.rect("J", m, n)
    g = P.scalar("gamma_u")
    om, lam = _omega_lambda(model, dm, S, J)
    P.add_lmi([[S], [-om, 2 * (Hu + U)], [lam, B @ U, S]], name="min_h_design")
    for i in range(nu):
        e = np.zeros((1, nu))
        e[0, i] = 1.0
        P.add_lmi(e @ U @ e.T - 1.0, strict=False, name=f"U>=I[{i}]")
        P.add_lmi(g - e @ Hu @ e.T, strict=False, name=f"Hu<=g[{i}]")
        P.add_lmi(e @ Hu @ e.T, strict=False, name=f"Hu>=0[{i}]")
    P.minimize(g)
    res = solve_min_linear(P, backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"Lemma 6: minimum-slope design program {res.status}: {res.message}",
                         lemma="Lemma 6", result=res)
    hu, u = np.diag(res["Hu"]), np.diag(res["U"])
    return max(float(np.max(hu / u)) if hu.size else 0.0, 0.0), res


def _narrow_design(model, h, ybar, w8, delta, f_lmi, fix_eta, objective=True):
    dm = design_matrices(model)
    n, m, nu = model.n, model.m, model.nu
    H = np.diag(h)
    B = -model.bsigma
    P = Problem("narrow_design")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    J = P.rect("J", m, n)
    om, lam = _omega_lambda(model, dm, S, J)
    P.add_lmi([[S],
               [-om, 2 * (H + np.eye(nu)) @ U],
               [lam, B @ U, S]], name="narrow_design")
    for i in range(nu):
        if is_unbounded(ybar[i]):
            continue
        e = np.zeros((1, nu))
        e[0, i] = 1.0
        P.add_lmi([[S], [e @ om, ybar[i] ** 2]], strict=False, name=f"row{i}")
    _h2_blocks(P, S, J, dm, w8, delta, fix_eta)
    if objective:
        _add_basin_objective(P, S, n, f_lmi)
    return P


def _narrow_at(model, h, ybar, w8, delta, f_lmi, backend, fix_eta):
    res = solve_min_linear(_narrow_design(model, h, ybar, w8, delta, f_lmi, fix_eta), backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"sector-narrowing joint program {res.status} at h={h.max():.6g}, "
                         f"delta={delta:g}: {res.message}", result=res)
    k = _gain(res)
    _check_result(model, k, "sector-narrowing design")
    s = res["S"]
    cert = StabilityCertificate(REGIONAL_NARROW, s=s, u=res["U"], h_mat=np.diag(h), ybar=ybar,
                                gamma=_gamma_of(res, s, f_lmi), residuals=res.block_min_eigs)
    return SynthesisResult(k=k, delta=float(delta), gamma=cert.gamma, certificate=cert,
                           eta=_eta_of(res, fix_eta), trace_gamma=float(np.trace(res["Gamma"])),
                           method=REGIONAL_NARROW, j=res["J"])


def synthesize_narrow(model: RnnModel, w8: H2Weights, mode: Mode = FixedDelta(10.0),
                      delta_h=None, i_max=20, f_lmi=LAMBDA_MIN, backend=None, fix_eta=False,
                      workers=1, hbar=None, sector: SectorData | None = None) -> SynthesisResult:
    """Joint H2 and sector-narrowing design over ``H = (hbar + i delta_h) I``.

    Each ladder point recomputes ``ybar(h)`` and solves the joint program;
    the best basin wins (ties go to the smallest ``i``).  The returned
    ``table`` lists every iteration.

    Raises:
        Infeasible: only if every iteration fails.
    """
    w8.check(model.n, model.m)
    if i_max < 0:
        raise ValueError("i_max must be nonnegative")
    if hbar is None:
        hbar, _ = min_h_design(model, backend)
    if delta_h is None:
        delta_h = default_delta_h(hbar)
    if delta_h <= 0:
        raise ValueError("delta_h must be positive")
    if sector is None:
        sector = SectorData.uniform(model.kind, model.nu)
    hs = _ladder(hbar, delta_h, i_max)
    ybars = [sector.ybar(np.full(model.nu, h)) for h in hs]

    def inner(d):
        def run(idx):
            h = np.full(model.nu, hs[idx])
            try:
                return _narrow_at(model, h, ybars[idx], w8, d, f_lmi, backend, fix_eta), "Feasible"
            except Infeasible as exc:
                return None, f"Infeasible: {exc}"
            except RnnStabError as exc:
                return None, f"{type(exc).__name__}: {exc}"

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                outs = list(ex.map(run, range(len(hs))))
        else:
            outs = [run(i) for i in range(len(hs))]
        table = [{"i": i, "h": h, "gamma": None if r is None else r.gamma, "status": st}
                 for i, (h, (r, st)) in enumerate(zip(hs, outs))]
        best = select_best([t["gamma"] for t in table])
        if best is None:
            raise Infeasible(f"sector-narrowing design: every iteration failed at delta={d:g}")
        out = outs[best][0]
        out.hbar = hbar
        out.table = table
        return out

    if isinstance(mode, FixedDelta):
        return inner(mode.delta_bar)

    def feas(d):
        # feasible at this delta if any ladder point is
        for h, yb in zip(hs, ybars):
            res = solve_feasibility(_narrow_design(model, np.full(model.nu, h), yb, w8, d, f_lmi,
                                                   fix_eta, False), backend)
            if res.status == FEASIBLE:
                return res
        return res

    return _scalarized(inner, feas, mode)


# -- scalarized search -----------------------------------------------------------

def _scalarized(inner, feas, mode: Scalarized) -> SynthesisResult:
    """Minimize ``w delta - gamma(delta)`` over ``delta``.

    The smallest feasible ``delta`` is found by bisection; from there
    ``delta`` is doubled until the cost rises twice, and the bracket is
    refined by golden-section search.
    """
    if mode.w <= 0:
        raise ValueError("w must be positive")
    try:
        d_min, _, _ = solve_gevp_bisection(feas, tol=mode.rel_tol)
    except NoFeasibleUpperBound as exc:
        raise Infeasible(f"joint program infeasible for every delta: {exc}") from exc
    cache = {}

    def cost(d):
        if d not in cache:
            try:
                r = inner(d)
                cache[d] = (mode.w * d - r.gamma, r)
            except Infeasible:
                cache[d] = (math.inf, None)
        return cache[d][0]

    ds = [d_min * (1.0 + mode.rel_tol)]
    cost(ds[0])
    rises = 0
    for _ in range(mode.max_doublings):
        ds.append(2.0 * ds[-1])
        if cost(ds[-1]) > cost(ds[-2]):
            rises += 1
            if rises >= 2:
                break
        else:
            rises = 0
    i = min(range(len(ds)), key=lambda k: cache[ds[k]][0])
    a = ds[max(i - 1, 0)]
    b = ds[min(i + 1, len(ds) - 1)]
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > mode.rel_tol * b:
        if cost(c) <= cost(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    best = min(cache, key=lambda k: cache[k][0])
    res = cache[best][1]
    if res is None:
        raise Infeasible("scalarized search found no feasible design")
    return res


# -- ladders and refinement ----------------------------------------------------------

def synthesize_ladder(model: RnnModel, w8: H2Weights, delta_bars, method=REGIONAL_NARROW,
                      workers=1, **kwargs):
    """Run a ``FixedDelta`` design for every ``delta_bar``.

    Returns a list of ``(delta_bar, SynthesisResult or None, message)`` in
    the order of ``delta_bars``.
    """
    def run(db):
        try:
            if method == REGIONAL_AUX:
                r = synthesize_aux(model, w8, FixedDelta(db), **kwargs)
            elif method == REGIONAL_NARROW:
                r = synthesize_narrow(model, w8, FixedDelta(db), **kwargs)
            elif method == GLOBAL:
                r = synthesize_global(model, w8, db, **kwargs)
            else:
                raise ValueError(f"unknown method {method!r}")
            return db, r, "Feasible"
        except (Infeasible, NumericalFailure) as exc:
            return db, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run, delta_bars))
    return [run(db) for db in delta_bars]


def refine_basin(model: RnnModel, k, method=REGIONAL_NARROW, f_lmi=LAMBDA_MIN, backend=None,
                 theta=None, delta_h=None, i_max=20, extra_h=None, workers=1):
    """Re-maximize the basin for the fixed gain ``k`` with the analysis programs.

    ``extra_h`` adds slope values to the narrowing sweep (typically the slope
    used by the design), so that the refined basin is never smaller than
    the one of the design certificate.

    Raises:
        Infeasible: with a ``Lemma 5`` or ``Lemma 6`` diagnosis when the
            closed loop under ``k`` has ``A`` not Schur.
    """
    cl = build_closed_loop(model, k)
    if method == REGIONAL_AUX:
        return analyze_regional_aux(cl, theta, f_lmi, backend)
    if method != REGIONAL_NARROW:
        raise ValueError(f"refinement is defined for {REGIONAL_AUX} and {REGIONAL_NARROW}")
    best = None
    try:
        best = algorithm1(cl, delta_h, i_max, f_lmi, backend, workers).certificate
    except Infeasible as exc:
        if exc.lemma is not None or extra_h is None:
            raise
    for h in np.atleast_1d(extra_h) if extra_h is not None else ():
        try:
            c = analyze_regional_narrow(cl, float(h), f_lmi=f_lmi, backend=backend)
        except Infeasible:
            continue
        if best is None or c.gamma > best.gamma:
            best = c
    if best is None:
        raise Infeasible("refinement: no slope value gave a certificate")
    return best
