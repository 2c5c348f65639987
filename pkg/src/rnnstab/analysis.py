"""Stability analysis programs for the closed loop ``x+ = A x + B q(C x)``.

Three certificates are available:

* ``Global``: a quadratic Lyapunov function valid on the whole state space,
* ``RegionalAux``: an invariant ellipsoid obtained through the auxiliary
  function ``psi`` and its slope bound ``theta``,
* ``RegionalNarrow``: an invariant ellipsoid obtained by narrowing the
  sector of ``q`` to ``|y_i| <= ybar_i(h_i)``.

Regional certificates maximize the ellipsoid ``E(S) = {x : x^T S^-1 x <= 1}``
either through its smallest semi-axis (``LambdaMin``) or its volume
(``LogDet``, cvxpy backend only).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import Infeasible, NumericalFailure, RnnStabError
from .model import ClosedLoop, RnnModel, build_closed_loop, is_schur
from .sdp import FEASIBLE, INFEASIBLE, Problem, scalar_times, solve_feasibility, solve_min_linear
from .sigmoid import SectorData, compute_theta, compute_ybar, is_unbounded

log = logging.getLogger(__name__)

__all__ = [
    "GLOBAL", "REGIONAL_AUX", "REGIONAL_NARROW", "LAMBDA_MIN", "LOG_DET",
    "StabilityCertificate", "Ellipsoid", "ValidationReport", "SweepRow", "Algorithm1Result",
    "check_global", "necessary_precheck", "analyze_regional_aux", "min_h_feasible",
    "analyze_regional_narrow", "algorithm1", "validate_certificate", "certificate_blocks",
    "default_delta_h",
]

GLOBAL, REGIONAL_AUX, REGIONAL_NARROW = "Global", "RegionalAux", "RegionalNarrow"
LAMBDA_MIN, LOG_DET = "LambdaMin", "LogDet"

ROW_TOL = 1e-8
LMI_TOL = 1e-8
H_FLOOR = 1e-6


@dataclass
class StabilityCertificate:
    """Quadratic certificate ``V(x) = x^T S^-1 x`` with its multipliers."""

    method: str
    s: np.ndarray
    u: np.ndarray
    r: Optional[np.ndarray] = None
    l: Optional[np.ndarray] = None
    h_mat: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    ybar: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    residuals: list = field(default_factory=list)

    @property
    def n(self):
        return self.s.shape[0]

    @property
    def h_poly(self):
        """Polytope matrix ``H = L S^-1`` of the auxiliary-function certificate."""
        if self.l is None:
            return None
        return np.linalg.solve(self.s, self.l.T).T

    def ellipsoid(self):
        return Ellipsoid(self.s)

    def to_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "method": self.method, "s": arr(self.s), "u": arr(self.u), "r": arr(self.r),
            "l": arr(self.l), "h_mat": arr(self.h_mat), "theta": arr(self.theta),
            "ybar": arr(self.ybar), "gamma": self.gamma,
            "residuals": [float(x) for x in self.residuals],
        }

    @classmethod
    def from_dict(cls, d):
        def arr(k):
            return None if d.get(k) is None else np.array(d[k], dtype=float)
        return cls(method=d["method"], s=arr("s"), u=arr("u"), r=arr("r"), l=arr("l"),
                   h_mat=arr("h_mat"), theta=arr("theta"), ybar=arr("ybar"),
                   gamma=d.get("gamma"), residuals=list(d.get("residuals", [])))


@dataclass
class Ellipsoid:
    """``E(S) = {x : x^T S^-1 x <= 1}``."""

    s: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        w, v = np.linalg.eigh(0.5 * (self.s + self.s.T))
        if w[0] <= 0:
            raise ValueError("ellipsoid matrix must be positive definite")
        self._sqrt = (v * np.sqrt(w)) @ v.T
        self._pinv = (v / w) @ v.T

    @property
    def sqrt(self):
        return self._sqrt

    def level(self, x):
        """``x^T S^-1 x`` for one point or a batch of rows."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self._pinv @ x)
        return np.einsum("ij,jk,ik->i", x, self._pinv, x)

    def contains(self, x, tol=1e-12):
        return self.level(x) <= 1.0 + tol

    def boundary(self, directions):
        """Map unit vectors (rows) to the boundary ``S^(1/2) d``."""
        d = np.atleast_2d(directions)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        return d @ self._sqrt.T


def necessary_precheck(model: RnnModel, k):
    """Spectral radii of ``A`` and ``A0 + Bu K`` for the closed loop under ``K``."""
    cl = build_closed_loop(model, k)
    ok_a, rho_a = is_schur(cl.a)
    ok_b, rho_b = is_schur(model.a0 + model.bu @ cl.k)
    return {"schur_A": ok_a, "schur_A0BuK": ok_b, "radius_A": rho_a, "radius_A0BuK": rho_b,
            "passes": ok_a and ok_b}


def _global_problem(cl: ClosedLoop):
    n, nu = cl.n, cl.nu
    P = Problem("global")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    A, B, C = cl.a, cl.b, cl.c
    P.add_lmi([[S],
               [-C @ S, 2 * U],
               [A @ S, B @ U, S]], name="global")
    return P


def check_global(cl: ClosedLoop, backend=None) -> StabilityCertificate:
    """Global certificate, or :class:`Infeasible`.

    The necessary condition (both ``A`` and ``A + B C`` Schur) is checked
    first; when it fails the program is not solved.
    """
    ok_a, rho_a = is_schur(cl.a)
    ok_l, rho_l = is_schur(cl.a_linear)
    if not (ok_a and ok_l):
        raise Infeasible(
            f"Lemma 2: global condition needs A and A0+BuK Schur; radii {rho_a:.6g} "
            f"and {rho_l:.6g}", lemma="Lemma 2")
    P = _global_problem(cl)
    res = solve_feasibility(P, backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"global program {res.status}: {res.message}", result=res)
    s = res["S"]
    return StabilityCertificate(GLOBAL, s=s, u=res["U"], gamma=float(np.linalg.eigvalsh(s)[0]),
                                residuals=res.block_min_eigs)


def _require_schur(cl, lemma, what):
    ok, rho = is_schur(cl.a)
    if not ok:
        raise Infeasible(f"{lemma}: {what} needs A Schur; spectral radius {rho:.6g}", lemma=lemma)


def _add_basin_objective(P, S, n, f_lmi):
    if f_lmi == LAMBDA_MIN:
        g = P.scalar("gamma")
        P.add_lmi(S - scalar_times(g, np.eye(n)), strict=False, name="basin")
        P.maximize(g)
    elif f_lmi == LOG_DET:
        P.maximize_logdet(S)
    else:
        raise ValueError(f"unknown f_lmi {f_lmi!r}")


def _gamma_of(res, s, f_lmi):
    if f_lmi == LAMBDA_MIN and "gamma" in res.values:
        return float(res["gamma"][0, 0])
    return float(np.linalg.eigvalsh(s)[0]) if f_lmi == LAMBDA_MIN else float(np.linalg.slogdet(s)[1])


def _aux_problem(cl: ClosedLoop, theta, f_lmi):
    n, nu = cl.n, cl.nu
    A, B, C = cl.a, cl.b, cl.c
    Th = np.diag(np.broadcast_to(np.asarray(theta, dtype=float), (nu,)))
    P = Problem("regional_aux")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    R = P.diag("R", nu)
    L = P.rect("L", nu, n)
    P.add_lmi([[S],
               [-L - C @ S, 2 * U],
               [-Th @ C @ S, None, 2 * R],
               [A @ S, B @ U, B @ R, S]], name="aux")
    for i in range(nu):
        e = np.zeros((1, nu))
        e[0, i] = 1.0
        P.add_lmi([[S], [e @ L, 1.0]], strict=False, name=f"row{i}")
    _add_basin_objective(P, S, n, f_lmi)
    return P


def analyze_regional_aux(cl: ClosedLoop, theta=None, f_lmi=LAMBDA_MIN, backend=None):
    """Largest invariant ellipsoid from the auxiliary-function sector.

    Args:
        cl: closed loop.
        theta: slope bound(s) of ``psi``; computed from the sigmoid kind
            when omitted.
        f_lmi: ``LambdaMin`` or ``LogDet``.

    Raises:
        Infeasible: with ``lemma="Lemma 5"`` when ``A`` is not Schur.
    """
    _require_schur(cl, "Lemma 5", "the auxiliary-function condition")
    if theta is None:
        theta = compute_theta(cl.kind)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), (cl.nu,)).copy()
    P = _aux_problem(cl, theta, f_lmi)
    res = solve_min_linear(P, backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"auxiliary-function program {res.status}: {res.message}", result=res)
    s = res["S"]
    return StabilityCertificate(REGIONAL_AUX, s=s, u=res["U"], r=res["R"], l=res["L"],
                                theta=theta, gamma=_gamma_of(res, s, f_lmi),
                                residuals=res.block_min_eigs)


def _minh_problem(cl: ClosedLoop):
    n, nu = cl.n, cl.nu
    A, B, C = cl.a, cl.b, cl.c
    P = Problem("min_h")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    Hu = P.diag("Hu", nu)
    g = P.scalar("gamma_u")
    P.add_lmi([[S],
               [-C @ S, 2 * (Hu + U)],
               [A @ S, B @ U, S]], name="min_h")
    for i in range(nu):
        e = np.zeros((1, nu))
        e[0, i] = 1.0
        P.add_lmi(e @ U @ e.T - 1.0, strict=False, name=f"U>=I[{i}]")
        P.add_lmi(g - e @ Hu @ e.T, strict=False, name=f"Hu<=g[{i}]")
        P.add_lmi(e @ Hu @ e.T, strict=False, name=f"Hu>=0[{i}]")
    P.minimize(g)
    return P


def min_h_feasible(cl: ClosedLoop, backend=None):
    """Smallest uniform slope for which the narrowed-sector condition holds.

    Returns:
        ``(hbar, result)`` with ``hbar = lambda_max(Hu U^-1)``.

    Raises:
        Infeasible: with ``lemma="Lemma 6"`` when ``A`` is not Schur.
    """
    _require_schur(cl, "Lemma 6", "the sector-narrowing condition")
    res = solve_min_linear(_minh_problem(cl), backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"minimum-h program {res.status}: {res.message}", lemma="Lemma 6",
                         result=res)
    hu = np.diag(res["Hu"])
    u = np.diag(res["U"])
    hbar = float(np.max(hu / u)) if hu.size else 0.0
    return max(hbar, 0.0), res


def _narrow_problem(cl: ClosedLoop, h, ybar, f_lmi):
    n, nu = cl.n, cl.nu
    A, B, C = cl.a, cl.b, cl.c
    H = np.diag(h)
    P = Problem("regional_narrow")
    S = P.sym("S", n)
    U = P.diag("U", nu)
    P.add_lmi([[S],
               [-C @ S, 2 * (H + np.eye(nu)) @ U],
               [A @ S, B @ U, S]], name="narrow")
    for i in range(nu):
        if is_unbounded(ybar[i]):
            continue
        ci = C[i:i + 1, :]
        P.add_lmi(ybar[i] ** 2 - ci @ S @ ci.T, strict=False, name=f"row{i}")
    _add_basin_objective(P, S, n, f_lmi)
    return P


def _sector_for(cl, sector):
    if sector is None:
        sector = SectorData.uniform(cl.kind, cl.nu)
    return sector


def analyze_regional_narrow(cl: ClosedLoop, h, ybar=None, f_lmi=LAMBDA_MIN, backend=None,
                            sector: SectorData | None = None):
    """Largest invariant ellipsoid for the narrowed sector at slopes ``h``.

    ``h`` may be a scalar or a vector; ``ybar`` defaults to the computed
    half-widths of the sigmoid kind.

    Raises:
        Infeasible: with ``lemma="Lemma 6"`` when ``A`` is not Schur.
    """
    _require_schur(cl, "Lemma 6", "the sector-narrowing condition")
    h = np.broadcast_to(np.asarray(h, dtype=float), (cl.nu,)).copy()
    if np.any(h <= 0):
        raise ValueError("h must be positive")
    if ybar is None:
        ybar = _sector_for(cl, sector).ybar(h)
    ybar = np.broadcast_to(np.asarray(ybar, dtype=float), (cl.nu,)).copy()
    P = _narrow_problem(cl, h, ybar, f_lmi)
    res = solve_min_linear(P, backend)
    if res.status != FEASIBLE:
        raise Infeasible(f"sector-narrowing program {res.status} at h={h.max():.6g}: "
                         f"{res.message}", result=res)
    s = res["S"]
    return StabilityCertificate(REGIONAL_NARROW, s=s, u=res["U"], h_mat=np.diag(h), ybar=ybar,
                                gamma=_gamma_of(res, s, f_lmi), residuals=res.block_min_eigs)


@dataclass
class SweepRow:
    i: int
    h: float
    gamma: Optional[float]
    status: str


@dataclass
class Algorithm1Result:
    certificate: StabilityCertificate
    hbar: float
    delta_h: float
    best_index: int
    table: list

    def table_dicts(self):
        return [r.__dict__.copy() for r in self.table]


def default_delta_h(hbar):
    return max(0.1, 0.1 * hbar)


def select_best(gammas, tie_tol=1e-9):
    """Index of the largest value; ties within ``tie_tol`` go to the smallest index."""
    best = None
    for i, g in enumerate(gammas):
        if g is None:
            continue
        if best is None or g > gammas[best] + tie_tol:
            best = i
    return best


def _ladder(hbar, delta_h, i_max):
    return [max(hbar + i * delta_h, H_FLOOR) for i in range(i_max + 1)]


def algorithm1(cl: ClosedLoop, delta_h=None, i_max=20, f_lmi=LAMBDA_MIN, backend=None,
               workers=1, sector: SectorData | None = None, hbar=None) -> Algorithm1Result:
    """Sweep uniform slopes ``H = (hbar + i delta_h) I`` and keep the best basin.

    ``hbar`` comes from :func:`min_h_feasible` unless given.  Iterations are
    independent and may run on ``workers`` threads; the result does not
    depend on the number of workers.
    """
    if i_max < 0:
        raise ValueError("i_max must be nonnegative")
    if hbar is None:
        hbar, _ = min_h_feasible(cl, backend)
    if delta_h is None:
        delta_h = default_delta_h(hbar)
    if delta_h <= 0:
        raise ValueError("delta_h must be positive")
    sector = _sector_for(cl, sector)
    hs = _ladder(hbar, delta_h, i_max)

    def run(h):
        try:
            return analyze_regional_narrow(cl, h, f_lmi=f_lmi, backend=backend, sector=sector), "Feasible"
        except Infeasible as exc:
            return None, f"Infeasible: {exc}"
        except (NumericalFailure, RnnStabError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(run, hs))
    else:
        outcomes = [run(h) for h in hs]
    table = [SweepRow(i, h, None if c is None else c.gamma, st)
             for i, (h, (c, st)) in enumerate(zip(hs, outcomes))]
    best = select_best([r.gamma for r in table])
    if best is None:
        raise Infeasible("sector-narrowing sweep: every iteration failed", lemma=None)
    return Algorithm1Result(outcomes[best][0], hbar, delta_h, best, table)


# -- validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    lmi_min_eig: float
    lmi_ok: bool
    row_max_excess: float
    rows_ok: bool
    n_samples: int
    decrease_violations: int
    invariance_violations: int
    worst_decrease_ratio: float

    @property
    def passed(self):
        return (self.lmi_ok and self.rows_ok and self.decrease_violations == 0
                and self.invariance_violations == 0)

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def certificate_blocks(cert: StabilityCertificate, cl: ClosedLoop):
    """Assembled defining blocks of the certificate's program at its values."""
    A, B, C = cl.a, cl.b, cl.c
    S, U = cert.s, cert.u
    blocks = []
    if cert.method == GLOBAL:
        blocks.append(np.block([[S, -S @ C.T, S @ A.T],
                                [-C @ S, 2 * U, U @ B.T],
                                [A @ S, B @ U, S]]))
    elif cert.method == REGIONAL_AUX:
        Th = np.diag(cert.theta)
        L, R = cert.l, cert.r
        nu = U.shape[0]
        Z = np.zeros((nu, nu))
        blocks.append(np.block([[S, -L.T - S @ C.T, -S @ C.T @ Th, S @ A.T],
                                [-L - C @ S, 2 * U, Z, U @ B.T],
                                [-Th @ C @ S, Z, 2 * R, R @ B.T],
                                [A @ S, B @ U, B @ R, S]]))
    elif cert.method == REGIONAL_NARROW:
        H = cert.h_mat
        blocks.append(np.block([[S, -S @ C.T, S @ A.T],
                                [-C @ S, 2 * (H + np.eye(H.shape[0])) @ U, U @ B.T],
                                [A @ S, B @ U, S]]))
    else:
        raise ValueError(f"unknown certificate method {cert.method!r}")
    return [0.5 * (b + b.T) for b in blocks]


def _row_excess(cert, cl):
    if cert.method == REGIONAL_AUX:
        hp = cert.h_poly
        vals = np.einsum("ij,jk,ik->i", hp, cert.s, hp)
        return float(np.max(vals - 1.0)) if vals.size else -np.inf
    if cert.method == REGIONAL_NARROW:
        vals = np.einsum("ij,jk,ik->i", cl.c, cert.s, cl.c)
        lim = np.where([is_unbounded(y) for y in cert.ybar], np.inf, np.square(cert.ybar))
        return float(np.max(vals - lim)) if vals.size else -np.inf
    return -np.inf


def validate_certificate(cert: StabilityCertificate, cl: ClosedLoop, n_samples=10_000,
                         seed=0) -> ValidationReport:
    """Re-check a certificate numerically.

    Checks the defining LMI, the row conditions (ellipsoid inside the
    polytope or output range), and on ``n_samples`` points of ``E(S)``
    (boundary and interior) the Lyapunov decrease ``V(x+) < V(x)`` and the
    one-step invariance ``V(x+) <= 1``.
    """
    from .verify import sample_ellipsoid

    if cert.s.shape != (cl.n, cl.n):
        raise ValueError("certificate and closed loop dimensions differ")
    lmi = min(float(np.linalg.eigvalsh(b)[0]) for b in certificate_blocks(cert, cl))
    row = _row_excess(cert, cl)
    ell = cert.ellipsoid()
    x = sample_ellipsoid(cert.s, n_samples, seed=seed)
    v = ell.level(x)
    y = x @ cl.c.T
    xp = x @ cl.a.T + (y - cl.kind(y)) @ cl.b.T
    vp = ell.level(xp)
    nz = v > 0
    ratio = np.where(nz, vp / np.where(nz, v, 1.0), 0.0)
    dec_viol = int(np.sum(nz & ~(vp < v)))
    inv_viol = int(np.sum(vp > 1.0 + 1e-12))
    return ValidationReport(lmi_min_eig=lmi, lmi_ok=lmi >= -LMI_TOL, row_max_excess=row,
                            rows_ok=row <= ROW_TOL, n_samples=int(x.shape[0]),
                            decrease_violations=dec_viol, invariance_violations=inv_viol,
                            worst_decrease_ratio=float(ratio.max()) if ratio.size else 0.0)
