"""Dense primal-dual interior-point method for block LMI problems.

Solves

    minimize  c^T x   subject to  F_b(x) >= 0 (PSD blocks),  A x + b >= 0,  |x| <= R

with the HKM search direction and a Mehrotra predictor-corrector, starting
from an infeasible point.  The Schur complement is assembled by
:meth:`rnnstab.sdp.problem.Compiled.schur`, which exploits the ``L X R``
structure of every term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..errors import NumericalFailure

log = logging.getLogger(__name__)

__all__ = ["IpmOptions", "IpmResult", "solve_ipm"]


@dataclass
class IpmOptions:
    max_iter: int = 120
    gap_tol: float = 1e-8
    feas_tol: float = 1e-9
    step_frac: float = 0.95
    stall_iters: int = 25
    stop_t: float | None = None  # phase I: stop once x[t_index] exceeds this
    init_scale: float = 10.0    # floor on the initial slack and multiplier scale
    direction: str = "nt"        # "nt" (Nesterov-Todd) or "hkm"


@dataclass
class IpmResult:
    x: np.ndarray
    status: str                  # optimal | stalled | max_iter
    iterations: int
    pobj: float
    dobj: float
    pinf: float
    dinf: float
    gap: float
    trace: list = field(default_factory=list)


def _max_step(s, ds):
    """Largest ``a`` with ``s + a ds >= 0`` for a PD matrix ``s``."""
    try:
        c = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        return 0.0
    m = sla.solve_triangular(c, ds, lower=True)
    m = sla.solve_triangular(c, m.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (m + m.T))[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _max_step_vec(s, ds):
    neg = ds < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-s[neg] / ds[neg]))


def _is_pd(a):
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


def _backtrack(mats, dmats, a):
    """Shrink ``a`` until every ``mats[b] + a * dmats[b]`` factors."""
    for _ in range(60):
        if all(_is_pd(_sym(m + a * d)) for m, d in zip(mats, dmats)):
            return a
        a *= 0.7
    return 0.0


def _sym(a):
    return 0.5 * (a + a.T)


def _nt_point(s, x):
    """Scaling matrix ``W`` with ``W S W = X``."""
    lc = np.linalg.cholesky(s)
    m = lc.T @ x @ lc
    lam, v = np.linalg.eigh(_sym(m))
    lam = np.maximum(lam, 0.0)
    li = sla.solve_triangular(lc, np.eye(s.shape[0]), lower=True)   # L^-1
    g = (v * np.sqrt(lam)) @ v.T
    return _sym(li.T @ g @ li)


def _chol_solve_factory(m):
    scale = max(1.0, float(np.max(np.abs(np.diag(m)))))
    reg = 0.0
    for _ in range(8):
        try:
            f = sla.cho_factor(m + reg * np.eye(m.shape[0]), lower=True, check_finite=False)
            return lambda r: sla.cho_solve(f, r, check_finite=False)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            reg = scale * (1e-14 if reg == 0.0 else 100 * reg / scale)
    try:
        lu = sla.lu_factor(m, check_finite=False)
        return lambda r: sla.lu_solve(lu, r, check_finite=False)
    except (ValueError, sla.LinAlgError) as exc:
        raise NumericalFailure(f"Schur complement factorization failed: {exc}") from exc


def solve_ipm(comp, opts: IpmOptions | None = None, x0=None) -> IpmResult:
    """Run the interior-point method on a compiled problem."""
    opts = opts or IpmOptions()
    p = comp.p
    nb = len(comp.blocks)
    nlp = comp.lp_a.shape[0]
    box = comp.box
    has_box = box is not None
    x = np.zeros(p) if x0 is None else np.array(x0, dtype=float)

    f0_norm = max([float(np.abs(cb.f0).max(initial=0.0)) for cb in comp.blocks]
                  + [float(np.abs(comp.lp_b).max(initial=0.0))] + [1.0])
    c_norm = float(np.linalg.norm(comp.c))
    xi = max(opts.init_scale, np.sqrt(max(cb.size for cb in comp.blocks) if nb else 1.0), f0_norm)
    fx, gx = comp.forward(x)
    S = [xi * np.eye(cb.size) for cb in comp.blocks]
    # start from the actual slack when it is comfortably interior
    for b in range(nb):
        lam = np.linalg.eigvalsh(_sym(fx[b]))[0]
        if lam > 1.0:
            S[b] = _sym(fx[b])
    X = [xi * np.eye(cb.size) for cb in comp.blocks]
    s = np.maximum(gx, xi) if nlp else np.zeros(0)
    z = xi * np.ones(nlp)
    if has_box:
        su = box - x
        sl = box + x
        zu = np.full(p, xi * xi / box)
        zl = np.full(p, xi * xi / box)
    nu_tot = sum(cb.size for cb in comp.blocks) + nlp + (2 * p if has_box else 0)

    def mu_of(S, X, s, z, su=None, sl=None, zu=None, zl=None):
        tot = sum(float(np.sum(Xb * Sb)) for Xb, Sb in zip(X, S)) + float(s @ z)
        if has_box:
            tot += float(su @ zu + sl @ zl)
        return tot / nu_tot

    trace = []
    status = "max_iter"
    it = 0
    merits = []
    last_step = 1.0
    for it in range(1, opts.max_iter + 1):
        fx, gx = comp.forward(x)
        rd = [_sym(fx[b]) - S[b] for b in range(nb)]
        rdl = gx - s
        aty = comp.adjoint(X, z)
        if has_box:
            aty = aty - zu + zl
            rdu = (box - x) - su
            rdb = (box + x) - sl
        rp = comp.c - aty
        mu = mu_of(S, X, s, z, *( (su, sl, zu, zl) if has_box else ()))
        pobj = float(comp.c @ x) + comp.c0
        dobj = (-sum(float(np.sum(cb.f0 * Xb)) for cb, Xb in zip(comp.blocks, X))
                - float(comp.lp_b @ z) + comp.c0)
        if has_box:
            dobj -= box * float(np.sum(zu + zl))
        pinf_v = [np.linalg.norm(r) for r in rd] + [np.linalg.norm(rdl)]
        if has_box:
            pinf_v += [np.linalg.norm(rdu), np.linalg.norm(rdb)]
        pinf = float(np.sqrt(np.sum(np.square(pinf_v)))) / (1.0 + f0_norm)
        dinf = float(np.linalg.norm(rp)) / (1.0 + c_norm)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        trace.append((it, pobj, dobj, pinf, dinf, gap, mu))
        log.debug("it %3d pobj %.9e dobj %.9e pinf %.2e dinf %.2e gap %.2e mu %.2e",
                  it, pobj, dobj, pinf, dinf, gap, mu)
        merit = max(pinf, dinf, gap)
        if pinf < opts.feas_tol and dinf < opts.feas_tol and gap < opts.gap_tol:
            status = "optimal"
            break
        if (opts.stop_t is not None and comp.t_index is not None
                and x[comp.t_index] > opts.stop_t and pinf < 1e-8):
            status = "optimal"    # strictly feasible point found; t need not be maximal
            break
        merits.append(merit)
        k = opts.stall_iters
        if len(merits) > k and min(merits[-k:]) > 0.99 * min(merits[:-k]):
            status = "stalled"
            break

        Sinv = []
        for Sb in S:
            try:
                c = sla.cho_factor(Sb, lower=True, check_finite=False)
            except sla.LinAlgError as exc:
                raise NumericalFailure("slack lost definiteness", trace) from exc
            Sinv.append(_sym(sla.cho_solve(c, np.eye(Sb.shape[0]), check_finite=False)))
        zs = z / s if nlp else np.zeros(0)
        if opts.direction == "nt":
            try:
                W = [_nt_point(S[b], X[b]) for b in range(nb)]
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure("scaling point failed", trace) from exc
            M = comp.schur(W, W, zs)

            def scaled(b, m):
                return W[b] @ m @ W[b]
        else:
            M = comp.schur(Sinv, X, zs)

            def scaled(b, m):
                return X[b] @ m @ Sinv[b]
        if has_box:
            M[np.diag_indices(p)] += zu / su + zl / sl
        solve = _chol_solve_factory(M)

        def direction(sig_mu, corr):
            # complementarity targets
            Rc = []
            for b in range(nb):
                r = sig_mu * Sinv[b] - X[b] - scaled(b, rd[b])
                if corr is not None:
                    r = r - corr["X"][b] @ corr["S"][b] @ Sinv[b]
                Rc.append(_sym(r))
            rl = sig_mu / s - z - z * rdl / s if nlp else np.zeros(0)
            if corr is not None and nlp:
                rl = rl - corr["z"] * corr["s"] / s
            rhs = comp.adjoint(Rc, rl) - rp
            if has_box:
                ru = sig_mu / su - zu - zu * rdu / su
                rb = sig_mu / sl - zl - zl * rdb / sl
                if corr is not None:
                    ru = ru - corr["zu"] * corr["su"] / su
                    rb = rb - corr["zl"] * corr["sl"] / sl
                rhs = rhs - ru + rb
            dx = solve(rhs)
            lin, lin_lp = comp.linear(dx)
            dS = [_sym(rd[b] + lin[b]) for b in range(nb)]
            dX = [_sym(sig_mu * Sinv[b] - X[b] - scaled(b, dS[b])
                       - (corr["X"][b] @ corr["S"][b] @ Sinv[b] if corr is not None else 0.0))
                  for b in range(nb)]
            ds = rdl + lin_lp
            dz = sig_mu / s - z - z * ds / s if nlp else np.zeros(0)
            if corr is not None and nlp:
                dz = dz - corr["z"] * corr["s"] / s
            d = {"x": dx, "S": dS, "X": dX, "s": ds, "z": dz}
            if has_box:
                dsu = rdu - dx
                dsl = rdb + dx
                dzu = sig_mu / su - zu - zu * dsu / su
                dzl = sig_mu / sl - zl - zl * dsl / sl
                if corr is not None:
                    dzu = dzu - corr["zu"] * corr["su"] / su
                    dzl = dzl - corr["zl"] * corr["sl"] / sl
                d.update(su=dsu, sl=dsl, zu=dzu, zl=dzl)
            return d

        def steps(d):
            ap = min([_max_step(S[b], d["S"][b]) for b in range(nb)]
                     + [_max_step_vec(s, d["s"]) if nlp else np.inf]
                     + ([_max_step_vec(su, d["su"]), _max_step_vec(sl, d["sl"])] if has_box else []))
            adl = ([_max_step(X[b], d["X"][b]) for b in range(nb)]
                   + [_max_step_vec(z, d["z"]) if nlp else np.inf]
                   + ([_max_step_vec(zu, d["zu"]), _max_step_vec(zl, d["zl"])] if has_box else []))
            ad = min(adl)
            log.debug("dual step limited by %d of %d (%.3g)", int(np.argmin(adl)), len(adl), ad)
            return ap, ad

        # predictor
        da = direction(0.0, None)
        ap, ad = steps(da)
        ap, ad = min(1.0, ap), min(1.0, ad)
        Sa = [S[b] + ap * da["S"][b] for b in range(nb)]
        Xa = [X[b] + ad * da["X"][b] for b in range(nb)]
        args = ()
        if has_box:
            args = (su + ap * da["su"], sl + ap * da["sl"], zu + ad * da["zu"], zl + ad * da["zl"])
        mu_a = mu_of(Sa, Xa, s + ap * da["s"], z + ad * da["z"], *args)
        sigma = min(1.0, max(0.0, (mu_a / mu) ** 3)) if mu > 0 else 0.0
        corr = {"X": da["X"], "S": da["S"], "s": da["s"], "z": da["z"]}
        if has_box:
            corr.update(su=da["su"], sl=da["sl"], zu=da["zu"], zl=da["zl"])
        if last_step < 0.2:
            # short steps: recentre instead of trusting the corrector
            sigma, corr = max(sigma, 0.5), None
        d = direction(sigma * mu, corr)
        ap, ad = steps(d)
        tau = max(opts.step_frac, 1.0 - 10.0 * mu / max(1.0, abs(pobj)))
        tau = min(tau, 0.995)
        ap = min(1.0, tau * ap)
        ad = min(1.0, tau * ad)
        ap = _backtrack(S, d["S"], ap)
        ad = _backtrack(X, d["X"], ad)
        trace[-1] = trace[-1] + (ap, ad)
        last_step = min(ap, ad)
        x = x + ap * d["x"]
        S = [_sym(S[b] + ap * d["S"][b]) for b in range(nb)]
        X = [_sym(X[b] + ad * d["X"][b]) for b in range(nb)]
        if nlp:
            s = s + ap * d["s"]
            z = z + ad * d["z"]
        if has_box:
            su = su + ap * d["su"]
            sl = sl + ap * d["sl"]
            zu = zu + ad * d["zu"]
            zl = zl + ad * d["zl"]
        if ap < 1e-12 and ad < 1e-12:
            status = "stalled"
            break
        if not np.all(np.isfinite(x)):
            raise NumericalFailure("non-finite iterate", trace)

    last = trace[-1]
    return IpmResult(x=x, status=status, iterations=it, pobj=last[1], dobj=last[2],
                     pinf=last[3], dinf=last[4], gap=last[5], trace=trace)
