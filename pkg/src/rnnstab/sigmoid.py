"""Scalar sigmoid nonlinearities and their sector constants.

A sigmoid here is a scalar map that is nondecreasing, 1-Lipschitz, bounded
by one in magnitude, vanishes at the origin and has unit slope there.  Three
built-in kinds are provided (``TANH``, ``SAT``, ``ALGEBRAIC``); user kinds are
built with :func:`custom`.

Besides evaluation, the module computes

* ``theta``: the smallest slope bounding ``psi(y) = sat(y) - sigma(y)``,
* ``ybar(h)``: the half-width of the interval on which
  ``y * (sigma(y) - h * q(y)) >= 0`` holds,

and certifies the three sector inequalities on dense grids with rigorous
inter-grid enclosures.  Constants are always rounded in the conservative
direction (``theta`` up, ``ybar`` down) so that the certifiers can close.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    AssumptionViolated,
    BracketingFailure,
    CertificationFailed,
    NonConvergence,
)

__all__ = [
    "SigmoidKind", "TANH", "SAT", "ALGEBRAIC", "custom", "kind_from_name",
    "eval_sigma", "eval_q", "eval_psi", "eval_sat", "eval_dz",
    "check_assumption", "compute_theta", "compute_ybar", "YBAR_INF",
    "is_unbounded", "SectorData", "CertReport", "certify_sector_global",
    "certify_sector_psi", "certify_sector_narrow",
]

#: Sentinel returned by :func:`compute_ybar` when the narrowed sector is the
#: whole real line on the search range.
YBAR_INF = 1e9

_YBAR_SEARCH_MAX = 1e8
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SigmoidKind:
    """A scalar sigmoid.

    Attributes:
        name: identifier used in model files (``"tanh"``, ``"sat"``,
            ``"algebraic"`` for the built-ins).
        fn: vectorized scalar function.
        lipschitz: declared bound on the derivative.
        odd: whether ``fn(-y) == -fn(y)``; lets the sector routines scan
            only the positive half-line.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False, repr=False)
    lipschitz: float = 1.0
    odd: bool = True

    def __call__(self, y):
        return self.fn(np.asarray(y, dtype=float))


def _sat(y):
    return np.clip(y, -1.0, 1.0)


def _algebraic(y):
    return y / (1.0 + np.abs(y))


TANH = SigmoidKind("tanh", np.tanh)
SAT = SigmoidKind("sat", _sat)
ALGEBRAIC = SigmoidKind("algebraic", _algebraic)

_BUILTIN = {"tanh": TANH, "sat": SAT, "algebraic": ALGEBRAIC}


def custom(name, fn, lipschitz=1.0, odd=False):
    """Wrap a user-supplied scalar function as a :class:`SigmoidKind`.

    The premise is not trusted: it is sampled by :func:`check_assumption`
    before any constant is computed from it.
    """
    if name in _BUILTIN:
        raise ValueError(f"name {name!r} is reserved for a built-in kind")
    return SigmoidKind(name, fn, float(lipschitz), bool(odd))


def kind_from_name(name):
    try:
        return _BUILTIN[str(name).lower()]
    except KeyError:
        raise ValueError(
            f"unknown sigmoid kind {name!r}; expected one of {sorted(_BUILTIN)}"
        ) from None


def eval_sigma(kind, y):
    return kind(np.asarray(y, dtype=float))


def eval_sat(y):
    return _sat(np.asarray(y, dtype=float))


def eval_dz(y):
    y = np.asarray(y, dtype=float)
    return y - _sat(y)


def eval_q(kind, y):
    """Excess of the identity over the sigmoid, ``y - sigma(y)``."""
    y = np.asarray(y, dtype=float)
    return y - kind(y)


def eval_psi(kind, y):
    """Gap between saturation and the sigmoid, ``sat(y) - sigma(y)``."""
    y = np.asarray(y, dtype=float)
    if kind is SAT:
        return np.zeros_like(y)
    return _sat(y) - kind(y)


def check_assumption(kind, grid_step=1e-3, y_max=50.0, fd_step=1e-6):
    """Sample the sigmoid premise on ``[-y_max, y_max]``.

    Checks ``sigma(0) = 0``, ``|sigma| <= 1``, monotonicity, the 1-Lipschitz
    bound between grid points and a unit slope at the origin (by central
    finite differences).

    Raises:
        AssumptionViolated: with the first violated property and its location.
    """
    if kind.lipschitz > 1.0 + 1e-12:
        raise AssumptionViolated(
            f"{kind.name}: declared derivative bound {kind.lipschitz} exceeds 1")
    n = int(round(y_max / grid_step))
    y = np.linspace(-y_max, y_max, 2 * n + 1)
    s = kind(y)
    if not np.all(np.isfinite(s)):
        raise AssumptionViolated(f"{kind.name}: non-finite values on the grid")
    s0 = float(kind(np.array([0.0]))[0])
    if abs(s0) > 1e-12:
        raise AssumptionViolated(f"{kind.name}: sigma(0) = {s0} != 0")
    k = int(np.argmax(np.abs(s)))
    if abs(s[k]) > 1.0 + 1e-12:
        raise AssumptionViolated(
            f"{kind.name}: |sigma(y)| = {abs(s[k]):.6g} > 1 at y = {y[k]:.6g}")
    ds = np.diff(s)
    dy = np.diff(y)
    k = int(np.argmin(ds))
    if ds[k] < -1e-12:
        raise AssumptionViolated(
            f"{kind.name}: sigma decreases near y = {y[k]:.6g}")
    slope = ds / dy
    k = int(np.argmax(slope))
    if slope[k] > 1.0 + 1e-9:
        raise AssumptionViolated(
            f"{kind.name}: Lipschitz/sector premise violated, slope "
            f"{slope[k]:.6g} > 1 near y = {y[k]:.6g}")
    d0 = float((kind(np.array([fd_step])) - kind(np.array([-fd_step])))[0]) / (2 * fd_step)
    if abs(d0 - 1.0) > 1e-4:
        raise AssumptionViolated(f"{kind.name}: sigma'(0) ~ {d0:.6g}, expected 1")


def _psi_ratio(kind, y):
    return eval_psi(kind, y) / y


def _golden_max(f, a, b, xtol, max_iter=400):
    """Maximize a unimodal ``f`` on ``[a, b]``; returns ``(x, f(x), width)``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= xtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    else:
        raise NonConvergence(f"golden-section search stalled at width {b - a:.3g}")
    xs = (a, c, d, b)
    vals = [f(x) for x in xs]
    k = int(np.argmax(vals))
    return xs[k], vals[k], abs(b - a)


def _theta_half_line(kind, sign, y_max, n_grid):
    y = sign * np.logspace(-6, math.log10(y_max), n_grid)
    g = _psi_ratio(kind, y)
    k = int(np.argmax(g))
    if g[k] <= 0.0:
        return 0.0
    lo = y[max(k - 1, 0)]
    hi = y[min(k + 1, n_grid - 1)]
    a, b = min(lo, hi), max(lo, hi)

    def f(t):
        return float(_psi_ratio(kind, np.array([t]))[0])

    _, best, _ = _golden_max(f, a, b, xtol=1e-13 * max(1.0, abs(b)))
    return max(best, float(g[k]))


def compute_theta(kind, tol=1e-4, y_max=50.0, n_grid=10_000):
    """Smallest slope ``theta`` with ``0 <= psi(y)/y <= theta`` for ``y != 0``.

    A log-spaced scan over ``(0, y_max]`` locates the maximizing bracket,
    which is then refined by golden-section search.  The returned value is
    the refined maximum rounded *up* by ``tol / 2`` (zero stays exactly
    zero), so it is an upper bound within ``tol`` of the true slope.

    Raises:
        AssumptionViolated: if the sampled sigmoid breaks the premise.
        NonConvergence: if the refinement stalls.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_assumption(kind)
    best = _theta_half_line(kind, 1.0, y_max, n_grid)
    if not kind.odd:
        best = max(best, _theta_half_line(kind, -1.0, y_max, n_grid))
    if best <= 0.0:
        return 0.0
    theta = best + 0.5 * tol
    if theta >= 1.0:
        raise AssumptionViolated(f"{kind.name}: psi slope {best:.6g} is not below 1")
    return theta


def _ybar_side(kind, alpha, tol, sign):
    def xi(t):
        return float(kind(np.array([sign * t]))[0]) / (sign * t) - alpha

    lo = tol
    if xi(lo) <= 0.0:
        raise BracketingFailure(
            f"{kind.name}: sigma(y)/y is already below {alpha:.6g} at y = {sign * lo:.3g}")
    hi = 2.0 * lo
    while xi(hi) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > _YBAR_SEARCH_MAX:
            return YBAR_INF
    while hi - lo > 0.25 * tol:
        mid = 0.5 * (lo + hi)
        if xi(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return max(lo - 0.25 * tol, 0.5 * tol)


def compute_ybar(kind, h, tol=1e-6):
    """Half-width of the narrowed sector for slope parameter ``h > 0``.

    Solves ``sigma(y)/y = h/(h+1)`` for the smallest positive root by
    doubling from ``y = tol`` and bisecting.  The result is rounded *down*
    by a quarter to a half of ``tol``.  For kinds that are not odd, both
    half-lines are searched and the smaller magnitude wins.  Returns
    :data:`YBAR_INF` when no crossing exists below ``1e8``.
    """
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    alpha = h / (h + 1.0)
    ybar = _ybar_side(kind, alpha, tol, 1.0)
    if not kind.odd:
        ybar = min(ybar, _ybar_side(kind, alpha, tol, -1.0))
    return ybar


def is_unbounded(ybar):
    return ybar >= YBAR_INF


@lru_cache(maxsize=4096)
def _ybar_cached(kind, h, tol):
    return compute_ybar(kind, h, tol)


@lru_cache(maxsize=64)
def _theta_cached(kind, tol):
    return compute_theta(kind, tol)


class SectorData:
    """Per-channel sector constants for a vector of sigmoid kinds.

    ``theta`` is computed once per kind and cached; ``ybar(h)`` evaluates
    the narrowed-sector half-widths for a vector (or scalar) of slopes.
    """

    def __init__(self, kinds: Sequence[SigmoidKind], tol=1e-4, ybar_tol=1e-6,
                 grid_resolution=1e-3):
        self.kinds = tuple(kinds)
        self.tol = tol
        self.ybar_tol = ybar_tol
        self.grid_resolution = grid_resolution
        self.theta = np.array([_theta_cached(k, tol) for k in self.kinds])
        self.certified: dict = {}

    @classmethod
    def uniform(cls, kind, nu, **kwargs):
        return cls([kind] * nu, **kwargs)

    @property
    def nu(self):
        return len(self.kinds)

    def ybar(self, h):
        h = np.broadcast_to(np.asarray(h, dtype=float), (self.nu,))
        return np.array([_ybar_cached(k, float(hi), self.ybar_tol)
                         for k, hi in zip(self.kinds, h)])

    def certify(self, h_values=(0.5, 1.0, 2.0), y_max=50.0):
        """Run all three certifiers per distinct kind; fills ``certified``."""
        step = self.grid_resolution
        for kind, theta in zip(self.kinds, self.theta):
            if kind.name in self.certified:
                continue
            reports = [certify_sector_global(kind, step, (-y_max, y_max), raise_on_fail=False),
                       certify_sector_psi(kind, theta, step, (-y_max, y_max), raise_on_fail=False)]
            for h in h_values:
                yb = _ybar_cached(kind, float(h), self.ybar_tol)
                reports.append(certify_sector_narrow(kind, h, yb, step, raise_on_fail=False))
            self.certified[kind.name] = reports
        return all(r.certified for reps in self.certified.values() for r in reps)


@dataclass
class CertReport:
    """Outcome of a grid certification.

    ``worst_value`` / ``worst_y`` refer to the smallest sampled value of
    the inequality; ``lower_bound`` is the smallest guaranteed value over
    all (possibly refined) grid intervals.
    """

    inequality: str
    kind: str
    certified: bool
    worst_value: float
    worst_y: float
    lower_bound: float
    y_range: tuple
    grid_step: float
    n_points: int
    n_refined: int
    message: str = ""

    def to_dict(self):
        return {
            "inequality": self.inequality, "kind": self.kind,
            "certified": self.certified, "worst_value": self.worst_value,
            "worst_y": self.worst_y, "lower_bound": self.lower_bound,
            "range": list(self.y_range), "grid_step": self.grid_step,
            "n_points": self.n_points, "n_refined": self.n_refined,
            "message": self.message,
        }


def _prod_lower(p1, p2, r1, r2):
    return np.minimum(np.minimum(p1 * r1, p1 * r2), np.minimum(p2 * r1, p2 * r2))


class _Enclosure:
    """Function values at interval endpoints of the monotone building blocks."""

    def __init__(self, kind, a, b):
        self.a, self.b = a, b
        self.sa, self.sb = kind(a), kind(b)
        self.qa, self.qb = a - self.sa, b - self.sb
        self.da, self.db = eval_dz(a), eval_dz(b)
        sat_a, sat_b = _sat(a), _sat(b)
        # psi = q - dz = sat - sigma; intersect both monotone enclosures
        self.pa = np.maximum(self.qa - self.db, sat_a - self.sb)
        self.pb = np.minimum(self.qb - self.da, sat_b - self.sa)


def _grid(lo, hi, step):
    """Grid on ``[lo, hi]`` with spacing ``<= step`` that contains 0 if inside."""
    pieces = []
    if lo < 0.0 < hi:
        n_neg = max(1, int(math.ceil(-lo / step - 1e-9)))
        n_pos = max(1, int(math.ceil(hi / step - 1e-9)))
        pieces = [np.linspace(lo, 0.0, n_neg + 1), np.linspace(0.0, hi, n_pos + 1)[1:]]
        return np.concatenate(pieces)
    n = max(1, int(math.ceil((hi - lo) / step - 1e-9)))
    return np.linspace(lo, hi, n + 1)


def _certify(name, kind, point_fn, lower_fn, lo, hi, grid_step, margin,
             max_depth, raise_on_fail, max_intervals=1_000_000):
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    y = _grid(lo, hi, grid_step)
    f = point_fn(y)
    k = int(np.argmin(f))
    worst_value, worst_y = float(f[k]), float(y[k])
    n_points = y.size

    def fail(msg, lb):
        report = CertReport(name, kind.name, False, worst_value, worst_y, lb,
                            (lo, hi), grid_step, n_points, n_refined, msg)
        if raise_on_fail:
            raise CertificationFailed(msg, report)
        return report

    n_refined = 0
    # premise first: the enclosures rely on monotone sigma and q and |sigma| <= min(1, |y|)
    s = kind(y)
    slack = np.minimum(np.diff(s), np.diff(y - s))
    bound = np.minimum(1.0, np.abs(y)) + 1e-12 - np.abs(s)
    if slack.min() < -1e-12 or bound.min() < 0.0:
        j = int(np.argmin(slack)) if slack.min() < -1e-12 else int(np.argmin(bound))
        worst_y = float(y[j])
        return fail(f"{kind.name}: monotone/Lipschitz/sector premise violated near "
                    f"y = {worst_y:.6g}", -np.inf)
    if worst_value < -margin:
        return fail(f"{name} violated at y = {worst_y:.6g} (value {worst_value:.3g})",
                    worst_value)
    a, b = y[:-1], y[1:]
    lb_min = np.inf
    for depth in range(max_depth + 1):
        lb = lower_fn(_Enclosure(kind, a, b))
        bad = lb < -margin
        if np.any(~bad):
            lb_min = min(lb_min, float(lb[~bad].min()))
        if not np.any(bad):
            break
        if depth == max_depth:
            j = int(np.argmin(lb))
            worst_y = float(0.5 * (a[j] + b[j]))
            return fail(f"{name}: enclosure did not close near y = {worst_y:.6g} "
                        f"after {max_depth} bisections", float(lb[j]))
        a, b = a[bad], b[bad]
        if a.size > max_intervals:
            j = int(np.argmin(lb))
            worst_y = float(0.5 * (a[0] + b[0]))
            return fail(f"{name}: enclosure did not close, {a.size} open intervals "
                        f"at depth {depth}", float(lb[j]))
        mid = 0.5 * (a + b)
        fm = point_fn(mid)
        n_points += mid.size
        n_refined += mid.size
        j = int(np.argmin(fm))
        if fm[j] < worst_value:
            worst_value, worst_y = float(fm[j]), float(mid[j])
        if worst_value < -margin:
            return fail(f"{name} violated at y = {worst_y:.6g} (value {worst_value:.3g})",
                        worst_value)
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
    return CertReport(name, kind.name, True, worst_value, worst_y, lb_min,
                      (lo, hi), grid_step, n_points, n_refined, "certified")


def certify_sector_global(kind, grid_step=1e-3, y_range=(-50.0, 50.0),
                          margin=1e-12, max_depth=40, raise_on_fail=True):
    """Certify ``q(y) * sigma(y) >= 0`` on ``y_range``."""

    def point(y):
        s = kind(y)
        return (y - s) * s

    def lower(e):
        return _prod_lower(e.qa, e.qb, e.sa, e.sb)

    return _certify("q*sigma >= 0", kind, point, lower, y_range[0], y_range[1],
                    grid_step, margin, max_depth, raise_on_fail)


def certify_sector_psi(kind, theta, grid_step=1e-3, y_range=(-50.0, 50.0),
                       margin=1e-12, max_depth=40, raise_on_fail=True):
    """Certify ``psi(y) * (theta*y - psi(y)) >= 0`` on ``y_range``."""
    theta = float(theta)
    if theta < 0:
        raise ValueError("theta must be nonnegative")

    def point(y):
        p = eval_psi(kind, y)
        return p * (theta * y - p)

    def lower(e):
        return _prod_lower(e.pa, e.pb, theta * e.a - e.pb, theta * e.b - e.pa)

    return _certify(f"psi*(theta*y - psi) >= 0 [theta={theta:.6g}]", kind, point, lower,
                    y_range[0], y_range[1], grid_step, margin, max_depth, raise_on_fail)


def certify_sector_narrow(kind, h, ybar, grid_step=1e-3, margin=1e-12,
                          max_depth=40, raise_on_fail=True):
    """Certify ``q(y) * (sigma(y) - h*q(y)) >= 0`` for ``|y| <= ybar``."""
    h = float(h)
    if not (h > 0 and ybar > 0):
        raise ValueError("h and ybar must be positive")

    def point(y):
        s = kind(y)
        q = y - s
        return q * (s - h * q)

    def lower(e):
        return _prod_lower(e.qa, e.qb, e.sa - h * e.qb, e.sb - h * e.qa)

    return _certify(f"q*(sigma - h*q) >= 0 [h={h:.6g}]", kind, point, lower,
                    -float(ybar), float(ybar), grid_step, margin, max_depth, raise_on_fail)
