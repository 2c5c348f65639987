"""Independent oracles, closed-loop simulation and ESN identification support."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import EchoStateViolation, IllConditioned, NotSchur
from .model import ClosedLoop, EsnModel, is_schur
from .sigmoid import TANH

__all__ = [
    "Trajectory", "Dataset", "simulate", "solve_dlyap", "h2_norm_oracle",
    "sample_ellipsoid", "InvarianceReport", "monte_carlo_invariance", "EsnTraining",
    "train_esn", "random_reservoir", "fit_percent", "mprs", "load_preset",
    "generate_surrogate_data", "esn_generate", "identify_esn",
]

DIVERGENCE_LIMIT = 1e100


@dataclass
class Trajectory:
    """Closed-loop trajectory; row ``t`` holds the values at step ``t``."""

    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    reference: Optional[np.ndarray] = None
    diverged: bool = False

    @property
    def steps(self):
        return self.states.shape[0] - 1

    def to_csv(self, path):
        n = self.states.shape[1]
        nu = self.outputs.shape[1]
        m = self.inputs.shape[1]
        header = (["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(nu)]
                  + [f"u_{i + 1}" for i in range(m)] + ["ref"])
        ref = self.reference if self.reference is not None else np.zeros(self.states.shape[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t in range(self.states.shape[0]):
                w.writerow([t] + [repr(float(v)) for v in self.states[t]]
                           + [repr(float(v)) for v in self.outputs[t]]
                           + [repr(float(v)) for v in self.inputs[t]]
                           + [repr(float(ref[t]))])


def simulate(cl: ClosedLoop, x0, steps, reference=None, b_r=None) -> Trajectory:
    """Iterate ``x+ = A x + B q(C x) + b_r r_t``.

    Args:
        cl: closed loop.
        x0: initial state.
        steps: number of steps.
        reference: optional scalar or length-``steps`` sequence ``r_t``.
        b_r: reference input vector; defaults to the last unit vector (the
            integrator state of an augmented ESN).

    The run stops early with ``diverged=True`` when the state becomes
    non-finite or exceeds ``1e100`` in magnitude.
    """
    x = np.asarray(x0, dtype=float).reshape(-1)
    n = cl.n
    if x.size != n:
        raise ValueError(f"x0 has {x.size} entries, expected {n}")
    ref = None
    if reference is not None:
        ref = np.broadcast_to(np.asarray(reference, dtype=float), (steps + 1,)).copy()
        if b_r is None:
            b_r = np.zeros(n)
            b_r[-1] = 1.0
        b_r = np.asarray(b_r, dtype=float).reshape(n)
    states = np.empty((steps + 1, n))
    states[0] = x
    diverged = False
    last = steps
    for t in range(steps):
        y = cl.c @ x
        x = cl.a @ x + cl.b @ (y - cl.kind(y))
        if ref is not None:
            x = x + b_r * ref[t]
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            diverged = True
            last = t
            break
        states[t + 1] = x
    states = states[:last + 1]
    return Trajectory(states=states, outputs=states @ cl.c.T, inputs=states @ cl.k.T,
                      reference=None if ref is None else ref[:last + 1], diverged=diverged)


def solve_dlyap(a, q):
    """Solve ``X = A^T X A + Q`` for a Schur matrix ``A``.

    Uses the Bartels-Stewart based solver of scipy followed by one step of
    iterative refinement.

    Raises:
        NotSchur: when the spectral radius of ``a`` is not below one.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    ok, rho = is_schur(a)
    if not ok:
        raise NotSchur(f"spectral radius {rho:.6g} is not below one")
    x = sla.solve_discrete_lyapunov(a.T, q)
    r = q + a.T @ x @ a - x
    x = x + sla.solve_discrete_lyapunov(a.T, r)
    return 0.5 * (x + x.T)


def h2_norm_oracle(a_cl, c_cl):
    """H2 norm of ``x+ = A x + d, z = C x`` via the observability Gramian."""
    c = np.atleast_2d(np.asarray(c_cl, dtype=float))
    x = solve_dlyap(a_cl, c.T @ c)
    return float(np.sqrt(max(np.trace(x), 0.0)))


def sample_ellipsoid(s, n_samples, seed=0, boundary_fraction=0.5):
    """Points of ``E(S)``: a share on the boundary, the rest uniform inside.

    Directions are normalized Gaussians; interior radii are ``u^(1/n)``;
    points are mapped through the symmetric square root of ``S``.
    """
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n_samples, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    n_b = int(round(boundary_fraction * n_samples))
    r = np.ones(n_samples)
    r[n_b:] = rng.random(n_samples - n_b) ** (1.0 / n)
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    root = (v * np.sqrt(np.maximum(w, 0.0))) @ v.T
    return (d * r[:, None]) @ root.T


@dataclass
class InvarianceReport:
    n_samples: int
    horizon: int
    membership_violations: int
    decrease_violations: int
    converged_fraction: float
    max_final_ratio: float

    @property
    def passed(self):
        return self.membership_violations == 0 and self.decrease_violations == 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def monte_carlo_invariance(cert, cl: ClosedLoop, n_samples=10_000, horizon=1, seed=0,
                           converge_tol=1e-6) -> InvarianceReport:
    """Sampled invariance and decrease of ``V(x) = x^T S^-1 x`` on ``E(S)``.

    Every sample is propagated ``horizon`` steps; membership ``V <= 1`` and
    strict decrease of ``V`` (off the origin) are checked at every step.
    ``converged_fraction`` counts samples whose final norm is below
    ``converge_tol`` times the initial norm.
    """
    s = cert.s if hasattr(cert, "s") else np.asarray(cert)
    pinv = np.linalg.inv(0.5 * (s + s.T))
    x = sample_ellipsoid(s, n_samples, seed)
    x0n = np.linalg.norm(x, axis=1)
    v = np.einsum("ij,jk,ik->i", x, pinv, x)
    mem = np.zeros(n_samples, dtype=bool)
    dec = np.zeros(n_samples, dtype=bool)
    for _ in range(horizon):
        y = x @ cl.c.T
        x = x @ cl.a.T + (y - cl.kind(y)) @ cl.b.T
        vn = np.einsum("ij,jk,ik->i", x, pinv, x)
        mem |= vn > 1.0 + 1e-12
        dec |= (v > 0) & ~(vn < v)
        v = vn
    ratio = np.linalg.norm(x, axis=1) / np.where(x0n > 0, x0n, 1.0)
    return InvarianceReport(n_samples=n_samples, horizon=horizon,
                            membership_violations=int(mem.sum()),
                            decrease_violations=int(dec.sum()),
                            converged_fraction=float(np.mean(ratio < converge_tol)),
                            max_final_ratio=float(ratio.max()) if ratio.size else 0.0)


# -- data and identification -------------------------------------------------

@dataclass
class Dataset:
    u: np.ndarray
    y: np.ndarray
    sample_time: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.u.shape != self.y.shape:
            raise ValueError("u and y must have equal lengths")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset has non-finite samples")

    def __len__(self):
        return self.u.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u", "y"])
            for k in range(len(self)):
                w.writerow([repr(k * self.sample_time), repr(float(self.u[k])), repr(float(self.y[k]))])

    @classmethod
    def from_csv(cls, path):
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        ts = float(rows[1, 0] - rows[0, 0]) if rows.shape[0] > 1 else 1.0
        return cls(rows[:, 1], rows[:, 2], ts)


def load_preset(name="surrogate_ph_v1"):
    """Load a plant preset shipped with the package, or a JSON file path."""
    p = Path(name)
    if p.suffix == ".json" and p.exists():
        return json.loads(p.read_text())
    text = resources.files("rnnstab").joinpath("data", f"{name}.json").read_text()
    return json.loads(text)


def mprs(n, levels, u_min, u_max, min_hold, max_hold, rng):
    """Multilevel pseudo-random signal with random hold times.

    Levels are equally spaced in ``[u_min, u_max]``; a single level gives the
    constant midrange signal.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    if levels == 1:
        return np.full(n, 0.5 * (u_min + u_max))
    grid = np.linspace(u_min, u_max, levels)
    out = np.empty(n)
    k = 0
    while k < n:
        hold = int(rng.integers(min_hold, max_hold + 1))
        out[k:k + hold] = grid[rng.integers(levels)]
        k += hold
    return out


def _surrogate_response(preset, u, rng):
    st, lin = preset["static"], preset["linear"]
    v = st["y_mid"] + st["amplitude"] * np.tanh(st["slope"] * (u - st["u_mid"]))
    a1, a2 = lin["a"]
    b1, b2 = lin["b"]
    y = np.empty_like(v)
    # start at the equilibrium of the first input sample
    y[0] = y[1] = v[0]
    for k in range(2, v.size):
        y[k] = a1 * y[k - 1] + a2 * y[k - 2] + b1 * v[k - 1] + b2 * v[k - 2]
    noise = preset.get("noise_std", 0.0)
    if noise > 0:
        y = y + noise * rng.standard_normal(y.size)
    return y


def generate_surrogate_data(preset="surrogate_ph_v1", levels=None, u_range=None, T=None,
                            sample_time=None, seed=0, u=None) -> Dataset:
    """Input/output data from the surrogate plant under an MPRS input.

    Defaults (range, level count, length, sample time) come from the preset.
    An explicit input sequence ``u`` bypasses the MPRS generator.
    """
    if isinstance(preset, str):
        preset = load_preset(preset)
    inp = preset["input"]
    T = int(T if T is not None else preset["samples"])
    sample_time = float(sample_time if sample_time is not None else preset["sample_time"])
    lo, hi = u_range if u_range is not None else (inp["u_min"], inp["u_max"])
    rng = np.random.default_rng(seed)
    if u is None:
        u = mprs(T, levels if levels is not None else inp["levels"], lo, hi,
                 inp["min_hold"], inp["max_hold"], rng)
    u = np.asarray(u, dtype=float)
    return Dataset(u, _surrogate_response(preset, u, rng), sample_time)


def fit_percent(y, yhat):
    """Normalized fit ``100 (1 - ||y - yhat|| / ||y - mean(y)||)``."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    den = np.linalg.norm(y - y.mean())
    if den == 0:
        return 100.0 if np.allclose(y, yhat) else -np.inf
    return float(100.0 * (1.0 - np.linalg.norm(y - yhat) / den))


def random_reservoir(n_s, spectral_radius_target=0.9, seed=0, input_scale=2.0,
                     feedback_scale=0.1):
    """Seeded uniform reservoir ``(Wx, Wu, Wxy)`` with ``rho(Wx)`` set to the target."""
    rng = np.random.default_rng(seed)
    wx = rng.uniform(-1.0, 1.0, (n_s, n_s))
    rho = max(abs(np.linalg.eigvals(wx)))
    wx *= spectral_radius_target / rho
    wu = input_scale * rng.uniform(-1.0, 1.0, (n_s, 1))
    wxy = feedback_scale * rng.uniform(-1.0, 1.0, (n_s, 1))
    return wx, wu, wxy


def esn_generate(wx, wu, wxy, wy, u, x0=None, kind=TANH):
    """Free-run the ESN ``x+ = sigma(Wx x + Wu u + Wxy y)``, ``y = Wy x``.

    Returns ``(states, outputs)`` where ``outputs[t] = Wy states[t]``.
    """
    n_s = wx.shape[0]
    x = np.zeros(n_s) if x0 is None else np.asarray(x0, dtype=float)
    xs = np.empty((len(u), n_s))
    ys = np.empty(len(u))
    for t, ut in enumerate(u):
        xs[t] = x
        ys[t] = (wy @ x).item()
        x = kind(wx @ x + wu[:, 0] * ut + wxy[:, 0] * ys[t])
    return xs, ys


@dataclass
class EsnTraining:
    esn: EsnModel
    fit: float
    u_center: float = 0.0
    u_scale: float = 1.0
    y_center: float = 0.0
    y_scale: float = 1.0
    train_fit: float = float("nan")
    y_val: np.ndarray = field(default=None, repr=False)
    y_val_hat: np.ndarray = field(default=None, repr=False)

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def normalize_u(self, u):
        return (np.asarray(u, dtype=float) - self.u_center) / self.u_scale

    def denormalize_y(self, y):
        return np.asarray(y, dtype=float) * self.y_scale + self.y_center


def train_esn(data: Dataset, n_s=3, spectral_radius_target=0.9, ridge_lambda=1e-6, seed=0,
              washout=100, train_fraction=0.7, normalize=True, input_scale=2.0,
              feedback_scale=0.1, echo_bound=1.0) -> EsnTraining:
    """Identify an ESN with output feedback from input/output data.

    The reservoir is drawn by :func:`random_reservoir`; the readout is the
    ridge regression of ``y`` on the teacher-forced states after
    ``washout`` samples of the training split.  The fit is measured in free
    run on the validation split, starting from the teacher-forced state.

    Raises:
        IllConditioned: when the regularized normal equations are singular
            to working precision.
        EchoStateViolation: when ``rho(Wx + Wxy Wy)`` is not below
            ``echo_bound``.
    """
    T = len(data)
    if T <= 10 * n_s:
        raise ValueError(f"need more than {10 * n_s} samples, got {T}")
    n_tr = int(round(train_fraction * T))
    if n_tr <= washout + n_s:
        raise ValueError("training split shorter than the washout")
    u, y = data.u, data.y
    if normalize:
        uc, us = float(u[:n_tr].mean()), float(u[:n_tr].std()) or 1.0
        yc, ys = float(y[:n_tr].mean()), float(y[:n_tr].std()) or 1.0
    else:
        uc, us, yc, ys = 0.0, 1.0, 0.0, 1.0
    un = (u - uc) / us
    yn = (y - yc) / ys
    wx, wu, wxy = random_reservoir(n_s, spectral_radius_target, seed, input_scale, feedback_scale)
    # teacher forcing: x_{t+1} = sigma(Wx x_t + Wu u_t + Wxy y_t)
    xs = np.zeros((T, n_s))
    for t in range(T - 1):
        xs[t + 1] = np.tanh(wx @ xs[t] + wu[:, 0] * un[t] + wxy[:, 0] * yn[t])
    X = xs[washout:n_tr]
    Y = yn[washout:n_tr]
    gram = X.T @ X + ridge_lambda * np.eye(n_s)
    if np.linalg.cond(gram) > 1e14:
        raise IllConditioned(f"ridge system condition number {np.linalg.cond(gram):.3g}")
    wy = np.linalg.solve(gram, X.T @ Y).reshape(1, n_s)
    esn = EsnModel(wx, wu, wxy, wy, TANH, echo_bound=echo_bound)
    train_fit = fit_percent(Y, X @ wy[0])
    _, yhat = esn_generate(wx, wu, wxy, wy, un[n_tr:], x0=xs[n_tr])
    fit = fit_percent(yn[n_tr:], yhat)
    return EsnTraining(esn=esn, fit=fit, u_center=uc, u_scale=us, y_center=yc, y_scale=ys,
                       train_fit=train_fit, y_val=y[n_tr:], y_val_hat=yhat * ys + yc)


def identify_esn(data: Dataset, n_s=3, seed=0, tries=4, **kwargs) -> EsnTraining:
    """Train ESNs on reservoirs ``seed, seed+1, ...`` and keep the best valid fit.

    Reservoirs whose trained loop violates the echo-state bound are skipped.

    Raises:
        EchoStateViolation: when none of the ``tries`` reservoirs is valid.
    """
    best, last = None, None
    for s in range(seed, seed + max(tries, 1)):
        try:
            tr = train_esn(data, n_s=n_s, seed=s, **kwargs)
        except EchoStateViolation as exc:
            last = exc
            continue
        if best is None or tr.fit > best.fit:
            best = tr
    if best is None:
        raise last
    return best
