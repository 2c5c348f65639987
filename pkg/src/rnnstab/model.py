"""Recurrent plant models, closed loops and the ESN-plus-integrator construction.

The plant is

    x+ = A0 x + Bu u + Bsigma sigma(C0 x + Du u)

and a static state feedback ``u = K x`` turns it into the closed loop

    x+ = A x + B q(C x),   C = C0 + Du K,  A = A0 + Bu K + Bsigma C,  B = -Bsigma,

with ``q(y) = y - sigma(y)``.  Synthesis works with ``F = A0 + Bsigma C0`` and
``G = Bu + Bsigma Du`` so that ``A = F + G K``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EchoStateViolation, EigenFailure, ParseError
from .sigmoid import TANH, SigmoidKind, kind_from_name

__all__ = [
    "RnnModel", "ClosedLoop", "DesignMatrices", "EsnModel", "build_closed_loop",
    "design_matrices", "augment_integrator", "is_schur", "spectral_radius",
    "load_model", "save_model", "load_esn", "save_esn", "SCHUR_MARGIN",
]

SCHUR_MARGIN = 1e-9


def _mat(x, name, shape=None):
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        # a flat list is read as a column when a column is expected
        if shape is not None and shape[1] == 1 and shape[0] == a.size:
            a = a.reshape(-1, 1)
        else:
            a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name}: expected a matrix, got ndim={a.ndim}")
    if shape is not None and a.shape != tuple(shape):
        raise DimensionMismatch(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RnnModel:
    """Open-loop recurrent plant with a decentralized sigmoid layer."""

    a0: np.ndarray
    bu: np.ndarray
    bsigma: np.ndarray
    c0: np.ndarray
    du: np.ndarray
    kind: SigmoidKind = TANH

    def __post_init__(self):
        a0 = _mat(self.a0, "a0")
        n = a0.shape[0]
        if a0.shape != (n, n):
            raise DimensionMismatch(f"a0 must be square, got {a0.shape}")
        bu = _mat(self.bu, "bu")
        if bu.shape[0] != n:
            raise DimensionMismatch(f"bu must have {n} rows, got {bu.shape}")
        m = bu.shape[1]
        bsigma = _mat(self.bsigma, "bsigma")
        if bsigma.shape[0] != n:
            raise DimensionMismatch(f"bsigma must have {n} rows, got {bsigma.shape}")
        nu = bsigma.shape[1]
        c0 = _mat(self.c0, "c0", (nu, n))
        du = _mat(self.du, "du", (nu, m))
        for k, v in dict(a0=a0, bu=bu, bsigma=bsigma, c0=c0, du=du).items():
            object.__setattr__(self, k, v)

    @property
    def n(self):
        return self.a0.shape[0]

    @property
    def m(self):
        return self.bu.shape[1]

    @property
    def nu(self):
        return self.bsigma.shape[1]

    def step(self, x, u):
        """One step of the open-loop recursion."""
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = self.c0 @ x + self.du @ u
        return self.a0 @ x + self.bu @ u + self.bsigma @ self.kind(y)

    def to_dict(self):
        return {
            "n": self.n, "m": self.m, "nu": self.nu, "kind": self.kind.name,
            "a0": self.a0.tolist(), "bu": self.bu.tolist(),
            "bsigma": self.bsigma.tolist(), "c0": self.c0.tolist(),
            "du": self.du.tolist(),
        }

    @classmethod
    def from_dict(cls, d, source="<dict>"):
        return _model_from_dict(d, source)


@dataclass(frozen=True)
class ClosedLoop:
    """Closed loop ``x+ = A x + B q(C x)`` under the gain ``k``."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    kind: SigmoidKind
    k: np.ndarray

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def nu(self):
        return self.b.shape[1]

    @property
    def a_linear(self):
        """State matrix with the sigmoid replaced by the identity, ``A + B C``."""
        return self.a + self.b @ self.c

    def step(self, x):
        y = self.c @ x
        return self.a @ x + self.b @ (y - self.kind(y))


@dataclass(frozen=True)
class DesignMatrices:
    f: np.ndarray
    g: np.ndarray


def build_closed_loop(model: RnnModel, k) -> ClosedLoop:
    """Substitute ``u = K x`` into the plant.

    Raises:
        DimensionMismatch: if ``k`` is not ``m x n``.
    """
    k = _mat(k, "k", (model.m, model.n))
    c = model.c0 + model.du @ k
    a = model.a0 + model.bu @ k + model.bsigma @ c
    b = -model.bsigma
    return ClosedLoop(a=a, b=b, c=c, kind=model.kind, k=k)


def design_matrices(model: RnnModel) -> DesignMatrices:
    f = model.a0 + model.bsigma @ model.c0
    g = model.bu + model.bsigma @ model.du
    return DesignMatrices(f=f, g=g)


def spectral_radius(m):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise EigenFailure("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    return float(np.max(np.abs(ev))) if ev.size else 0.0


def is_schur(m, tol_margin=SCHUR_MARGIN):
    """Return ``(stable, radius)`` with ``stable`` iff radius < 1 - tol_margin."""
    r = spectral_radius(m)
    return r < 1.0 - tol_margin, r


@dataclass(frozen=True)
class EsnModel:
    """Echo state network with output feedback.

    ``x+ = sigma(Wx x + Wu u + Wxy y)``, ``y = Wy x``.
    """

    wx: np.ndarray
    wu: np.ndarray
    wxy: np.ndarray
    wy: np.ndarray
    kind: SigmoidKind = TANH
    echo_bound: float = field(default=1.0, compare=False)

    def __post_init__(self):
        wx = _mat(self.wx, "wx")
        ns = wx.shape[0]
        if wx.shape != (ns, ns):
            raise DimensionMismatch(f"wx must be square, got {wx.shape}")
        wu = _mat(self.wu, "wu", (ns, 1))
        wxy = _mat(self.wxy, "wxy", (ns, 1))
        wy = _mat(self.wy, "wy", (1, ns))
        for k, v in dict(wx=wx, wu=wu, wxy=wxy, wy=wy).items():
            object.__setattr__(self, k, v)
        rho = spectral_radius(wx + wxy @ wy)
        if not rho < self.echo_bound:
            raise EchoStateViolation(
                f"spectral radius of wx + wxy wy is {rho:.6g}, "
                f"not below the echo-state bound {self.echo_bound}")

    @property
    def ns(self):
        return self.wx.shape[0]

    def step(self, x, u):
        y = self.wy @ x
        return self.kind(self.wx @ x + self.wu @ np.atleast_1d(u) + self.wxy @ y)

    def to_dict(self):
        return {"ns": self.ns, "kind": self.kind.name, "wx": self.wx.tolist(),
                "wu": self.wu.tolist(), "wxy": self.wxy.tolist(), "wy": self.wy.tolist()}


def augment_integrator(esn: EsnModel) -> RnnModel:
    """ESN plus an output-error integrator as an :class:`RnnModel`.

    State ``x = [x_s; x_i]`` with ``x_i+ = x_i - Wy x_s`` (the reference
    enters through the simulator).  The ESN state is the sigmoid output,
    so ``A0 = [[0, 0], [-Wy, 1]]``, ``Bsigma = [I; 0]``,
    ``C0 = [Wx + Wxy Wy, 0]``, ``Du = Wu`` and ``Bu = 0``.
    """
    ns = esn.ns
    n = ns + 1
    a0 = np.zeros((n, n))
    a0[ns, :ns] = -esn.wy[0]
    a0[ns, ns] = 1.0
    bu = np.zeros((n, 1))
    bsigma = np.vstack([np.eye(ns), np.zeros((1, ns))])
    c0 = np.hstack([esn.wx + esn.wxy @ esn.wy, np.zeros((ns, 1))])
    return RnnModel(a0=a0, bu=bu, bsigma=bsigma, c0=c0, du=esn.wu.copy(), kind=esn.kind)


_MODEL_FIELDS = ("a0", "bu", "bsigma", "c0", "du")
_ESN_FIELDS = ("wx", "wu", "wxy", "wy")


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _kind_field(d, source):
    try:
        return kind_from_name(d.get("kind", "tanh"))
    except ValueError as exc:
        raise ParseError(f"{source}: field 'kind': {exc}") from exc


def _model_from_dict(d, source):
    if not isinstance(d, dict):
        raise ParseError(f"{source}: top level must be an object")
    for f in _MODEL_FIELDS:
        if f not in d:
            raise ParseError(f"{source}: missing field {f!r}")
    kind = _kind_field(d, source)
    mats = {}
    for f in _MODEL_FIELDS:
        try:
            mats[f] = np.array(d[f], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{source}: field {f!r}: {exc}") from exc
    model = RnnModel(kind=kind, **mats)
    for f, actual in (("n", model.n), ("m", model.m), ("nu", model.nu)):
        if f in d and int(d[f]) != actual:
            raise DimensionMismatch(f"{source}: declared {f}={d[f]} but matrices give {actual}")
    return model


def load_model(path) -> RnnModel:
    """Read a model JSON file (keys ``n, m, nu, kind, a0, bu, bsigma, c0, du``)."""
    return _model_from_dict(_read_json(path), str(path))


def save_model(model: RnnModel, path):
    Path(path).write_text(json.dumps(model.to_dict(), indent=2) + "\n")


def esn_from_dict(d, source="<dict>", echo_bound=1.0):
    if not isinstance(d, dict):
        raise ParseError(f"{source}: top level must be an object")
    for f in _ESN_FIELDS:
        if f not in d:
            raise ParseError(f"{source}: missing field {f!r}")
    kind = _kind_field(d, source)
    mats = {}
    for f in _ESN_FIELDS:
        try:
            mats[f] = np.array(d[f], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{source}: field {f!r}: {exc}") from exc
    esn = EsnModel(kind=kind, echo_bound=echo_bound, **mats)
    if "ns" in d and int(d["ns"]) != esn.ns:
        raise DimensionMismatch(f"{source}: declared ns={d['ns']} but wx gives {esn.ns}")
    return esn


def load_esn(path, echo_bound=1.0) -> EsnModel:
    """Read an ESN JSON file (keys ``ns, kind, wx, wu, wxy, wy``)."""
    return esn_from_dict(_read_json(path), str(path), echo_bound)


def save_esn(esn: EsnModel, path):
    Path(path).write_text(json.dumps(esn.to_dict(), indent=2) + "\n")
