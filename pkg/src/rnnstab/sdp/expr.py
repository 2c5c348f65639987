"""Matrix-valued affine expressions over structured decision variables.

An :class:`Affine` is a sum of

* matrix terms ``L op(X) R`` with ``op`` the identity or the transpose,
* scalar terms ``x * C`` for scalar variables,
* a constant matrix.

This covers every placement appearing in block LMIs (``S``, ``A S``,
``S A^T``, ``C S C^T``, ``Theta C S``, ``gamma I``, ...) while keeping the
structure needed for a fast Schur-complement assembly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["Var", "Affine", "MatTerm", "ScalarTerm", "as_affine", "trace", "SYM",
           "DIAG", "RECT", "SCALAR"]

SYM, DIAG, RECT, SCALAR = "sym", "diag", "rect", "scalar"


@dataclass(frozen=True)
class MatTerm:
    var: "Var"
    left: np.ndarray
    right: np.ndarray
    trans: bool = False


@dataclass(frozen=True)
class ScalarTerm:
    var: "Var"
    coef: np.ndarray


class _ExprOps:
    """Arithmetic shared by :class:`Var` and :class:`Affine`."""

    __array_priority__ = 100

    def __add__(self, other):
        return as_affine(self)._add(as_affine(other, self.shape))

    def __radd__(self, other):
        return as_affine(other, self.shape)._add(as_affine(self))

    def __sub__(self, other):
        return as_affine(self)._add(-as_affine(other, self.shape))

    def __rsub__(self, other):
        return as_affine(other, self.shape)._add(-as_affine(self))

    def __neg__(self):
        return as_affine(self)._scale(-1.0)

    def __mul__(self, k):
        if not np.isscalar(k):
            return NotImplemented
        return as_affine(self)._scale(float(k))

    __rmul__ = __mul__

    def __matmul__(self, m):
        return as_affine(self)._rmul(np.atleast_2d(np.asarray(m, dtype=float)))

    def __rmatmul__(self, m):
        return as_affine(self)._lmul(np.atleast_2d(np.asarray(m, dtype=float)))

    @property
    def T(self):
        return as_affine(self)._transpose()


class Var(_ExprOps):
    """Decision variable with a fixed structure.

    Use :meth:`rnnstab.sdp.Problem.sym` and friends to create variables;
    ``index`` and ``offset`` are filled in by the owning problem.
    """

    def __init__(self, name, kind, shape, index=-1):
        self.name = name
        self.kind = kind
        self.shape = tuple(shape)
        self.index = index
        if kind == SYM or kind == DIAG:
            assert self.shape[0] == self.shape[1]
        if kind == SYM:
            n = self.shape[0]
            self.nparams = n * (n + 1) // 2
        elif kind == DIAG:
            self.nparams = self.shape[0]
        elif kind == RECT:
            self.nparams = self.shape[0] * self.shape[1]
        elif kind == SCALAR:
            self.shape = (1, 1)
            self.nparams = 1
        else:
            raise ValueError(f"unknown variable kind {kind!r}")

    def __repr__(self):
        return f"Var({self.name!r}, {self.kind}, {self.shape})"

    def __hash__(self):
        return id(self)

    def __eq__(self, other):
        return self is other

    def unpack(self, params):
        """Matrix value from the parameter vector slice of this variable."""
        p = np.asarray(params, dtype=float)
        if self.kind == SYM:
            n = self.shape[0]
            x = np.zeros((n, n))
            iu = np.triu_indices(n)
            x[iu] = p
            return x + np.triu(x, 1).T
        if self.kind == DIAG:
            return np.diag(p)
        if self.kind == RECT:
            return p.reshape(self.shape)
        return p.reshape(1, 1)

    def pack(self, value):
        v = np.atleast_2d(np.asarray(value, dtype=float))
        if self.kind == SYM:
            return v[np.triu_indices(self.shape[0])]
        if self.kind == DIAG:
            return np.diag(v).copy()
        if self.kind == RECT:
            return v.reshape(-1).copy()
        return v.reshape(1).copy()

    def basis_matrix(self):
        """Dense map from parameters to the row-major entries of the value."""
        r, c = self.shape
        d = np.zeros((r * c, self.nparams))
        if self.kind == SYM:
            iu, ju = np.triu_indices(r)
            k = np.arange(iu.size)
            d[iu * c + ju, k] = 1.0
            d[ju * c + iu, k] = 1.0
        elif self.kind == DIAG:
            k = np.arange(r)
            d[k * c + k, k] = 1.0
        else:
            d[np.arange(r * c), np.arange(r * c)] = 1.0
        return d


class Affine(_ExprOps):
    """Affine matrix expression; immutable."""

    def __init__(self, shape, mat_terms=(), scal_terms=(), const=None):
        self.shape = tuple(shape)
        self.mat_terms = tuple(mat_terms)
        self.scal_terms = tuple(scal_terms)
        self.const = np.zeros(self.shape) if const is None else np.asarray(const, dtype=float)

    @property
    def is_constant(self):
        return not self.mat_terms and not self.scal_terms

    def variables(self):
        seen = {}
        for t in self.mat_terms:
            seen[id(t.var)] = t.var
        for t in self.scal_terms:
            seen[id(t.var)] = t.var
        return list(seen.values())

    def _add(self, other):
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch in sum: {self.shape} vs {other.shape}")
        return Affine(self.shape, self.mat_terms + other.mat_terms,
                      self.scal_terms + other.scal_terms, self.const + other.const)

    def _scale(self, k):
        return Affine(self.shape,
                      [MatTerm(t.var, k * t.left, t.right, t.trans) for t in self.mat_terms],
                      [ScalarTerm(t.var, k * t.coef) for t in self.scal_terms],
                      k * self.const)

    def _rmul(self, m):
        if m.shape[0] != self.shape[1]:
            raise ValueError(f"shape mismatch in product: {self.shape} @ {m.shape}")
        return Affine((self.shape[0], m.shape[1]),
                      [MatTerm(t.var, t.left, t.right @ m, t.trans) for t in self.mat_terms],
                      [ScalarTerm(t.var, t.coef @ m) for t in self.scal_terms],
                      self.const @ m)

    def _lmul(self, m):
        if m.shape[1] != self.shape[0]:
            raise ValueError(f"shape mismatch in product: {m.shape} @ {self.shape}")
        return Affine((m.shape[0], self.shape[1]),
                      [MatTerm(t.var, m @ t.left, t.right, t.trans) for t in self.mat_terms],
                      [ScalarTerm(t.var, m @ t.coef) for t in self.scal_terms],
                      m @ self.const)

    def _transpose(self):
        mats = []
        for t in self.mat_terms:
            flip = (not t.trans) if t.var.kind == RECT else False
            mats.append(MatTerm(t.var, t.right.T, t.left.T, flip))
        return Affine((self.shape[1], self.shape[0]), mats,
                      [ScalarTerm(t.var, t.coef.T) for t in self.scal_terms],
                      self.const.T)

    def value(self, values):
        """Evaluate given a mapping ``var -> matrix value``."""
        out = self.const.copy()
        for t in self.mat_terms:
            x = values[t.var]
            out += t.left @ (x.T if t.trans else x) @ t.right
        for t in self.scal_terms:
            out += float(np.asarray(values[t.var]).reshape(-1)[0]) * t.coef
        return out


def as_affine(x, shape=None) -> Affine:
    """Coerce a variable, array, scalar or ``None`` (zero) to :class:`Affine`."""
    if isinstance(x, Affine):
        return x
    if isinstance(x, Var):
        if x.kind == SCALAR:
            return Affine((1, 1), scal_terms=[ScalarTerm(x, np.ones((1, 1)))])
        r, c = x.shape
        return Affine(x.shape, mat_terms=[MatTerm(x, np.eye(r), np.eye(c), False)])
    if x is None:
        if shape is None:
            raise ValueError("cannot infer the shape of a zero block")
        return Affine(shape)
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if shape is None:
            a = a.reshape(1, 1)
        elif shape[0] == shape[1]:
            # scalar constants broadcast as multiples of the identity
            a = float(a) * np.eye(shape[0])
        elif float(a) == 0.0:
            a = np.zeros(shape)
        else:
            raise ValueError("nonzero scalar constant in a non-square position")
    return Affine(np.atleast_2d(a).shape, const=np.atleast_2d(a))


def scalar_times(var: Var, m) -> Affine:
    """Expression ``var * M`` for a scalar variable and a constant matrix."""
    if var.kind != SCALAR:
        raise ValueError("scalar_times needs a scalar variable")
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return Affine(m.shape, scal_terms=[ScalarTerm(var, m)])


def trace(expr) -> Affine:
    """Trace of a square affine expression as a 1x1 expression."""
    e = as_affine(expr)
    r, c = e.shape
    if r != c:
        raise ValueError("trace of a non-square expression")
    mats = []
    for t in e.mat_terms:
        # tr(L op(X) R) = sum_i e_i^T L op(X) R e_i, kept as one term per i
        for i in range(r):
            mats.append(MatTerm(t.var, t.left[i:i + 1, :], t.right[:, i:i + 1], t.trans))
    scal = [ScalarTerm(t.var, np.array([[np.trace(t.coef)]])) for t in e.scal_terms]
    return Affine((1, 1), mats, scal, np.array([[np.trace(e.const)]]))
