"""LMI problem container and its compiled, structure-exploiting operator form."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import DIAG, RECT, SCALAR, SYM, Affine, Var, as_affine

__all__ = ["Problem", "LmiBlock", "Compiled", "LogDet"]

# strict blocks are imposed as  F(x) >= eps * I  with eps = STRICT_REL * (1 + max|F0|)
STRICT_REL = 1e-7


@dataclass
class LmiBlock:
    """Symmetric block matrix ``[[E_00, ...], [E_10, E_11, ...], ...] >= 0``.

    Only the lower triangle (including the diagonal) defines the block; a
    supplied upper triangle is checked against it at build time.
    """

    entries: list
    sizes: list
    strict: bool = True
    name: str = ""

    @property
    def size(self):
        return int(sum(self.sizes))

    @property
    def const_scale(self):
        return max((float(np.abs(self.entries[i][j].const).max(initial=0.0))
                    for i in range(len(self.sizes)) for j in range(i + 1)), default=0.0)

    def margin(self):
        return STRICT_REL * (1.0 + self.const_scale) if self.strict else 0.0

    def value(self, values):
        offs = np.concatenate([[0], np.cumsum(self.sizes)])
        z = np.zeros((self.size, self.size))
        for i in range(len(self.sizes)):
            for j in range(i + 1):
                v = self.entries[i][j].value(values)
                z[offs[i]:offs[i + 1], offs[j]:offs[j + 1]] = v
                if i != j:
                    z[offs[j]:offs[j + 1], offs[i]:offs[i + 1]] = v.T
        return 0.5 * (z + z.T)


@dataclass(frozen=True)
class LogDet:
    """Objective ``maximize logdet(var)`` (only for backends that support it)."""

    var: Var


class Problem:
    """Collection of variables, LMI blocks and a linear (or log-det) objective."""

    def __init__(self, name=""):
        self.name = name
        self.vars: list[Var] = []
        self.blocks: list[LmiBlock] = []
        self.objective: Optional[Affine] = None
        self.logdet: Optional[LogDet] = None
        self.sense = "min"

    def _add_var(self, name, kind, shape):
        if any(v.name == name for v in self.vars):
            raise ValueError(f"duplicate variable name {name!r}")
        v = Var(name, kind, shape, len(self.vars))
        self.vars.append(v)
        return v

    def sym(self, name, n):
        return self._add_var(name, SYM, (n, n))

    def diag(self, name, n):
        return self._add_var(name, DIAG, (n, n))

    def rect(self, name, r, c):
        return self._add_var(name, RECT, (r, c))

    def scalar(self, name):
        return self._add_var(name, SCALAR, (1, 1))

    def var(self, name):
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def nparams(self):
        return sum(v.nparams for v in self.vars)

    def add_lmi(self, entries, strict=True, name="", check=True):
        """Add ``[[...]] >= 0`` (``> 0`` if ``strict``).

        ``entries`` is a nested list of expressions, arrays, scalars or
        ``None`` (zero); a single expression is treated as a 1x1 block.
        """
        if not isinstance(entries, (list, tuple)):
            entries = [[entries]]
        nb = len(entries)
        rows = [list(r) for r in entries]
        if any(len(r) < i + 1 for i, r in enumerate(rows)):
            raise ValueError("each block row must reach at least the diagonal")
        sizes = []
        for i in range(nb):
            d = rows[i][i]
            if d is None:
                raise ValueError(f"diagonal entry {i} may not be None")
            sizes.append(as_affine(d).shape[0] if not np.isscalar(d) else 1)
        lower = [[None] * (i + 1) for i in range(nb)]
        for i in range(nb):
            for j in range(i + 1):
                e = as_affine(rows[i][j], (sizes[i], sizes[j]))
                if e.shape != (sizes[i], sizes[j]):
                    raise ValueError(f"entry ({i},{j}) has shape {e.shape}, "
                                     f"expected {(sizes[i], sizes[j])}")
                lower[i][j] = e
        block = LmiBlock(lower, sizes, strict, name)
        if check:
            self._check_symmetric(block, rows)
        self.blocks.append(block)
        return block

    def _check_symmetric(self, block, rows, trials=2):
        rng = np.random.default_rng(0)
        used = {}
        for i in range(len(block.sizes)):
            for j in range(i + 1):
                for v in block.entries[i][j].variables():
                    used[id(v)] = v
        for _ in range(trials):
            vals = {v: v.unpack(rng.standard_normal(v.nparams)) for v in used.values()}
            for i in range(len(block.sizes)):
                d = block.entries[i][i].value(vals)
                if not np.allclose(d, d.T, atol=1e-9 * (1 + np.abs(d).max())):
                    raise ValueError(f"block {block.name!r}: diagonal entry {i} is not symmetric")
                for j in range(i + 1, len(rows[i])):
                    if rows[i][j] is None:
                        continue
                    up = as_affine(rows[i][j], (block.sizes[i], block.sizes[j])).value(vals)
                    lo = block.entries[j][i].value(vals) if j < len(block.entries) else None
                    if lo is not None and not np.allclose(up, lo.T, atol=1e-9 * (1 + np.abs(up).max())):
                        raise ValueError(f"block {block.name!r}: entries ({i},{j}) and ({j},{i}) "
                                         "are not transposes")

    def minimize(self, expr):
        self.objective = as_affine(expr)
        self.sense = "min"
        self.logdet = None

    def maximize(self, expr):
        self.objective = as_affine(expr)
        self.sense = "max"
        self.logdet = None

    def maximize_logdet(self, var, plus=None):
        self.logdet = LogDet(var)
        self.objective = None if plus is None else as_affine(plus)
        self.sense = "max"

    def values_from(self, params):
        out = {}
        off = 0
        for v in self.vars:
            out[v] = v.unpack(params[off:off + v.nparams])
            off += v.nparams
        return out

    def dump_triplets(self, path):
        """Write the problem in sparse-triplet text form.

        One line per nonzero: ``block i j param value`` where ``param`` is
        ``0`` for the constant and ``k + 1`` for the ``k``-th parameter.
        """
        comp = Compiled(self, box=None)
        with open(path, "w") as fh:
            fh.write(f"# {self.name} params={comp.p} blocks={len(comp.blocks)} lp_rows={comp.lp_a.shape[0]}\n")
            basis = np.eye(comp.p)
            for b, blk in enumerate(comp.blocks):
                for k in range(comp.p + 1):
                    if k == 0:
                        mat = blk.f0
                    else:
                        mat = comp.block_linear(b, basis[k - 1])
                    ii, jj = np.nonzero(np.triu(mat))
                    for i, j in zip(ii, jj):
                        fh.write(f"{b} {i} {j} {k} {mat[i, j]:.17g}\n")
            for r in range(comp.lp_a.shape[0]):
                fh.write(f"lp {r} 0 0 {comp.lp_b[r]:.17g}\n")
                for k in np.nonzero(comp.lp_a[r])[0]:
                    fh.write(f"lp {r} 0 {k + 1} {comp.lp_a[r, k]:.17g}\n")


@dataclass
class _Piece:
    var_index: int
    ra: slice
    rb: slice
    left: np.ndarray
    right: np.ndarray
    trans: bool


@dataclass
class _CBlock:
    size: int
    f0: np.ndarray
    pieces: list
    scal: dict          # var index -> dense coefficient matrix
    margin: float
    source: int
    name: str = ""


class Compiled:
    """Operator form ``F(x) = F0 + sum_k x_k F_k`` of a :class:`Problem`.

    Blocks of size one become dense linear rows; every parameter gets an
    optional box ``|x_k| <= box``.  With ``phase1=True`` an extra scalar
    ``t`` is appended and subtracted from every constraint.
    """

    def __init__(self, problem: Problem, box: Optional[float] = 1e6, phase1=False):
        self.problem = problem
        self.vars = list(problem.vars)
        self.offsets = np.cumsum([0] + [v.nparams for v in self.vars])
        self.p = int(self.offsets[-1]) + (1 if phase1 else 0)
        self.phase1 = phase1
        self.box = box
        self.t_index = self.p - 1 if phase1 else None
        self.bases = {v.index: v.basis_matrix() for v in self.vars if v.kind in (SYM, DIAG)}
        blocks = []
        lp_rows, lp_b, lp_margin, lp_src = [], [], [], []
        for bi, blk in enumerate(problem.blocks):
            cb = self._compile_block(blk, bi)
            if cb.size == 1:
                a = self._adjoint_block(cb, np.ones((1, 1)))
                lp_rows.append(a)
                lp_b.append(float(cb.f0[0, 0]))
                lp_margin.append(cb.margin)
                lp_src.append(bi)
            else:
                blocks.append(cb)
        self.blocks = blocks
        self.lp_a = np.array(lp_rows).reshape(len(lp_rows), self.p)
        self.lp_b = np.array(lp_b, dtype=float)
        self.lp_margin = np.array(lp_margin, dtype=float)
        self.lp_src = lp_src
        # margins enter the constant term
        for cb in self.blocks:
            cb.f0 = cb.f0 - cb.margin * np.eye(cb.size)
        self.lp_b = self.lp_b - self.lp_margin
        if phase1:
            for cb in self.blocks:
                cb.scal[self.t_index] = -np.eye(cb.size)
            if self.lp_a.shape[0]:
                self.lp_a[:, self.t_index] = -1.0
            # t <= 1 keeps phase I bounded
            row = np.zeros(self.p)
            row[self.t_index] = -1.0
            self.lp_a = np.vstack([self.lp_a, row])
            self.lp_b = np.append(self.lp_b, 1.0)
            self.lp_src.append(-1)
        # objective
        self.c = np.zeros(self.p)
        self.c0 = 0.0
        if phase1:
            self.c[self.t_index] = -1.0
        elif problem.objective is not None:
            cb = self._compile_entries([[problem.objective]], [1], 0.0, -1)
            sign = 1.0 if problem.sense == "min" else -1.0
            self.c = sign * self._adjoint_block(cb, np.ones((1, 1)))
            self.c0 = sign * float(cb.f0[0, 0])
        self._pairs = self._pair_index()

    # -- construction -------------------------------------------------------

    def _compile_block(self, blk: LmiBlock, bi):
        return self._compile_entries(blk.entries, blk.sizes, blk.margin(), bi, blk.name)

    def _compile_entries(self, entries, sizes, margin, bi, name=""):
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        n = int(offs[-1])
        f0 = np.zeros((n, n))
        pieces = []
        scal = {}
        for i in range(len(sizes)):
            ri = slice(offs[i], offs[i + 1])
            for j in range(i + 1):
                rj = slice(offs[j], offs[j + 1])
                e = entries[i][j]
                f0[ri, rj] += e.const
                if i != j:
                    f0[rj, ri] += e.const.T
                for t in e.mat_terms:
                    pieces.append(_Piece(t.var.index, ri, rj, t.left, t.right, t.trans))
                    if i != j:
                        tr = (not t.trans) if t.var.kind == RECT else False
                        pieces.append(_Piece(t.var.index, rj, ri, t.right.T, t.left.T, tr))
                for t in e.scal_terms:
                    m = scal.setdefault(t.var.index, np.zeros((n, n)))
                    m[ri, rj] += t.coef
                    if i != j:
                        m[rj, ri] += t.coef.T
        f0 = 0.5 * (f0 + f0.T)
        return _CBlock(n, f0, pieces, scal, margin, bi, name)

    def _pair_index(self):
        """Group piece pairs by (var1, var2, trans1, trans2) across blocks."""
        pairs = defaultdict(list)
        for b, cb in enumerate(self.blocks):
            for p1 in cb.pieces:
                for p2 in cb.pieces:
                    if p1.var_index <= p2.var_index:
                        pairs[(p1.var_index, p2.var_index, p1.trans, p2.trans)].append((b, p1, p2))
        return dict(pairs)

    # -- linear maps --------------------------------------------------------

    def _var_values(self, x):
        vals = {}
        for v in self.vars:
            vals[v.index] = v.unpack(x[self.offsets[v.index]:self.offsets[v.index + 1]])
        return vals

    def _xidx(self, var_index):
        return int(self.offsets[var_index])

    def block_linear(self, b, x, vals=None):
        """Linear part of block ``b`` at parameters ``x`` (no constant)."""
        cb = self.blocks[b]
        if vals is None:
            vals = self._var_values(x)
        z = np.zeros((cb.size, cb.size))
        for pc in cb.pieces:
            xv = vals[pc.var_index]
            z[pc.ra, pc.rb] += pc.left @ (xv.T if pc.trans else xv) @ pc.right
        for k, m in cb.scal.items():
            z += x[self._scalar_pos(k)] * m
        return z

    def _scalar_pos(self, k):
        if k == self.t_index and self.phase1:
            return self.t_index
        return int(self.offsets[k])

    def forward(self, x):
        """Return ``(blocks, lp)`` with ``blocks[b] = F_b(x)`` and ``lp = A x + b``."""
        vals = self._var_values(x)
        mats = [cb.f0 + self.block_linear(b, x, vals) for b, cb in enumerate(self.blocks)]
        lp = self.lp_a @ x + self.lp_b
        return mats, lp

    def linear(self, dx):
        vals = self._var_values(dx)
        mats = [self.block_linear(b, dx, vals) for b in range(len(self.blocks))]
        return mats, self.lp_a @ dx

    def _grad_to_params(self, v, g):
        if v.kind == SYM:
            return self.bases[v.index].T @ g.reshape(-1)
        if v.kind == DIAG:
            return np.diag(g).copy()
        return g.reshape(-1)

    def _adjoint_block(self, cb, z, out=None):
        if out is None:
            out = np.zeros(self.p)
        grads = {}
        for pc in cb.pieces:
            g = pc.right @ z[pc.rb, pc.ra] @ pc.left
            g = g if pc.trans else g.T
            if pc.var_index in grads:
                grads[pc.var_index] += g
            else:
                grads[pc.var_index] = g.copy()
        for vi, g in grads.items():
            v = self.vars[vi]
            o = self.offsets[vi]
            out[o:o + v.nparams] += self._grad_to_params(v, g)
        for k, m in cb.scal.items():
            out[self._scalar_pos(k)] += float(np.sum(m * z))
        return out

    def adjoint(self, zs, zlp):
        """``A*(Z)_k = sum_b tr(F_bk Z_b) + (A^T z)_k``; each ``Z_b`` symmetric."""
        out = self.lp_a.T @ zlp if self.lp_a.shape[0] else np.zeros(self.p)
        out = np.array(out, dtype=float)
        for cb, z in zip(self.blocks, zs):
            self._adjoint_block(cb, z, out)
        return out

    # -- Schur complement ---------------------------------------------------

    def _reduce_lead(self, t, v):
        """Reduce the two leading axes of ``t`` (var coordinates) to parameters."""
        r, c = v.shape
        rest = t.shape[2:]
        if v.kind == RECT:
            return t.reshape((r * c,) + rest)
        if v.kind == DIAG:
            k = np.arange(r)
            return t[k, k]
        iu, ju = np.triu_indices(r)
        red = t[iu, ju] + t[ju, iu]
        diag = iu == ju
        red[diag] *= 0.5
        return red

    def schur(self, winv, xs, lp_w):
        """Assemble ``M_kl = sum_b tr(W1_b F_bk W2_b F_bl) + (A^T diag(lp_w) A)_kl``.

        ``winv`` are the inverse primal slacks and ``xs`` the dual blocks.
        """
        p = self.p
        mmat = np.zeros((p, p))
        nonscalar = {v.index for v in self.vars if v.kind != SCALAR}
        for (i1, i2, t1, t2), plist in self._pairs.items():
            if i1 not in nonscalar or i2 not in nonscalar:
                continue
            a1s = []
            a2s = []
            for b, p1, p2 in plist:
                w1, w2 = winv[b], xs[b]
                a1s.append(p2.right @ w1[p2.rb, p1.ra] @ p1.left)
                a2s.append(p1.right @ w2[p1.rb, p2.ra] @ p2.left)
            a1 = np.stack(a1s)
            a2 = np.stack(a2s)
            # T[i,j,k,l] = sum_P A1[P,l,i] * A2[P,j,k]   (op coordinates)
            t = np.tensordot(a1, a2, axes=(0, 0)).transpose(1, 2, 3, 0)
            if t1:
                t = t.transpose(1, 0, 2, 3)
            if t2:
                t = t.transpose(0, 1, 3, 2)
            v1, v2 = self.vars[i1], self.vars[i2]
            red = self._reduce_lead(t, v1)
            red = np.moveaxis(self._reduce_lead(np.moveaxis(red, 0, -1), v2), -1, 0)
            o1, o2 = self.offsets[i1], self.offsets[i2]
            mmat[o1:o1 + v1.nparams, o2:o2 + v2.nparams] += red
            if i1 != i2:
                mmat[o2:o2 + v2.nparams, o1:o1 + v1.nparams] += red.T
        # columns for scalar variables: M[:, k] = A*(sym(W2 F_k W1))
        scal_idx = sorted({k for cb in self.blocks for k in cb.scal})
        for k in scal_idx:
            zs = []
            for b, cb in enumerate(self.blocks):
                fk = cb.scal.get(k)
                if fk is None:
                    zs.append(np.zeros((cb.size, cb.size)))
                else:
                    z = xs[b] @ fk @ winv[b]
                    zs.append(0.5 * (z + z.T))
            col = self.adjoint(zs, np.zeros(self.lp_a.shape[0]))
            pos = self._scalar_pos(k)
            mmat[:, pos] = col
            mmat[pos, :] = col
        if self.lp_a.shape[0]:
            mmat += (self.lp_a.T * lp_w) @ self.lp_a
        return mmat
