"""Matrix decision variables and affine matrix expressions.

An :class:`Affine` expression of shape (r, c) is stored as a constant plus one
sparse linear map per variable acting on that variable's coordinate vector,
so that

    vec(expr) = vec(const) + sum_V  M_V @ coords(V)

with ``vec`` stacking columns. Symmetric variables use ``n (n + 1) / 2``
coordinates: diagonal entries directly and off-diagonal entries scaled by
``sqrt(2)`` so that the coordinate inner product matches the trace inner
product. General variables use the column-stacked entries.
"""
from __future__ import annotations

import itertools
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from ..exceptions import StructuralError

__all__ = ["MatrixVar", "Affine", "BlockExpr", "STAR", "as_affine", "commutation",
           "hstack", "vstack", "scalar_identity"]

_ids = itertools.count()
_SQRT2 = np.sqrt(2.0)


def commutation(r, c):
    """Permutation K with vec(X.T) = K vec(X) for X of shape (r, c)."""
    a, b = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
    rows = (b + a * c).ravel()
    cols = (a + b * r).ravel()
    return sp.csr_matrix((np.ones(r * c), (rows, cols)), shape=(r * c, r * c))


class MatrixVar:
    """A matrix-valued decision variable.

    Parameters
    ----------
    name : str
    rows, cols : int
    symmetric : bool
        Symmetric variables must be square.
    positive : bool
        Request ``V >= margin * I`` when the program is lowered.
    """

    __array_ufunc__ = None  # numpy operands defer to the reflected operators

    def __init__(self, name: str, rows: int, cols: Optional[int] = None,
                 symmetric: bool = False, positive: bool = False):
        cols = rows if cols is None else cols
        if symmetric and rows != cols:
            raise StructuralError(f"symmetric variable {name} must be square, got {rows}x{cols}")
        if positive and not symmetric:
            raise StructuralError(f"positive variable {name} must be symmetric")
        self.name = name
        self.rows = int(rows)
        self.cols = int(cols)
        self.symmetric = bool(symmetric)
        self.positive = bool(positive)
        self._uid = next(_ids)
        self._basis = None

    def __repr__(self):
        kind = "sym" if self.symmetric else "gen"
        return f"MatrixVar({self.name!r}, {self.rows}x{self.cols}, {kind})"

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        """Number of scalar coordinates."""
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def basis(self) -> sp.csr_matrix:
        """Sparse map from coordinates to the column-stacked matrix entries."""
        if self._basis is None:
            n = self.rows
            if not self.symmetric:
                self._basis = sp.identity(self.rows * self.cols, format="csr")
            else:
                rows, cols, vals = [], [], []
                for idx, (i, j) in enumerate(_upper_pairs(n)):
                    if i == j:
                        rows.append(i + j * n); cols.append(idx); vals.append(1.0)
                    else:
                        w = 1.0 / _SQRT2
                        rows += [i + j * n, j + i * n]; cols += [idx, idx]; vals += [w, w]
                self._basis = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, self.size))
        return self._basis

    def to_coords(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float).reshape(self.shape)
        if not self.symmetric:
            return value.ravel(order="F")
        n = self.rows
        out = np.empty(self.size)
        for idx, (i, j) in enumerate(_upper_pairs(n)):
            out[idx] = value[i, j] if i == j else _SQRT2 * 0.5 * (value[i, j] + value[j, i])
        return out

    def from_coords(self, coords) -> np.ndarray:
        flat = self.basis() @ np.asarray(coords, dtype=float)
        return flat.reshape(self.shape, order="F")

    # operator sugar: variables behave like their affine embedding
    def expr(self) -> "Affine":
        return Affine(np.zeros(self.shape), {self: self.basis()})

    def __add__(self, o): return self.expr() + o
    def __radd__(self, o): return self.expr() + o
    def __sub__(self, o): return self.expr() - o
    def __rsub__(self, o): return as_affine(o) - self.expr()
    def __neg__(self): return -self.expr()
    def __mul__(self, s): return self.expr() * s
    def __rmul__(self, s): return self.expr() * s
    def __matmul__(self, o): return self.expr() @ o
    def __rmatmul__(self, o): return self.expr().__rmatmul__(o)

    @property
    def T(self) -> "Affine":
        return self.expr().T


def _upper_pairs(n):
    """Upper-triangle index pairs in column order: (0,0), (0,1), (1,1), (0,2), ..."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def as_affine(x, shape=None) -> "Affine":
    if isinstance(x, Affine):
        return x
    if isinstance(x, MatrixVar):
        return x.expr()
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if shape is None:
            a = a.reshape(1, 1)
        else:
            a = np.full(shape, float(a))
    elif a.ndim == 1:
        a = a[:, None]
    return Affine(a, {})


class Affine:
    """Affine matrix expression ``const + sum of linear maps of variables``."""

    __array_ufunc__ = None  # numpy operands defer to the reflected operators

    def __init__(self, const, terms: Dict[MatrixVar, sp.spmatrix]):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {v: sp.csr_matrix(M) for v, M in terms.items()}

    @property
    def shape(self):
        return self.const.shape

    @property
    def variables(self):
        return list(self.terms)

    def __repr__(self):
        names = ", ".join(v.name for v in self.terms)
        return f"Affine(shape={self.shape}, vars=[{names}])"

    # arithmetic ---------------------------------------------------------
    def _check_same(self, o, op):
        if o.shape != self.shape:
            raise StructuralError(f"cannot {op} expressions of shape {self.shape} and {o.shape}")

    def __add__(self, o):
        o = as_affine(o, self.shape)
        self._check_same(o, "add")
        terms = dict(self.terms)
        for v, M in o.terms.items():
            terms[v] = terms[v] + M if v in terms else M
        return Affine(self.const + o.const, terms)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, {v: -M for v, M in self.terms.items()})

    def __sub__(self, o):
        return self + (-as_affine(o, self.shape))

    def __rsub__(self, o):
        return as_affine(o, self.shape) - self

    def __mul__(self, s):
        if not np.isscalar(s):
            raise StructuralError("use @ for matrix products; * takes scalars only")
        s = float(s)
        return Affine(self.const * s, {v: M * s for v, M in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, R):
        if isinstance(R, (Affine, MatrixVar)):
            raise StructuralError("product of two affine expressions is not affine")
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != self.shape[1]:
            raise StructuralError(f"shape mismatch in product: {self.shape} @ {R.shape}")
        r = self.shape[0]
        op = sp.kron(sp.csr_matrix(R.T), sp.identity(r), format="csr")
        return Affine(self.const @ R, {v: op @ M for v, M in self.terms.items()})

    def __rmatmul__(self, L):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape[1] != self.shape[0]:
            raise StructuralError(f"shape mismatch in product: {L.shape} @ {self.shape}")
        c = self.shape[1]
        op = sp.kron(sp.identity(c), sp.csr_matrix(L), format="csr")
        return Affine(L @ self.const, {v: op @ M for v, M in self.terms.items()})

    @property
    def T(self):
        K = commutation(*self.shape)
        return Affine(self.const.T, {v: K @ M for v, M in self.terms.items()})

    def sym(self):
        """Symmetric part ``(E + E.T) / 2``."""
        if self.shape[0] != self.shape[1]:
            raise StructuralError(f"symmetric part of non-square expression {self.shape}")
        return (self + self.T) * 0.5

    # evaluation ---------------------------------------------------------
    def value(self, assignment) -> np.ndarray:
        """Evaluate given ``{var or var name: matrix value}``."""
        out = self.const.ravel(order="F").copy()
        for v, M in self.terms.items():
            val = assignment[v] if v in assignment else assignment[v.name]
            out += M @ v.to_coords(val)
        return out.reshape(self.shape, order="F")

    def is_symmetric(self, tol=0.0) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if np.max(np.abs(self.const - self.const.T), initial=0.0) > tol:
            return False
        K = commutation(*self.shape)
        for M in self.terms.values():
            D = K @ M - M
            if D.nnz and np.max(np.abs(D.data)) > tol:
                return False
        return True


class _Star:
    def __repr__(self):
        return "STAR"


STAR = _Star()


class BlockExpr:
    """Block matrix of affine expressions with optional ``STAR`` mirror blocks.

    ``None`` or ``0`` marks a zero block whose size is inferred from its block
    row and column. ``STAR`` below the diagonal stands for the transpose of the
    mirrored upper block.
    """

    def __init__(self, grid):
        self.grid = [list(row) for row in grid]
        nr = len(self.grid)
        if nr == 0 or any(len(row) != nr for row in self.grid):
            raise StructuralError("block grid must be square and non-empty")
        self.nblocks = nr
        self.heights, self.widths = self._infer_sizes()

    @staticmethod
    def _is_zero(b):
        return b is None or (np.isscalar(b) and b == 0)

    def _block(self, a, b):
        blk = self.grid[a][b]
        if blk is STAR:
            if a <= b:
                raise StructuralError(f"STAR at block ({a}, {b}) is not below the diagonal")
            up = self.grid[b][a]
            if up is STAR:
                raise StructuralError(f"STAR at block ({a}, {b}) mirrors another STAR")
            return None if self._is_zero(up) else as_affine(up).T
        return None if self._is_zero(blk) else as_affine(blk)

    def _infer_sizes(self):
        nb = self.nblocks
        h = [None] * nb
        w = [None] * nb
        for a in range(nb):
            for b in range(nb):
                blk = self._block(a, b)
                if blk is None:
                    continue
                r, c = blk.shape
                if h[a] is None:
                    h[a] = r
                elif h[a] != r:
                    raise StructuralError(
                        f"block ({a}, {b}) has {r} rows, block row {a} has {h[a]}")
                if w[b] is None:
                    w[b] = c
                elif w[b] != c:
                    raise StructuralError(
                        f"block ({a}, {b}) has {c} columns, block column {b} has {w[b]}")
        for a in range(nb):
            # a symmetric block layout has matching row and column partitions
            if h[a] is None:
                h[a] = w[a]
            if w[a] is None:
                w[a] = h[a]
            if h[a] is None:
                raise StructuralError(f"cannot infer the size of block row {a}")
            if h[a] != w[a]:
                raise StructuralError(
                    f"diagonal block ({a}, {a}) is {h[a]}x{w[a]}, expected square")
        return h, w

    @property
    def shape(self):
        return (sum(self.heights), sum(self.widths))

    def assemble(self, check_symmetric=True) -> Affine:
        """Assemble into a single :class:`Affine`; lower blocks mirror upper ones."""
        N = self.shape[0]
        off = np.concatenate([[0], np.cumsum(self.heights)])
        const = np.zeros((N, N))
        pieces: Dict[MatrixVar, list] = {}
        for a in range(self.nblocks):
            for b in range(a, self.nblocks):
                blk = self._block(a, b)
                if blk is None:
                    continue
                if a == b and check_symmetric and not blk.is_symmetric(1e-12 * (1 + _mag(blk))):
                    raise StructuralError(f"diagonal block ({a}, {a}) is not symmetric")
                mirrors = [(a, b, blk)] if a == b else [(a, b, blk), (b, a, blk.T)]
                for (ra, cb, e) in mirrors:
                    r0, c0 = off[ra], off[cb]
                    r, c = e.shape
                    const[r0:r0 + r, c0:c0 + c] = e.const
                    if not e.terms:
                        continue
                    # map local vec index (i + j r) to global (r0 + i) + (c0 + j) N
                    ii, jj = np.meshgrid(np.arange(r), np.arange(c), indexing="ij")
                    loc = (ii + jj * r).ravel()
                    glob = ((r0 + ii) + (c0 + jj) * N).ravel()
                    S = sp.csr_matrix((np.ones(loc.size), (glob, loc)), shape=(N * N, r * c))
                    for v, M in e.terms.items():
                        pieces.setdefault(v, []).append(S @ M)
        terms = {v: _sum(ms) for v, ms in pieces.items()}
        return Affine(const, terms)

    def value(self, assignment) -> np.ndarray:
        return self.assemble(check_symmetric=False).value(assignment)


def _mag(e: Affine) -> float:
    m = np.max(np.abs(e.const), initial=0.0)
    for M in e.terms.values():
        if M.nnz:
            m = max(m, np.max(np.abs(M.data)))
    return float(m)


def _sum(ms):
    out = ms[0]
    for M in ms[1:]:
        out = out + M
    return out.tocsr()


def hstack(items) -> Affine:
    """Horizontal concatenation of affine expressions and constants."""
    exprs = [as_affine(e) for e in items]
    r = exprs[0].shape[0]
    if any(e.shape[0] != r for e in exprs):
        raise StructuralError("hstack operands must have equal row counts")
    total = sum(e.shape[1] for e in exprs)
    out, c0 = Affine(np.zeros((r, total)), {}), 0
    for e in exprs:
        c = e.shape[1]
        sel = np.zeros((c, total))
        sel[:, c0:c0 + c] = np.eye(c)
        out = out + e @ sel
        c0 += c
    return out


def vstack(items) -> Affine:
    """Vertical concatenation of affine expressions and constants."""
    return hstack([as_affine(e).T for e in items]).T


def scalar_identity(t: MatrixVar, r: int) -> Affine:
    """``t * I_r`` for a 1 x 1 variable ``t``."""
    if t.shape != (1, 1):
        raise StructuralError(f"scalar_identity needs a 1x1 variable, got {t.shape}")
    rows = np.arange(r) * (r + 1)
    M = sp.csr_matrix((np.ones(r), (rows, np.zeros(r, dtype=int))), shape=(r * r, 1))
    return Affine(np.zeros((r, r)), {t: M})
