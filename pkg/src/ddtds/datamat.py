"""Shifted data matrices and the data-based system representations.

For a record over [-hbar, T] and shifts (i, j) the blocks are

    U[:, c]  = u(c - i)        X_h[:, c] = x(c - j)
    X0[:, c] = x(c)            X1[:, c]  = x(c + 1)      c = 0 .. T-1

and W0 stacks ``[U; X_h; X0]``. A state shift of ``None`` drops the delayed
state block altogether, which is the right model for plants without a
state-delay channel (A1 = 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import InvalidInputError, NotIdentifiableError, OutOfWindowError
from .model import DataRecord

__all__ = [
    "DataMatrices",
    "RankReport",
    "build_shifted",
    "numerical_rank",
    "pinv",
    "row_space_projector",
    "open_loop_representation",
    "solve_gk",
    "gain_pattern",
]


@dataclass(frozen=True)
class RankReport:
    numerical_rank: int
    singular_values: np.ndarray
    threshold: float
    required: Optional[int] = None

    @property
    def is_rich(self) -> bool:
        return self.required is not None and self.numerical_rank == self.required


def _finite(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def _default_threshold(s, shape):
    smax = s[0] if s.size else 0.0
    return smax * max(shape) * np.finfo(float).eps


def numerical_rank(M, threshold=None, required=None) -> RankReport:
    """Count singular values above ``threshold``.

    The default threshold is ``sigma_max * max(rows, cols) * eps``.
    """
    M = _finite(M)
    s = np.linalg.svd(M, compute_uv=False)
    tol = _default_threshold(s, M.shape) if threshold is None else float(threshold)
    return RankReport(int(np.sum(s > tol)), s, tol, required)


def pinv(M, threshold=None):
    """Moore-Penrose pseudoinverse by SVD, truncating at the rank threshold."""
    M = _finite(M)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = _default_threshold(s, M.shape) if threshold is None else float(threshold)
    keep = s > tol
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def row_space_projector(M, threshold=None):
    """Orthogonal projector ``M^+ M`` onto the row space of M."""
    M = _finite(M)
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = _default_threshold(s, M.shape) if threshold is None else float(threshold)
    V = Vt[s > tol]
    return V.T @ V


@dataclass(frozen=True)
class DataMatrices:
    """Shifted data blocks for one (input shift, state shift) pair."""

    U: np.ndarray
    Xh: Optional[np.ndarray]
    X0: np.ndarray
    X1: np.ndarray
    i: int
    j: Optional[int]
    hbar: int
    rank_threshold: Optional[float] = None
    source: Optional[DataRecord] = field(default=None, repr=False, compare=False)

    @property
    def T(self) -> int:
        return self.X0.shape[1]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def has_state_delay(self) -> bool:
        return self.Xh is not None

    @property
    def W0(self) -> np.ndarray:
        if self.Xh is None:
            return np.vstack([self.U, self.X0])
        return np.vstack([self.U, self.Xh, self.X0])

    @property
    def required_rank(self) -> int:
        """Row count of W0, i.e. the rank that full data richness demands."""
        return self.W0.shape[0]

    @property
    def distinct_rows(self) -> int:
        """Rank attainable by W0 once a duplicated X0 block (j = 0) is discounted."""
        if self.Xh is not None and self.j == 0:
            return self.m + self.n
        return self.required_rank

    def rank(self) -> RankReport:
        return numerical_rank(self.W0, self.rank_threshold, self.required_rank)

    def scale(self) -> float:
        return float(max(1.0, np.abs(self.W0).max(), np.abs(self.X1).max()))

    def compress(self, rtol=1e-12):
        """Project the columns onto the row space of ``[W0; X1]``.

        Returns ``(reduced, V)`` with ``V`` (T x r) orthonormal. Every product
        ``M Q`` with ``M`` a data block equals ``M V Y`` for ``Y = V' Q``, so a
        program in ``Y`` loses nothing and ``Q = V Y`` maps solutions back.
        """
        Z = np.vstack([self.W0, self.X1])
        _, s, Vt = np.linalg.svd(Z, full_matrices=False)
        V = Vt[s > s[0] * rtol].T if s.size and s[0] > 0 else np.zeros((self.T, 0))
        red = replace(self, U=self.U @ V, Xh=None if self.Xh is None else self.Xh @ V,
                      X0=self.X0 @ V, X1=self.X1 @ V)
        return red, V


def build_shifted(rec: DataRecord, i: int, j: Optional[int], rank_threshold=None) -> DataMatrices:
    """Build the shifted blocks for input shift ``i`` and state shift ``j``."""
    hbar, T = rec.hbar, rec.T
    for name, s in (("input", i), ("state", j)):
        if s is None and name == "state":
            continue
        if int(s) != s or s < 0 or s > hbar:
            raise OutOfWindowError(f"{name} shift {s} outside [0, hbar={hbar}]")
    cols = np.arange(T) + hbar
    U = rec.u[cols - i].T.copy()
    Xh = None if j is None else rec.x[cols - j].T.copy()
    X0 = rec.x[cols].T.copy()
    X1 = rec.x[cols + 1].T.copy()
    return DataMatrices(U, Xh, X0, X1, int(i), None if j is None else int(j), hbar,
                        rank_threshold, rec)


def _require_rank(dm: DataMatrices, what: str):
    rep = dm.rank()
    if rep.numerical_rank != dm.required_rank:
        raise NotIdentifiableError(
            f"{what}: rank(W0) = {rep.numerical_rank} < {dm.required_rank}; the data do not "
            f"determine the system matrices uniquely (richer excitation or more samples needed)",
            rank=rep.numerical_rank, required=dm.required_rank, pair=(dm.i, dm.j))
    return rep


def open_loop_representation(dm: DataMatrices):
    """Return ``(B, A1, A0)`` read off ``X1 W0^+``.

    Without a state-delay block the returned ``A1`` is the zero matrix.
    """
    _require_rank(dm, "open-loop representation")
    M = dm.X1 @ pinv(dm.W0, dm.rank_threshold)
    m, n = dm.m, dm.n
    B = M[:, :m]
    if dm.has_state_delay:
        A1 = M[:, m:m + n]
        A0 = M[:, m + n:]
    else:
        A1 = np.zeros((n, n))
        A0 = M[:, m:]
    return B, A1, A0


def gain_pattern(K, n, with_state_delay=True):
    """The block matrix ``diag(K, I, I)`` (or ``diag(K, I)``) that W0 G_K must equal."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    m = K.shape[0]
    if with_state_delay:
        P = np.zeros((m + 2 * n, 3 * n))
        P[:m, :n] = K
        P[m:m + n, n:2 * n] = np.eye(n)
        P[m + n:, 2 * n:] = np.eye(n)
    else:
        P = np.zeros((m + n, 2 * n))
        P[:m, :n] = K
        P[m:, n:] = np.eye(n)
    return P


def solve_gk(dm: DataMatrices, K):
    """Minimum-norm ``G_K`` with ``W0 G_K = diag(K, I, I)``.

    The closed loop is then ``X1 G_K = [B K | A1 | A0]``. Without a state-delay
    block, G_K has 2n columns and ``X1 G_K = [B K | A0]``.
    """
    K = _finite(K, "K")
    if K.shape != (dm.m, dm.n):
        raise InvalidInputError(f"gain must have shape {(dm.m, dm.n)}, got {K.shape}")
    _require_rank(dm, "closed-loop representation")
    return pinv(dm.W0, dm.rank_threshold) @ gain_pattern(K, dm.n, dm.has_state_delay)
