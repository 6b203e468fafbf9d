"""Identification of constant delays from row-space distances.

For every candidate pair (i, j) the data matrix W0(i, j) is built and

    d(i, j) = || X1 (I - W0^+ W0) ||_2

measures how far the successor states are from the row space of W0. With
noise-free data the true pair gives zero; with noisy data it stays below the
norm of the noise in X1.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .datamat import DataMatrices, build_shifted, numerical_rank, row_space_projector
from .exceptions import InvalidInputError, NotIdentifiableError
from .model import DataRecord

__all__ = [
    "Identified",
    "Undecidable",
    "NoneFound",
    "DelayScan",
    "distance",
    "scan_delays",
    "noise_norm_bound",
    "delta_bound",
]


@dataclass(frozen=True)
class Identified:
    i: int
    j: Optional[int]

    def __str__(self):
        return f"Identified({self.i}, {self.j})"


@dataclass(frozen=True)
class Undecidable:
    candidates: Tuple[Tuple[int, Optional[int]], ...]

    def __str__(self):
        return f"Undecidable({list(self.candidates)})"


@dataclass(frozen=True)
class NoneFound:
    def __str__(self):
        return "NoneFound"


@dataclass
class DelayScan:
    """Distance grid indexed ``distances[i, j]``; NaN marks skipped pairs."""

    distances: np.ndarray
    threshold: float
    verdict: object
    input_shifts: List[int]
    state_shifts: List[Optional[int]]
    skipped: List[Tuple[int, Optional[int]]] = field(default_factory=list)

    @property
    def separation_ratio(self) -> float:
        """Second-smallest over smallest finite distance (inf when the smallest is 0)."""
        d = np.sort(self.distances[np.isfinite(self.distances)].ravel())
        if d.size < 2:
            return float("nan")
        if d[0] == 0:
            return float("inf")
        return float(d[1] / d[0])

    def row(self, j=0):
        """Distances along the input-shift axis for one state shift."""
        return self.distances[:, self.state_shifts.index(j)]

    def as_dict(self):
        return {
            "threshold": self.threshold,
            "verdict": str(self.verdict),
            "input_shifts": self.input_shifts,
            "state_shifts": self.state_shifts,
            "distances": [[None if not np.isfinite(v) else float(v) for v in row]
                          for row in self.distances],
            "skipped": [list(p) for p in self.skipped],
            "separation_ratio": self.separation_ratio,
        }


def distance(dm: DataMatrices) -> float:
    """Spectral norm of the part of X1 outside the row space of W0."""
    rep = numerical_rank(dm.W0, dm.rank_threshold)
    if rep.numerical_rank != dm.distinct_rows:
        raise NotIdentifiableError(
            f"pair (i={dm.i}, j={dm.j}): rank(W0) = {rep.numerical_rank}, "
            f"need {dm.distinct_rows}", rank=rep.numerical_rank,
            required=dm.distinct_rows, pair=(dm.i, dm.j))
    R = row_space_projector(dm.W0, dm.rank_threshold)
    resid = dm.X1 - dm.X1 @ R
    return float(np.linalg.norm(resid, 2))


def noise_norm_bound(n_rows: int, T: int, variance: float) -> float:
    """Expected-norm bound ``sqrt(n_rows * T * variance)`` for i.i.d. noise."""
    if n_rows < 0 or T < 0 or variance < 0:
        raise InvalidInputError("noise bound arguments must be non-negative")
    return float(np.sqrt(n_rows * T * variance))


def delta_bound(a: float, w_bound: float, x1_bound: float) -> float:
    """Bound on the noise mismatch: ``a * w_bound + x1_bound``.

    ``a`` bounds the norm of the stacked system matrices, ``w_bound`` the
    noise in W0 and ``x1_bound`` the noise in X1.
    """
    if min(a, w_bound, x1_bound) < 0:
        raise InvalidInputError("bound arguments must be non-negative")
    return float(a * w_bound + x1_bound)


def scan_delays(rec: DataRecord, hbar: Optional[int] = None, r: Optional[float] = None,
                fixed_i: Optional[int] = None, fixed_j=None, variance: Optional[float] = None,
                state_delay: bool = True, rank_threshold=None, workers: int = 1) -> DelayScan:
    """Evaluate the distance over the candidate grid and classify the result.

    Parameters
    ----------
    rec : DataRecord
        Recorded data covering ``[-hbar, T]``.
    hbar : int, optional
        Largest candidate delay, defaults to ``rec.hbar``.
    r : float, optional
        Acceptance threshold. Defaults to :func:`noise_norm_bound` when
        ``variance`` is given and to ``1e-8 * ||X1||_2`` otherwise.
    fixed_i, fixed_j : int, optional
        Restrict the scan to a line of the grid.
    state_delay : bool
        With ``False`` the state block is dropped and only input shifts are
        scanned (reported under state shift ``None``).
    """
    hbar = rec.hbar if hbar is None else int(hbar)
    if hbar > rec.hbar:
        raise InvalidInputError(f"scan bound {hbar} exceeds the record prefix {rec.hbar}")
    ii = [int(fixed_i)] if fixed_i is not None else list(range(hbar + 1))
    if not state_delay:
        jj = [None]
    elif fixed_j is not None:
        jj = [int(fixed_j)]
    else:
        jj = list(range(hbar + 1))

    if r is None:
        if variance is not None and variance > 0:
            r = noise_norm_bound(rec.n, rec.T, variance)
        else:
            X1 = build_shifted(rec, 0, None).X1
            r = 1e-8 * np.linalg.norm(X1, 2)
    if r < 0:
        raise InvalidInputError(f"threshold must be non-negative, got {r}")

    cells = [(a, ia, b, jb) for a, ia in enumerate(ii) for b, jb in enumerate(jj)]

    def _eval(cell):
        _, i, _, j = cell
        try:
            return distance(build_shifted(rec, i, j, rank_threshold))
        except NotIdentifiableError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            vals = list(ex.map(_eval, cells))
    else:
        vals = [_eval(c) for c in cells]

    D = np.full((len(ii), len(jj)), np.nan)
    skipped = []
    for (a, i, b, j), v in zip(cells, vals):
        if v is None:
            skipped.append((i, j))
        else:
            D[a, b] = v
    if skipped:
        warnings.warn(f"rank hypothesis fails for pairs {skipped}; they were skipped",
                      RuntimeWarning, stacklevel=2)

    hits = [(ii[a], jj[b]) for a in range(len(ii)) for b in range(len(jj))
            if np.isfinite(D[a, b]) and D[a, b] <= r]
    if len(hits) == 1:
        verdict = Identified(*hits[0])
    elif hits:
        verdict = Undecidable(tuple(hits))
    else:
        verdict = NoneFound()
    return DelayScan(D, float(r), verdict, ii, jj, skipped)
