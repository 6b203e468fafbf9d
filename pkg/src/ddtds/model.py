"""Delayed discrete-time LTI plants, ZOH discretization and simulation.

Trajectories are stored as arrays whose row ``r`` holds the sample at time
``k = r - hbar``, so the recorded window ``[-hbar, T]`` maps onto rows
``0 .. T + hbar``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .exceptions import ContractViolation, DivergenceError, InvalidInputError

__all__ = [
    "DelayedLtiSystem",
    "DelayPolicy",
    "Constant",
    "DelaySequence",
    "RandomInRange",
    "NoiseSplit",
    "DataRecord",
    "ClosedLoopTrajectory",
    "zoh_discretize",
    "multisine",
    "simulate_open_loop",
    "simulate_closed_loop",
    "add_measurement_noise",
]


def _as_matrix(a, name, shape=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if shape is not None and a.shape != shape:
        raise InvalidInputError(f"{name} has shape {a.shape}, expected {shape}")
    return a


@dataclass(frozen=True)
class DelayedLtiSystem:
    """x(k+1) = A0 x(k) + A1 x(k - h1(k)) + B u(k - h2(k)) [+ D0 w(k)].

    The optional performance output is
    z(k) = L1 x(k) + L2 x(k - h1(k)) + D u(k - h2(k)).
    """

    A0: np.ndarray
    A1: np.ndarray
    B: np.ndarray
    hbar: int = 0
    L1: Optional[np.ndarray] = None
    L2: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    D0: Optional[np.ndarray] = None

    def __post_init__(self):
        A0 = _as_matrix(self.A0, "A0")
        n = A0.shape[0]
        if A0.shape != (n, n):
            raise InvalidInputError(f"A0 must be square, got {A0.shape}")
        A1 = _as_matrix(self.A1, "A1", (n, n))
        B = _as_matrix(self.B, "B")
        if B.shape[0] != n:
            # accept a flat input vector for single-input plants
            if B.shape == (1, n):
                B = B.T
            else:
                raise InvalidInputError(f"B must have {n} rows, got {B.shape}")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "B", B)
        if int(self.hbar) != self.hbar or self.hbar < 0:
            raise InvalidInputError(f"hbar must be a non-negative integer, got {self.hbar}")
        object.__setattr__(self, "hbar", int(self.hbar))

        perf = (self.L1, self.L2, self.D)
        if any(p is not None for p in perf):
            q = _as_matrix(next(p for p in perf if p is not None), "performance").shape[0]
            L1 = _as_matrix(self.L1 if self.L1 is not None else np.zeros((q, n)), "L1", (q, n))
            L2 = _as_matrix(self.L2 if self.L2 is not None else np.zeros((q, n)), "L2", (q, n))
            D = _as_matrix(self.D if self.D is not None else np.zeros((q, B.shape[1])), "D",
                           (q, B.shape[1]))
            object.__setattr__(self, "L1", L1)
            object.__setattr__(self, "L2", L2)
            object.__setattr__(self, "D", D)
        if self.D0 is not None:
            D0 = _as_matrix(self.D0, "D0")
            if D0.shape[0] != n:
                raise InvalidInputError(f"D0 must have {n} rows, got {D0.shape}")
            object.__setattr__(self, "D0", D0)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def q(self) -> Optional[int]:
        return None if self.L1 is None else self.L1.shape[0]

    @property
    def p(self) -> Optional[int]:
        return None if self.D0 is None else self.D0.shape[1]

    @property
    def has_performance(self) -> bool:
        return self.L1 is not None

    def with_hbar(self, hbar: int) -> "DelayedLtiSystem":
        return DelayedLtiSystem(self.A0, self.A1, self.B, hbar, self.L1, self.L2, self.D, self.D0)


# --------------------------------------------------------------------------
# delay policies


class DelayPolicy:
    """Produces the delay value h(k) for k = 0 .. T-1."""

    def realize(self, T: int, hbar: int) -> np.ndarray:
        h = np.asarray(self._values(T), dtype=int)
        if h.shape != (T,):
            raise ContractViolation(f"delay policy produced {h.shape[0]} values, need {T}")
        if np.any(h < 0) or np.any(h > hbar):
            bad = int(np.flatnonzero((h < 0) | (h > hbar))[0])
            raise ContractViolation(
                f"delay {h[bad]} at k={bad} lies outside [0, hbar={hbar}]")
        return h

    def _values(self, T):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(DelayPolicy):
    h: int

    def _values(self, T):
        return np.full(T, self.h, dtype=int)


@dataclass(frozen=True)
class DelaySequence(DelayPolicy):
    values: tuple

    def __init__(self, values):
        object.__setattr__(self, "values", tuple(int(v) for v in values))

    def _values(self, T):
        if len(self.values) < T:
            raise ContractViolation(
                f"delay sequence has {len(self.values)} entries, horizon needs {T}")
        return np.array(self.values[:T], dtype=int)


@dataclass(frozen=True)
class RandomInRange(DelayPolicy):
    """Uniform integer delays on ``[lo, hi]``, drawn independently per step."""

    lo: int
    hi: int
    seed: Optional[int] = None

    def _values(self, T):
        if self.lo > self.hi:
            raise ContractViolation(f"empty delay range [{self.lo}, {self.hi}]")
        rng = np.random.default_rng(self.seed)
        return rng.integers(self.lo, self.hi + 1, size=T)


def _policy(h) -> DelayPolicy:
    if isinstance(h, DelayPolicy):
        return h
    if np.ndim(h) > 0:
        return DelaySequence(h)
    return Constant(int(h))


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class NoiseSplit:
    x_nom: np.ndarray
    x_delta: np.ndarray
    u_nom: np.ndarray
    u_delta: np.ndarray


@dataclass(frozen=True)
class DataRecord:
    """Input/state samples over the window [-hbar, T].

    ``x`` has ``T + hbar + 1`` rows. ``u`` has the same number of rows; the
    last one (time T) is never used by the data matrices.
    """

    x: np.ndarray
    u: np.ndarray
    T: int
    hbar: int
    noise_split: Optional[NoiseSplit] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if u.ndim == 1:
            u = u[:, None]
        rows = self.T + self.hbar + 1
        if self.T <= self.hbar:
            raise ContractViolation(f"need T > hbar, got T={self.T}, hbar={self.hbar}")
        if x.shape[0] != rows:
            raise ContractViolation(f"x must cover [-hbar, T] ({rows} rows), got {x.shape[0]}")
        if u.shape[0] == rows - 1:
            u = np.vstack([u, np.zeros((1, u.shape[1]))])
        if u.shape[0] != rows:
            raise ContractViolation(f"u must cover [-hbar, T] ({rows} rows), got {u.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise InvalidInputError("record has non-finite samples")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)
        if self.noise_split is not None:
            ns = self.noise_split
            if not (np.array_equal(ns.x_nom + ns.x_delta, x)
                    and np.array_equal(ns.u_nom + ns.u_delta, u)):
                raise ContractViolation("noise split does not add up to the record")

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    @property
    def k(self) -> np.ndarray:
        """Time index of every row."""
        return np.arange(-self.hbar, self.T + 1)

    def x_at(self, k):
        return self.x[np.asarray(k) + self.hbar]

    def u_at(self, k):
        return self.u[np.asarray(k) + self.hbar]

    def nominal(self) -> "DataRecord":
        if self.noise_split is None:
            return self
        ns = self.noise_split
        return DataRecord(ns.x_nom, ns.u_nom, self.T, self.hbar)


@dataclass
class ClosedLoopTrajectory:
    """Closed-loop samples; ``x`` row r is time r - hbar, the other arrays start at k=0."""

    x: np.ndarray
    u: np.ndarray          # applied (delayed) input, rows k = 0..T-1
    h1: np.ndarray
    h2: np.ndarray
    hbar: int
    z: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    x_ref: Optional[np.ndarray] = None

    @property
    def T(self) -> int:
        return self.x.shape[0] - self.hbar - 1

    def x_at(self, k):
        return self.x[np.asarray(k) + self.hbar]

    def error(self) -> np.ndarray:
        """State deviation from the reference (the state itself without one)."""
        if self.x_ref is None:
            return self.x
        return self.x - self.x_ref


# --------------------------------------------------------------------------
# discretization and signals


def zoh_discretize(Ac, Bc, Ts):
    """Exact zero-order-hold discretization.

    Exponentiates the augmented block matrix ``[[Ac Ts, Bc Ts], [0, 0]]`` and
    reads ``A0`` and ``B`` off its top block row.
    """
    Ac = _as_matrix(Ac, "Ac")
    Bc = _as_matrix(Bc, "Bc")
    n = Ac.shape[0]
    if Ac.shape != (n, n):
        raise InvalidInputError(f"Ac must be square, got {Ac.shape}")
    if Bc.shape[0] != n:
        if Bc.shape == (1, n):
            Bc = Bc.T
        else:
            raise InvalidInputError(f"Bc must have {n} rows, got {Bc.shape}")
    if not (np.isfinite(Ts) and Ts > 0):
        raise InvalidInputError(f"sampling period must be positive, got {Ts}")
    m = Bc.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac * Ts
    M[:n, n:] = Bc * Ts
    E = expm(M)
    return E[:n, :n], E[:n, n:]


def multisine(k, terms, Ts):
    """Sum of sinusoids sampled at t = k Ts.

    ``terms`` is a sequence of ``(amplitude, angular_frequency)`` pairs.
    """
    t = np.asarray(k, dtype=float) * Ts
    out = np.zeros_like(t)
    for a, w in terms:
        out = out + a * np.sin(w * t)
    return out


# --------------------------------------------------------------------------
# simulation


def _history(x_init, hbar, n):
    if x_init is None:
        return np.zeros((hbar + 1, n))
    h = np.asarray(x_init, dtype=float)
    if h.ndim == 1:
        # a single vector means x(0); earlier history equals it
        if h.shape[0] != n:
            raise InvalidInputError(f"initial state must have length {n}")
        return np.tile(h, (hbar + 1, 1))
    if h.shape != (hbar + 1, n):
        raise InvalidInputError(f"initial history must have shape {(hbar + 1, n)}, got {h.shape}")
    return h


def simulate_open_loop(sys: DelayedLtiSystem, h1, h2, u, x_init=None, T=None) -> DataRecord:
    """Run the delayed recursion for k = 0 .. T-1.

    ``u`` covers [-hbar, T-1] (``T + hbar`` rows) or [-hbar, T]. ``x_init``
    is the history on [-hbar, 0], a single vector (held constant over the
    history), or None for a zero history.
    """
    hbar, n, m = sys.hbar, sys.n, sys.m
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != m:
        raise InvalidInputError(f"input has {u.shape[1]} channels, plant has {m}")
    if T is None:
        T = u.shape[0] - hbar
    if u.shape[0] < T + hbar:
        raise ContractViolation(f"input must cover [-hbar, T-1] ({T + hbar} rows)")
    u = u[: T + hbar + 1]
    d1 = _policy(h1).realize(T, hbar)
    d2 = _policy(h2).realize(T, hbar)
    x = np.zeros((T + hbar + 1, n))
    x[: hbar + 1] = _history(x_init, hbar, n)
    for k in range(T):
        r = k + hbar
        x[r + 1] = sys.A0 @ x[r] + sys.A1 @ x[r - d1[k]] + sys.B @ u[r - d2[k]]
    return DataRecord(x, u, T, hbar)


def simulate_closed_loop(sys: DelayedLtiSystem, K, h1, h2, x_init=None, T=100, r=None,
                         w=None, ceiling=1e12, hold_input_history=False) -> ClosedLoopTrajectory:
    """Simulate u(k) = K (x(k) - x_ref) through the delayed input channel.

    The plant sees ``K (x(k - h2(k)) - x_ref)`` at time k; with a reference
    ``r`` the target is ``x_ref = [r, 0, ..., 0]``. When ``w`` is given the
    disturbance enters through ``D0`` and the performance output
    ``z(k) = L1 e(k) + L2 e(k-h1) + D K e(k-h2)`` (e = x - x_ref) is recorded.
    ``hold_input_history=True`` applies u = 0 whenever k - h2(k) < 0.
    """
    hbar, n = sys.hbar, sys.n
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (sys.m, n):
        raise InvalidInputError(f"gain must have shape {(sys.m, n)}, got {K.shape}")
    d1 = _policy(h1).realize(T, hbar)
    d2 = _policy(h2).realize(T, hbar)
    x_ref = None
    if r is not None:
        x_ref = np.zeros(n)
        x_ref[0] = float(r)
    ref = np.zeros(n) if x_ref is None else x_ref
    if w is not None:
        if sys.D0 is None:
            raise InvalidInputError("disturbance given but the plant has no D0")
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[0] < T:
            w = np.vstack([w, np.zeros((T - w.shape[0], w.shape[1]))])
        w = w[:T]
    want_z = w is not None or sys.has_performance
    x = np.zeros((T + hbar + 1, n))
    x[: hbar + 1] = _history(x_init, hbar, n)
    u = np.zeros((T, sys.m))
    z = np.zeros((T, sys.q)) if want_z and sys.has_performance else None
    for k in range(T):
        rr = k + hbar
        e_del = x[rr - d2[k]] - ref
        if hold_input_history and k - d2[k] < 0:
            u[k] = 0.0
        else:
            u[k] = K @ e_del
        xh1 = x[rr - d1[k]]
        nxt = sys.A0 @ x[rr] + sys.A1 @ xh1 + sys.B @ u[k]
        if w is not None:
            nxt = nxt + sys.D0 @ w[k]
        if z is not None:
            z[k] = sys.L1 @ (x[rr] - ref) + sys.L2 @ (xh1 - ref) + sys.D @ u[k]
        if not np.all(np.isfinite(nxt)) or np.linalg.norm(nxt) > ceiling:
            raise DivergenceError(f"closed loop diverged at k={k + 1} (|x| > {ceiling:g})", k + 1)
        x[rr + 1] = nxt
    return ClosedLoopTrajectory(x, u, d1, d2, hbar, z=z, w=w, x_ref=x_ref)


def add_measurement_noise(rec: DataRecord, variance: float, seed=None,
                          inputs: bool = False) -> DataRecord:
    """Add i.i.d. zero-mean Gaussian noise to the state samples (and optionally inputs)."""
    if variance < 0:
        raise InvalidInputError(f"variance must be non-negative, got {variance}")
    base = rec.nominal()
    rng = np.random.default_rng(seed)
    sd = np.sqrt(variance)
    x_delta = rng.normal(0.0, 1.0, size=base.x.shape) * sd
    u_delta = np.zeros_like(base.u)
    if inputs:
        u_delta = rng.normal(0.0, 1.0, size=base.u.shape) * sd
    x = base.x + x_delta
    u = base.u + u_delta
    split = NoiseSplit(base.x.copy(), x - base.x, base.u.copy(), u - base.u)
    return DataRecord(x, u, rec.T, rec.hbar, split)
