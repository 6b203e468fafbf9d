"""Independent checks of synthesized controllers by simulation.

Nothing here looks at the LMIs. A gain and its recovered certificate are
judged only through closed-loop trajectories: the Lyapunov-Krasovskii
functional must decrease, states must decay, and the measured cost and
energy gain must respect the certified bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import DivergenceError, InvalidInputError, NoConvergenceError
from .lmi import min_eig
from .model import (ClosedLoopTrajectory, DelayedLtiSystem, RandomInRange, simulate_closed_loop)

__all__ = [
    "LkfCertificate",
    "lkf_value",
    "lkf_series",
    "LkfCheck",
    "check_lkf_decrease",
    "decay_rate",
    "CostEstimate",
    "empirical_cost",
    "simulate_cost",
    "GainEstimate",
    "disturbance_ensemble",
    "empirical_l2_gain",
    "tracking_settles",
    "ValidationReport",
    "validate_gain",
    "LKF_TOL",
]

LKF_TOL = 1e-9


@dataclass(frozen=True)
class LkfCertificate:
    """Weights of the functional ``V = V_P + V_S + V_R1 + V_R2``."""

    P: np.ndarray
    S: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    hbar: int

    def __post_init__(self):
        n = np.asarray(self.P).shape[0]
        for name in ("P", "S", "R1", "R2"):
            M = np.asarray(getattr(self, name), dtype=float)
            if M.shape != (n, n):
                raise InvalidInputError(f"{name} must be {n}x{n}, got {M.shape}")
            M = 0.5 * (M + M.T)
            if min_eig(M) <= 0:
                raise InvalidInputError(f"{name} is not positive definite")
            object.__setattr__(self, name, M)
        if self.hbar < 0 or int(self.hbar) != self.hbar:
            raise InvalidInputError("hbar must be a non-negative integer")

    @classmethod
    def from_result(cls, res, hbar=None):
        """Build from a feasible ``SynthesisResult``."""
        if res.recovered is None:
            raise InvalidInputError("result carries no certificate")
        c = res.recovered
        return cls(c.P, c.S, c.R1, c.R2, res.spec.hbar if hbar is None else hbar)

    @property
    def n(self) -> int:
        return self.P.shape[0]


def _quad(X, M):
    return np.einsum("ij,jk,ik->i", X, M, X)


def lkf_value(cert: LkfCertificate, window) -> float:
    """Evaluate ``V(k)`` from the states ``x(k - hbar), ..., x(k)``.

    ``window`` has ``hbar + 1`` rows, oldest first. The double sum of the
    ``R`` terms only involves the differences ``x(j+1) - x(j)`` for
    ``j = k - hbar, ..., k - 1``, so no older samples are needed.
    """
    W = np.atleast_2d(np.asarray(window, dtype=float))
    h = cert.hbar
    if W.shape[0] == 1 and cert.n > 1 and W.shape[1] == 1:
        W = W.T
    if W.shape != (h + 1, cert.n):
        raise InvalidInputError(f"window must have shape {(h + 1, cert.n)}, got {W.shape}")
    return float(lkf_series(cert, W)[0])


def lkf_series(cert: LkfCertificate, x) -> np.ndarray:
    """``V(k)`` for every k whose window fits in ``x`` (rows oldest first).

    Returns ``len(x) - hbar`` values; entry 0 belongs to row ``hbar``.
    """
    x = np.asarray(x, dtype=float)
    h = cert.hbar
    N = x.shape[0] - h
    if N < 1:
        raise InvalidInputError(f"need at least hbar + 1 = {h + 1} samples, got {x.shape[0]}")
    vp = _quad(x[h:], cert.P)
    if h == 0:
        return vp
    qs = _quad(x[:-1], cert.S)
    dy = np.diff(x, axis=0)
    qr = _quad(dy, cert.R1 + cert.R2)
    # a difference at lag l = k - j enters (hbar - l + 1) times
    w_s = np.ones(h)
    w_r = h * np.arange(h, 0, -1, dtype=float)  # convolve flips the kernel
    vs = np.convolve(qs, w_s, mode="valid")
    vr = np.convolve(qr, w_r, mode="valid")
    return vp + vs + vr


@dataclass
class LkfCheck:
    """Decrease check along one or more trajectories."""

    violations: int
    worst_margin: float
    steps: int
    tol: float
    at: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def merge(self, other: "LkfCheck") -> "LkfCheck":
        return LkfCheck(self.violations + other.violations,
                        max(self.worst_margin, other.worst_margin),
                        self.steps + other.steps, self.tol, self.at + other.at)


def check_lkf_decrease(cert: LkfCertificate, traj: ClosedLoopTrajectory,
                       tol: float = LKF_TOL) -> LkfCheck:
    """Flag every step with ``V(k+1) - V(k) > tol * V(k)``.

    A certified gain gives strict decrease whenever the window is nonzero.
    The relative tolerance absorbs rounding in V. Steps whose window is
    identically zero are skipped. ``worst_margin`` is the largest value of
    ``(V(k+1) - V(k)) / V(k)`` seen.
    """
    if traj.hbar < cert.hbar:
        raise InvalidInputError("trajectory history is shorter than the certificate window")
    x = traj.x if traj.x_ref is None else traj.x - traj.x_ref
    x = x[traj.hbar - cert.hbar:]
    V = lkf_series(cert, x)
    dV = np.diff(V)
    base = V[:-1]
    live = base > 0
    rel = np.full(dV.shape, -np.inf)
    rel[live] = dV[live] / base[live]
    bad = np.flatnonzero(live & (dV > tol * base))
    worst = float(rel.max()) if rel.size else -np.inf
    return LkfCheck(int(bad.size), worst, int(live.sum()), tol, bad.tolist())


def decay_rate(traj_or_x, fraction: float = 0.5, floor: float = 1e-280) -> float:
    """Per-step decay factor from a least-squares fit of ``log ||x(k)||``.

    Uses the trailing ``fraction`` of the samples. Samples at or below
    ``floor`` are dropped. Returns 0 when the state vanishes.
    """
    if isinstance(traj_or_x, ClosedLoopTrajectory):
        x = traj_or_x.error()[traj_or_x.hbar:]
    else:
        x = np.asarray(traj_or_x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
    nrm = np.linalg.norm(x, axis=1)
    start = int(len(nrm) * (1.0 - fraction))
    k = np.arange(start, len(nrm))
    y = nrm[start:]
    ok = y > floor
    if ok.sum() < 2:
        return 0.0
    slope = np.polyfit(k[ok], np.log(y[ok]), 1)[0]
    return float(np.exp(slope))


@dataclass
class CostEstimate:
    """Partial sum of ``z'z`` with a geometric bound on the neglected tail."""

    J: float
    tail_bound: float
    rho: float
    steps: int

    @property
    def upper(self) -> float:
        return self.J + self.tail_bound


def empirical_cost(traj_or_z, rtol: float = 1e-9, strict: bool = False) -> CostEstimate:
    """``J = sum_k z(k)' z(k)`` over the recorded horizon.

    The tail beyond the horizon is bounded by ``e_last * r / (1 - r)`` with
    ``r = rho**2`` fitted on ``|z|``. Raises :class:`NoConvergenceError` if
    ``z`` does not decay, and with ``strict=True`` also if the tail bound
    exceeds ``rtol * J``.
    """
    z = traj_or_z.z if isinstance(traj_or_z, ClosedLoopTrajectory) else traj_or_z
    if z is None:
        raise InvalidInputError("trajectory has no performance output")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    e = np.einsum("ij,ij->i", z, z)
    J = float(e.sum())
    if J == 0.0:
        return CostEstimate(0.0, 0.0, 0.0, len(e))
    rho = decay_rate(z)
    if rho >= 1.0:
        raise NoConvergenceError(f"performance output does not decay (rate {rho:.4g})")
    r = rho * rho
    tail = float(e[-1] * r / (1.0 - r)) if e.size else 0.0
    if strict and tail > rtol * J:
        raise NoConvergenceError(f"tail bound {tail:.3g} exceeds {rtol:g} of the partial sum")
    return CostEstimate(J, tail, rho, len(e))


def simulate_cost(sys: DelayedLtiSystem, K, h1, h2, x0, T: int = 500, rtol: float = 1e-9,
                  max_T: int = 64000) -> CostEstimate:
    """Cost from ``x(0) = x0`` with a zero pre-history, doubling T until the tail is negligible."""
    n, hbar = sys.n, sys.hbar
    hist = np.zeros((hbar + 1, n))
    hist[-1] = np.asarray(x0, dtype=float).ravel()
    while True:
        tr = simulate_closed_loop(sys, K, h1, h2, hist, T)
        est = empirical_cost(tr)
        if est.tail_bound <= rtol * max(est.J, 1e-300) or T >= max_T:
            if est.tail_bound > rtol * max(est.J, 1e-300):
                raise NoConvergenceError(f"cost not converged after {T} steps")
            return est
        T *= 2


@dataclass
class GainEstimate:
    """Largest energy ratio over an ensemble of disturbances."""

    ratio: float  # sum |z|^2 / sum |w|^2
    ratios: np.ndarray = field(repr=False)
    labels: list = field(repr=False)

    @property
    def amplitude(self) -> float:
        return float(np.sqrt(self.ratio))

    @property
    def worst(self) -> str:
        return self.labels[int(np.argmax(self.ratios))]


def disturbance_ensemble(p: int, length: int, n_freq: int = 24, n_random: int = 8,
                         seed: Optional[int] = 0):
    """Sinusoids over a frequency grid, impulses, and random sequences.

    Yields ``(label, w)`` with ``w`` of shape ``(length, p)``.
    """
    k = np.arange(length)
    for c in range(p):
        for om in np.linspace(0.0, np.pi, n_freq):
            w = np.zeros((length, p))
            w[:, c] = np.cos(om * k)
            yield f"sin[{c}] omega={om:.4f}", w
        w = np.zeros((length, p))
        w[0, c] = 1.0
        yield f"impulse[{c}]", w
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        yield f"random[{i}]", rng.standard_normal((length, p))


def empirical_l2_gain(sys: DelayedLtiSystem, K, h1=0, h2=0, ensemble=None, length: int = 400,
                      settle: Optional[int] = None) -> GainEstimate:
    """Maximum of ``sum |z|^2 / sum |w|^2`` from a zero initial history.

    Each disturbance acts for ``length`` steps and the loop then runs
    ``settle`` more steps (default ``length``) so the response can decay.
    Raises :class:`NoConvergenceError` if a response does not decay.
    """
    if sys.D0 is None or not sys.has_performance:
        raise InvalidInputError("plant needs D0 and a performance output")
    settle = length if settle is None else settle
    if ensemble is None:
        ensemble = disturbance_ensemble(sys.D0.shape[1], length)
    ratios, labels = [], []
    for label, w in ensemble:
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        ww = float((w * w).sum())
        if ww == 0:
            continue
        T = w.shape[0] + settle
        try:
            tr = simulate_closed_loop(sys, K, h1, h2, None, T, w=w)
        except DivergenceError as exc:
            raise NoConvergenceError(f"closed loop unstable under {label}: {exc}") from exc
        tail = tr.x[tr.hbar + w.shape[0]:]
        if settle > 10 and decay_rate(tail) >= 1.0 and np.linalg.norm(tail[-1]) > 1e-12:
            raise NoConvergenceError(f"response to {label} does not decay")
        ratios.append(float((tr.z * tr.z).sum()) / ww)
        labels.append(label)
    ratios = np.array(ratios)
    return GainEstimate(float(ratios.max()) if ratios.size else 0.0, ratios, labels)


def tracking_settles(traj: ClosedLoopTrajectory, tol: float = 1e-3, tail: float = 0.25):
    """First k after which ``|x1(k) - r| < tol`` holds, or None.

    Settling must happen before the final ``tail`` fraction of the horizon.
    """
    err = np.abs(traj.error()[traj.hbar:, 0])
    bad = np.flatnonzero(err >= tol)
    k_settle = 0 if bad.size == 0 else int(bad[-1]) + 1
    if k_settle >= len(err) * (1.0 - tail):
        return None
    return k_settle


@dataclass
class ValidationReport:
    """Summary of a Monte-Carlo validation run."""

    lkf: Optional[LkfCheck]
    decay_rate: float
    decay_rates: np.ndarray = field(repr=False)
    tracking_settle: Optional[int] = None
    tracking_ok: Optional[bool] = None
    cost: Optional[float] = None
    cost_bound: Optional[float] = None
    gain_ratio: Optional[float] = None
    gain_bound: Optional[float] = None
    diverged: int = 0
    runs: int = 0
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decay_rate < 0:
            raise InvalidInputError("decay rate must be non-negative")

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def as_dict(self):
        out = {"passed": self.passed, "decay_rate": self.decay_rate, "runs": self.runs,
               "diverged": self.diverged, "checks": self.checks}
        if self.lkf is not None:
            out["lkf"] = {"violations": self.lkf.violations,
                          "worst_margin": self.lkf.worst_margin, "steps": self.lkf.steps,
                          "tol": self.lkf.tol}
        for key in ("tracking_settle", "tracking_ok", "cost", "cost_bound", "gain_ratio",
                    "gain_bound"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


def validate_gain(sys: DelayedLtiSystem, K, cert: Optional[LkfCertificate] = None,
                  n_histories: int = 20, n_sequences: int = 50, T: int = 600,
                  h1_range=(0, 0), h2_range=None, seed: int = 0, reference: Optional[float] = 1.0,
                  tracking_tol: float = 1e-3, tracking_T: int = 2000,
                  lkf_tol: float = LKF_TOL) -> ValidationReport:
    """Monte-Carlo closed-loop validation of ``u(k) = K x(k - h2(k))``.

    Every pair of a random initial history and a random delay sequence is
    simulated for ``T`` steps. The decay rate is fitted on each run and the
    functional, if given, must decrease along each. With ``reference`` set,
    a step reference is tracked from rest under every delay sequence and the
    error in the first state must settle below ``tracking_tol``.
    """
    hbar = sys.hbar
    h2_range = (0, hbar) if h2_range is None else tuple(h2_range)
    rng = np.random.default_rng(seed)
    seq_seeds = rng.integers(0, 2**31 - 1, size=(n_sequences, 2))
    hist_all = rng.standard_normal((n_histories, hbar + 1, sys.n))
    lkf = None
    rates, diverged, runs = [], 0, 0
    for s in range(n_sequences):
        d1 = RandomInRange(h1_range[0], h1_range[1], int(seq_seeds[s, 0])).realize(T, hbar)
        d2 = RandomInRange(h2_range[0], h2_range[1], int(seq_seeds[s, 1])).realize(T, hbar)
        for h in range(n_histories):
            runs += 1
            try:
                tr = simulate_closed_loop(sys, K, d1, d2, hist_all[h], T)
            except DivergenceError:
                diverged += 1
                rates.append(np.inf)
                continue
            rates.append(decay_rate(tr))
            if cert is not None:
                chk = check_lkf_decrease(cert, tr, lkf_tol)
                lkf = chk if lkf is None else lkf.merge(chk)
    rates = np.array(rates)
    rho = float(rates.max()) if rates.size else 0.0
    checks = {"decay": {"passed": bool(diverged == 0 and rho < 1.0), "value": rho,
                        "threshold": 1.0}}
    if cert is not None:
        checks["lkf"] = {"passed": lkf.passed, "violations": lkf.violations, "tol": lkf_tol}
    settle_max, track_ok = None, None
    if reference is not None:
        track_ok, settles = True, []
        for s in range(n_sequences):
            d2 = RandomInRange(h2_range[0], h2_range[1],
                               int(seq_seeds[s, 1])).realize(tracking_T, hbar)
            d1 = RandomInRange(h1_range[0], h1_range[1],
                               int(seq_seeds[s, 0])).realize(tracking_T, hbar)
            try:
                tr = simulate_closed_loop(sys, K, d1, d2, None, tracking_T, r=reference)
                ks = tracking_settles(tr, tracking_tol)
            except DivergenceError:
                ks = None
            if ks is None:
                track_ok = False
            else:
                settles.append(ks)
        settle_max = max(settles) if settles else None
        checks["tracking"] = {"passed": track_ok, "tol": tracking_tol, "settle": settle_max}
    return ValidationReport(lkf, rho if np.isfinite(rho) else float("inf"), rates,
                            settle_max, track_ok, diverged=diverged, runs=runs, checks=checks)
