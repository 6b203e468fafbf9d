"""Data-based LMI synthesis of delay-robust state feedback.

Every problem is built around the 5n x 5n matrix ``Phi_bar`` whose block
ordering follows the stacked vector

    chi(k) = [x(k), x(k - h1), x(k - h2), x(k - hbar), x(k + 1)].

The decision variables ``Q1, Q2, Q3`` (T x n) factor the closed-loop data
parametrization; the gain is ``K = U Q1 (X0 Q3)^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

from .datamat import DataMatrices
from .exceptions import (CertificateInconsistencyError, DegenerateSolutionError,
                         InvalidInputError, NotIdentifiableError)
from .lmi import (STAR, BlockExpr, Feasibility, LmiProgram, MinimizeScalar,
                  MinimizeSumOfNorms, SolveOutcome, hstack, min_eig, scalar_identity,
                  vstack)

__all__ = [
    "Stabilize",
    "GuaranteedCost",
    "Hinf",
    "StabilizeNoisy",
    "SynthesisSpec",
    "SynthesisVars",
    "Certificates",
    "SynthesisResult",
    "assemble_phi_bar",
    "build_program",
    "synthesize",
    "synthesize_stabilizing",
    "synthesize_guaranteed_cost",
    "synthesize_hinf",
    "synthesize_noisy",
    "recover_certificates",
    "bisect_gamma",
    "DEFAULT_MARGIN",
    "EPSILON_GRID",
    "THETA_GRID",
]

DEFAULT_MARGIN = 1e-6  # relative to the data scale
THETA_GRID = (1.0, 1e-1, 1e-2, 1e-3)
COND_LIMIT = 1e12


# --------------------------------------------------------------------------
# problem kinds


@dataclass(frozen=True)
class Stabilize:
    pass


@dataclass(frozen=True)
class GuaranteedCost:
    """Cost bound ``sum z'z <= delta`` from the initial state ``x0``.

    ``delta=None`` minimizes the bound. ``init_form="derived"`` bounds the
    functional's initial value for a zero pre-history through
    ``P2bar N^{-1} P2bar' >= theta (P2bar + P2bar') - theta^2 N``; the bound
    is tight when ``theta N = P2bar``, so slow loops need small ``theta``.
    ``theta=None`` sweeps :data:`THETA_GRID` and keeps the smallest bound.
    ``"printed"`` uses the alternative completion with ``+Pbar`` in the
    lower-right block.
    """

    x0: np.ndarray
    L1: np.ndarray
    L2: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    delta: Optional[float] = None
    init_form: str = "derived"
    theta: Optional[float] = None


@dataclass(frozen=True)
class Hinf:
    """Energy gain bound ``sum z'z <= gamma sum w'w``; ``gamma=None`` minimizes it."""

    D0: np.ndarray
    L1: np.ndarray
    L2: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None
    gamma: Optional[float] = None


@dataclass(frozen=True)
class StabilizeNoisy:
    """Robust stabilization for ``||Delta||_2 <= alpha``.

    ``lam`` pins the multiplier (free when None). The data mismatch enters
    the functional's difference through the x(k) and x(k+1) rows, the
    latter weighted by epsilon. ``coupling`` selects how it is bounded:

    * ``"structured"`` keeps the two rows together, giving
      ``alpha^2 lam (e1 + eps e5)'(e1 + eps e5)`` and a single ``Qrow`` block.
    * ``"derived"`` bounds each row separately: ``alpha^2 lam I`` and the
      rows ``Qrow`` and ``eps Qrow``.
    * ``"printed"`` is ``"derived"`` without the epsilon weight. It is not
      implied by the functional's difference and is kept for comparison only.
    """

    alpha: float
    lam: Optional[float] = None
    coupling: str = "structured"


@dataclass(frozen=True)
class SynthesisSpec:
    """Common synthesis options.

    Parameters
    ----------
    kind : Stabilize | GuaranteedCost | Hinf | StabilizeNoisy
    hbar : int
        Delay upper bound.
    epsilon : float
        Descriptor tuning scalar.
    mode : {"equality", "norm-min"}
        Impose the structural equalities exactly or minimize their norms.
    margin : float, optional
        Absolute strictness margin. Defaults to ``1e-6`` times the data scale.
    norm_threshold : float, optional
        Largest accepted equality norm in norm-min mode (``1e-6 * scale``).
    epsilon_grid : bool
        Retry over ``epsilon in {1e-2, ..., 1e3}`` when the given value fails.
    compress : bool
        Solve for ``Y = V' Q`` on the row space of the data instead of the
        full T x n blocks (lossless; see ``DataMatrices.compress``).
    perf_scales : tuple of float
        Cost and gain programs are homogeneous in the performance output: with
        ``L1, L2, D`` scaled by ``c`` the bound scales by ``c**2`` and ``K`` is
        unchanged. Failed solves are retried at each ``c`` in turn and mapped
        back exactly; the mapped point is re-verified on the original program.
    """

    kind: object = field(default_factory=Stabilize)
    hbar: int = 0
    epsilon: float = 1.0
    mode: str = "equality"
    margin: Optional[float] = None
    norm_threshold: Optional[float] = None
    epsilon_grid: bool = False
    backend: Optional[str] = None
    compress: bool = True
    perf_scales: tuple = (1.0, 1e-1, 1e-2)

    def __post_init__(self):
        if self.hbar < 0 or int(self.hbar) != self.hbar:
            raise InvalidInputError(f"hbar must be a non-negative integer, got {self.hbar}")
        if not (self.epsilon > 0):
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        if self.mode not in ("equality", "norm-min"):
            raise InvalidInputError(f"mode must be 'equality' or 'norm-min', got {self.mode!r}")
        if self.margin is not None and self.margin < 0:
            raise InvalidInputError("margin must be non-negative")
        if not self.perf_scales or any(not c > 0 for c in self.perf_scales):
            raise InvalidInputError("perf_scales must be a non-empty tuple of positive numbers")
        k = self.kind
        if isinstance(k, GuaranteedCost) and k.delta is not None and not k.delta > 0:
            raise InvalidInputError("delta must be positive")
        if isinstance(k, Hinf) and k.gamma is not None and not k.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if isinstance(k, StabilizeNoisy):
            if k.alpha < 0:
                raise InvalidInputError("alpha must be non-negative")
            if k.lam is not None and not k.lam > 0:
                raise InvalidInputError("lambda must be positive")
            if k.coupling not in ("derived", "structured", "printed"):
                raise InvalidInputError(f"unknown coupling {k.coupling!r}")


# --------------------------------------------------------------------------
# variables and Phi_bar


@dataclass
class SynthesisVars:
    Pbar: object
    Sbar: object
    Rbar1: object
    Rbar2: object
    S12bar1: object
    S12bar2: object
    Q1: object
    Q2: Optional[object]
    Q3: object


def _declare(prog: LmiProgram, dm: DataMatrices) -> SynthesisVars:
    n, T = dm.n, dm.T
    sym = dict(symmetric=True, positive=True)
    return SynthesisVars(
        Pbar=prog.var("Pbar", n, **sym),
        Sbar=prog.var("Sbar", n, **sym),
        Rbar1=prog.var("Rbar1", n, **sym),
        Rbar2=prog.var("Rbar2", n, **sym),
        S12bar1=prog.var("S12bar1", n, n),
        S12bar2=prog.var("S12bar2", n, n),
        Q1=prog.var("Q1", T, n),
        Q2=prog.var("Q2", T, n) if dm.has_state_delay else None,
        Q3=prog.var("Q3", T, n),
    )


def assemble_phi_bar(dm: DataMatrices, hbar: int, epsilon: float, v: SynthesisVars) -> BlockExpr:
    """The 5n x 5n block matrix that must be positive definite."""
    X0, X1 = dm.X0, dm.X1
    h2 = float(hbar) ** 2
    eps = float(epsilon)
    R = v.Rbar1 + v.Rbar2
    X1Q1 = X1 @ v.Q1
    X1Q3 = X1 @ v.Q3
    X1Q2 = X1 @ v.Q2 if v.Q2 is not None else None
    P2 = X0 @ v.Q3

    def minus_x1q2(e):
        return e if X1Q2 is None else e - X1Q2

    F11 = v.Pbar - v.Sbar + (1.0 - h2) * R - X1Q3 - X1Q3.T
    F12 = minus_x1q2(-1.0 * v.Rbar1 + v.S12bar1)
    F13 = -1.0 * v.Rbar2 + v.S12bar2 - X1Q1
    F14 = -1.0 * v.S12bar1 - v.S12bar2
    F15 = h2 * R + P2 - eps * X1Q3.T
    F22 = 2.0 * v.Rbar1 - v.S12bar1 - v.S12bar1.T
    F24 = -1.0 * v.Rbar1 + v.S12bar1
    F25 = None if X1Q2 is None else -eps * X1Q2.T
    F33 = 2.0 * v.Rbar2 - v.S12bar2 - v.S12bar2.T
    F34 = -1.0 * v.Rbar2 + v.S12bar2
    F35 = -eps * X1Q1.T
    F44 = R + v.Sbar
    F55 = -1.0 * v.Pbar - h2 * R + eps * (P2 + P2.T)
    return BlockExpr([
        [F11, F12, F13, F14, F15],
        [STAR, F22, None, F24, F25],
        [STAR, STAR, F33, F34, F35],
        [STAR, STAR, STAR, F44, None],
        [STAR, STAR, STAR, STAR, F55],
    ])


def _structural_equalities(dm: DataMatrices, v: SynthesisVars):
    """Expressions that must vanish so that W0 G_K = diag(K, I, I)."""
    U, X0, Xh = dm.U, dm.X0, dm.Xh
    if v.Q2 is None:
        return {"U Q3": U @ v.Q3, "X0 Q1": X0 @ v.Q1}
    return {
        "U Q2": U @ v.Q2,
        "U Q3": U @ v.Q3,
        "Xh Q1": Xh @ v.Q1,
        "Xh Q3": Xh @ v.Q3,
        "X0 Q1": X0 @ v.Q1,
        "X0 Q2": X0 @ v.Q2,
        "Xh Q2 - X0 Q3": Xh @ v.Q2 - X0 @ v.Q3,
    }


# --------------------------------------------------------------------------
# results


@dataclass
class Certificates:
    P2bar: np.ndarray
    P: np.ndarray
    S: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    S12_1: np.ndarray
    S12_2: np.ndarray


@dataclass
class SynthesisResult:
    """Outcome of a synthesis call.

    ``K`` and the certificates are ``None`` unless ``status == "Feasible"``.
    """

    status: str
    spec: SynthesisSpec
    epsilon: float
    K: Optional[np.ndarray] = None
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    recovered: Optional[Certificates] = None
    delta: Optional[float] = None
    gamma: Optional[float] = None
    lam: Optional[float] = None
    outcome: Optional[SolveOutcome] = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "Feasible"

    def __getattr__(self, name):
        # expose decision variables as attributes (res.Q1, res.Pbar, ...)
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def as_dict(self):
        out = {"status": self.status, "epsilon": self.epsilon, "diagnostics": self.diagnostics}
        if self.K is not None:
            out["K"] = self.K.tolist()
        for key in ("delta", "gamma", "lam"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.recovered is not None:
            out["certificate"] = {k: np.asarray(val).tolist()
                                  for k, val in vars(self.recovered).items()}
        out["variables"] = {k: np.asarray(val).tolist() for k, val in self.values.items()}
        return out


# --------------------------------------------------------------------------
# program construction


def _check_dm(dm: DataMatrices):
    rep = dm.rank()
    if rep.numerical_rank != dm.required_rank:
        raise NotIdentifiableError(
            f"rank(W0) = {rep.numerical_rank} but {dm.required_rank} is needed for synthesis",
            rank=rep.numerical_rank, required=dm.required_rank, pair=(dm.i, dm.j))


def _perf(dm, L1, L2, D):
    n, m = dm.n, dm.m
    L1 = np.atleast_2d(np.asarray(L1, dtype=float))
    q = L1.shape[0]
    L2 = np.zeros((q, n)) if L2 is None else np.atleast_2d(np.asarray(L2, dtype=float))
    D = np.zeros((q, m)) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
    if L1.shape != (q, n) or L2.shape != (q, n) or D.shape != (q, m):
        raise InvalidInputError("performance matrices have inconsistent shapes")
    return L1, L2, D


def build_program(dm: DataMatrices, spec: SynthesisSpec, epsilon=None, scale=None):
    """Build the LMI program for ``spec``; returns ``(program, variables, extras)``.

    ``scale`` overrides ``dm.scale()`` as the reference for the default margin.
    """
    eps = spec.epsilon if epsilon is None else float(epsilon)
    scale = dm.scale() if scale is None else float(scale)
    mu = DEFAULT_MARGIN * scale if spec.margin is None else spec.margin
    prog = LmiProgram(type(spec.kind).__name__, default_margin=mu)
    v = _declare(prog, dm)
    n, T = dm.n, dm.T
    hbar = spec.hbar
    P2 = dm.X0 @ v.Q3
    phi = assemble_phi_bar(dm, hbar, eps, v)
    extras = {"margin": mu, "scale": scale, "epsilon": eps}
    kind = spec.kind

    grid = phi.grid
    if isinstance(kind, Stabilize):
        prog.add_psd(phi, mu, "Phi_bar")
    elif isinstance(kind, GuaranteedCost):
        L1, L2, D = _perf(dm, kind.L1, kind.L2, kind.D)
        q = L1.shape[0]
        kappa = [L1 @ P2, L2 @ P2, D @ (dm.U @ v.Q1), None, None]
        psi = _border(grid, [None if k is None else -1.0 * k.T for k in kappa], np.eye(q))
        prog.add_psd(BlockExpr(psi), mu, "Psi_bar")
        x0 = np.asarray(kind.x0, dtype=float).reshape(n, 1)
        if kind.delta is None:
            dvar = prog.var("delta", 1, symmetric=True)
            dexpr = dvar.expr()
            prog.set_objective(MinimizeScalar(dvar))
            extras["delta_var"] = dvar
        else:
            dexpr = np.array([[float(kind.delta)]])
        if kind.init_form == "derived":
            th = THETA_GRID[0] if kind.theta is None else float(kind.theta)
            if not th > 0:
                raise InvalidInputError("theta must be positive")
            N = v.Pbar + float(hbar) ** 2 * (v.Rbar1 + v.Rbar2)
            lower = th * (P2 + P2.T) - th * th * N
            prog.add_psd(BlockExpr([[dexpr, x0.T], [STAR, lower]]), mu, "initial_cost")
        elif kind.init_form == "printed":
            lower = P2 + P2.T + v.Pbar
            prog.add_psd(BlockExpr([[dexpr, -x0.T], [STAR, lower]]), mu, "initial_cost")
        else:
            raise InvalidInputError(f"unknown init_form {kind.init_form!r}")
    elif isinstance(kind, Hinf):
        L1, L2, D = _perf(dm, kind.L1, kind.L2, kind.D)
        q = L1.shape[0]
        D0 = np.atleast_2d(np.asarray(kind.D0, dtype=float))
        if D0.shape[0] != n:
            raise InvalidInputError(f"D0 must have {n} rows")
        p = D0.shape[1]
        kappa = [L1 @ P2, L2 @ P2, D @ (dm.U @ v.Q1), None, None]
        psi = _border(grid, [None if k is None else -1.0 * k.T for k in kappa], np.eye(q))
        if kind.gamma is None:
            gvar = prog.var("gamma", 1, symmetric=True)
            gblock = scalar_identity(gvar, p)
            prog.set_objective(MinimizeScalar(gvar))
            extras["gamma_var"] = gvar
        else:
            gblock = float(kind.gamma) * np.eye(p)
        col = [-D0, None, None, None, -eps * D0, None]
        prog.add_psd(BlockExpr(_border(psi, col, gblock)), mu, "Gamma_bar")
    elif isinstance(kind, StabilizeNoisy):
        alpha = float(kind.alpha)
        rows_T = T if kind.coupling == "structured" else 2 * T
        if kind.lam is None:
            lam = prog.var("lambda", 1, symmetric=True, positive=True)
            lam_eye_n = scalar_identity(lam, 5 * n)
            lam_eye_T = scalar_identity(lam, rows_T)
            extras["lam_var"] = lam
        else:
            lam_eye_n = float(kind.lam) * np.eye(5 * n)
            lam_eye_T = float(kind.lam) * np.eye(rows_T)
        zero = np.zeros((T, n))
        row = hstack([v.Q3, v.Q2 if v.Q2 is not None else zero, v.Q1, zero, zero])
        if kind.coupling == "structured":
            # the mismatch enters as (e1 + eps e5)' Delta Qrow; Young's bound on that product
            e = np.zeros((1, 5))
            e[0, 0], e[0, 4] = 1.0, eps
            M = np.kron(e.T @ e, np.eye(n))
            top = phi.assemble() - (alpha ** 2) * (M @ lam_eye_n)
            Qcat = row
        else:
            # only block rows 1 and 5 of the noise coupling are nonzero; the other
            # 3T rows decouple into lambda * I and are dropped
            s5 = eps if kind.coupling == "derived" else 1.0
            top = phi.assemble() - (alpha ** 2) * lam_eye_n
            Qcat = vstack([row, s5 * row])
        prog.add_psd(BlockExpr([[top, Qcat.T], [STAR, lam_eye_T]]), mu, "noisy_Phi_bar")
    else:
        raise InvalidInputError(f"unknown synthesis kind {kind!r}")

    # the reciprocally convex coupling blocks
    prog.add_psd(BlockExpr([[v.Rbar1, v.S12bar1], [STAR, v.Rbar1]]), 0.0, "R1_S12")
    prog.add_psd(BlockExpr([[v.Rbar2, v.S12bar2], [STAR, v.Rbar2]]), 0.0, "R2_S12")

    eqs = _structural_equalities(dm, v)
    if spec.mode == "equality":
        for name, e in eqs.items():
            prog.add_equality(e, name)
    else:
        if not isinstance(prog.objective, Feasibility):
            raise InvalidInputError("norm-min mode cannot be combined with a cost objective")
        prog.set_objective(MinimizeSumOfNorms(list(eqs.values())))
    extras["equalities"] = eqs
    return prog, v, extras


def _border(grid, col, corner):
    """Append one block row and column: ``[[grid, col], [STAR, corner]]``."""
    k = len(grid)
    out = [list(row) + [col[a]] for a, row in enumerate(grid)]
    out.append([STAR] * k + [corner])
    return out


# --------------------------------------------------------------------------
# solving and certificate recovery


def recover_certificates(values, dm: DataMatrices, tol=None) -> Certificates:
    """Undo the congruence with ``P2bar = X0 Q3``.

    With a state-delay block the two data expressions ``Xh Q2`` and ``X0 Q3``
    of ``P2bar`` must agree to ``tol`` (default ``1e-6 * max(1, |P2bar|)``).
    """
    P2bar = dm.X0 @ values["Q3"]
    scale = max(1.0, float(np.abs(P2bar).max()))
    tol = 1e-6 * scale if tol is None else tol
    if dm.has_state_delay and values.get("Q2") is not None:
        alt = dm.Xh @ values["Q2"]
        gap = float(np.abs(alt - P2bar).max())
        if gap > tol:
            raise CertificateInconsistencyError(
                f"Xh Q2 and X0 Q3 differ by {gap:.3g} (> {tol:.3g}); the structural "
                f"equalities are violated")
    c = np.linalg.cond(P2bar)
    if not np.isfinite(c) or c > COND_LIMIT:
        raise DegenerateSolutionError(
            f"X0 Q3 is numerically singular (condition {c:.3g}); try a larger margin or "
            f"another epsilon")
    P2 = np.linalg.inv(P2bar)

    def back(M):
        out = P2.T @ M @ P2
        return out

    def sym(M):
        return 0.5 * (M + M.T)

    return Certificates(P2bar, sym(back(values["Pbar"])), sym(back(values["Sbar"])),
                        sym(back(values["Rbar1"])), sym(back(values["Rbar2"])),
                        back(values["S12bar1"]), back(values["S12bar2"]))


_SCALED = ("Pbar", "Sbar", "Rbar1", "Rbar2", "S12bar1", "S12bar2", "Q1", "Q2", "Q3")


def _scaled_kind(kind, c):
    if c == 1.0:
        return kind
    L1 = c * np.asarray(kind.L1, dtype=float)
    L2 = None if kind.L2 is None else c * np.asarray(kind.L2, dtype=float)
    D = None if kind.D is None else c * np.asarray(kind.D, dtype=float)
    if isinstance(kind, GuaranteedCost):
        delta = None if kind.delta is None else c * c * kind.delta
        return replace(kind, L1=L1, L2=L2, D=D, delta=delta)
    gamma = None if kind.gamma is None else c * c * kind.gamma
    return replace(kind, L1=L1, L2=L2, D=D, gamma=gamma)


def _solve_once(dm, spec, eps, c=1.0) -> SynthesisResult:
    scale = dm.scale()
    work, V = dm.compress() if spec.compress else (dm, None)
    wspec = replace(spec, kind=_scaled_kind(spec.kind, c))
    prog, v, extras = build_program(work, wspec, eps, scale=scale)
    out = prog.solve(spec.backend)
    mu = extras["margin"]
    diag = {"margin": mu, "scale": scale, "solver": out.diagnostics, "min_eigs": out.min_eigs,
            "compressed_columns": None if V is None else int(V.shape[1]), "perf_scale": c}
    res = SynthesisResult(out.status, spec, eps, outcome=out, diagnostics=diag)
    if not out.feasible:
        return res
    vals = dict(out.assignment)
    # back to full-length Q and to the unscaled performance output
    for k in _SCALED:
        if k in vals:
            M = V @ vals[k] if (V is not None and k.startswith("Q")) else vals[k]
            vals[k] = c * c * M
    for k in ("delta", "gamma"):
        if k in vals:
            vals[k] = vals[k] / (c * c)
    if V is not None or c != 1.0:
        oprog, _, oextras = build_program(dm, replace(spec, margin=c * c * mu), eps, scale=scale)
        chk = oprog.verify(vals, equalities=spec.mode == "equality")
        diag["reverified"] = {"status": chk.status, "min_eigs": chk.min_eigs,
                              "margin": c * c * mu}
        if not chk.feasible:
            res.status = "NumericalFailure"
            diag["reason"] = "mapped point failed re-verification on the original program"
            return res
        eqs = oextras["equalities"]
    else:
        eqs = extras["equalities"]
    eq_norms = {name: float(np.linalg.norm(e.value(vals), 2)) for name, e in eqs.items()}
    diag["equality_norms"] = eq_norms
    if spec.mode == "norm-min":
        thr = spec.norm_threshold if spec.norm_threshold is not None else 1e-6 * scale
        diag["norm_threshold"] = thr
        if max(eq_norms.values()) > thr:
            res.status = "Infeasible"
            diag["reason"] = "equality norms above the acceptance threshold"
            return res
    res.values = {k: vals[k] for k in _SCALED if k in vals}
    if "delta" in vals:
        res.delta = float(vals["delta"][0, 0])
    elif isinstance(spec.kind, GuaranteedCost):
        res.delta = float(spec.kind.delta)
    if "gamma" in vals:
        res.gamma = float(vals["gamma"][0, 0])
    elif isinstance(spec.kind, Hinf):
        res.gamma = float(spec.kind.gamma)
    if isinstance(spec.kind, StabilizeNoisy):
        res.lam = float(vals["lambda"][0, 0]) if "lambda" in vals else float(spec.kind.lam)

    tol = None if spec.mode == "equality" else max(1e-6, diag.get("norm_threshold", 0)) * 10
    cert = recover_certificates(res.values, dm, tol)
    res.recovered = cert
    res.K = (dm.U @ res.values["Q1"]) @ np.linalg.inv(cert.P2bar)
    diag["gain_residual"] = float(np.abs(res.K @ cert.P2bar - dm.U @ res.values["Q1"]).max())
    diag["certificate_min_eigs"] = {k: min_eig(getattr(cert, k))
                                    for k in ("P", "S", "R1", "R2")}
    return res


EPSILON_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


def synthesize(dm: DataMatrices, spec: SynthesisSpec) -> SynthesisResult:
    """Solve the program selected by ``spec.kind``.

    Failed attempts are retried over ``spec.perf_scales`` (cost and gain
    programs only) and, with ``epsilon_grid``, over :data:`EPSILON_GRID`.
    """
    _check_dm(dm)
    if spec.hbar > dm.hbar:
        raise InvalidInputError(f"delay bound {spec.hbar} exceeds the data prefix {dm.hbar}")
    kind = spec.kind
    if isinstance(kind, GuaranteedCost) and kind.init_form == "derived" and kind.theta is None:
        runs = [_synthesize(dm, replace(spec, kind=replace(kind, theta=th))) for th in THETA_GRID]
        ok = [r for r in runs if r.feasible]
        best = min(ok, key=lambda r: r.delta) if ok else runs[0]
        best.diagnostics["theta"] = best.spec.kind.theta
        best.diagnostics["theta_feasible"] = [r.spec.kind.theta for r in ok]
        return best
    return _synthesize(dm, spec)


def _synthesize(dm, spec):
    scales = spec.perf_scales if isinstance(spec.kind, (GuaranteedCost, Hinf)) else (1.0,)
    eps_list = [spec.epsilon]
    if spec.epsilon_grid:
        eps_list += [e for e in EPSILON_GRID if e != spec.epsilon]
    tried = []
    first = None
    for eps in eps_list:
        for c in scales:
            tried.append((eps, c))
            r = _solve_once(dm, spec, eps, c)
            if first is None:
                first = r
            if r.feasible:
                r.diagnostics["attempts"] = tried
                return r
    first.diagnostics["attempts"] = tried
    return first


def synthesize_stabilizing(dm, spec: SynthesisSpec) -> SynthesisResult:
    return synthesize(dm, replace(spec, kind=Stabilize()))


def synthesize_guaranteed_cost(dm, spec: SynthesisSpec) -> SynthesisResult:
    if not isinstance(spec.kind, GuaranteedCost):
        raise InvalidInputError("spec.kind must be GuaranteedCost")
    return synthesize(dm, spec)


def synthesize_hinf(dm, spec: SynthesisSpec) -> SynthesisResult:
    if not isinstance(spec.kind, Hinf):
        raise InvalidInputError("spec.kind must be Hinf")
    return synthesize(dm, spec)


def synthesize_noisy(dm, spec: SynthesisSpec) -> SynthesisResult:
    if not isinstance(spec.kind, StabilizeNoisy):
        raise InvalidInputError("spec.kind must be StabilizeNoisy")
    return synthesize(dm, spec)


def bisect_gamma(dm, spec: SynthesisSpec, lo=1e-6, hi=1e6, rel_tol=1e-3, max_iter=60):
    """Smallest feasible gamma by bisection on a log scale.

    Returns ``(best_result, gamma_low)`` where ``gamma_low`` is the largest
    value found infeasible. ``best_result`` is None if ``hi`` is infeasible.
    """
    if not isinstance(spec.kind, Hinf):
        raise InvalidInputError("spec.kind must be Hinf")

    def run(g):
        return synthesize(dm, replace(spec, kind=replace(spec.kind, gamma=g)))

    best = run(hi)
    if not best.feasible:
        return None, hi
    for _ in range(max_iter):
        if hi / lo - 1.0 <= rel_tol:
            break
        mid = np.sqrt(lo * hi)
        r = run(mid)
        if r.feasible:
            hi, best = mid, r
        else:
            lo = mid
    return best, lo
