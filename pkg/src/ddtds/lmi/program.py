"""LMI programs, their lowering to standard conic form, and checked solving.

The conic form follows the convention

    minimize  q' x   subject to   A x + s = b,   s in K

where K is a product of zero cones (equalities) and PSD cones. A symmetric
N x N block enters K through its upper triangle stacked column by column with
off-diagonal entries scaled by ``sqrt(2)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..exceptions import StructuralError
from .expr import STAR, Affine, BlockExpr, MatrixVar, as_affine, scalar_identity

__all__ = [
    "Feasibility",
    "MinimizeSumOfNorms",
    "MinimizeScalar",
    "PsdConstraint",
    "EqualityConstraint",
    "LmiProgram",
    "ConicProblem",
    "SolveOutcome",
    "svec_index",
    "EIG_TOL",
    "EQ_TOL",
    "min_eig",
]

# post-validation tolerances, relative to the program scale
EIG_TOL = 1e-6
EQ_TOL = 1e-7

_SQRT2 = np.sqrt(2.0)


def min_eig(F) -> float:
    """Smallest eigenvalue of the symmetric part of ``F``.

    The matrix is normalized by its largest entry first: LAPACK's symmetric
    solvers lose relative accuracy when some entries square to subnormals.
    """
    F = np.asarray(F, dtype=float)
    F = 0.5 * (F + F.T)
    s = float(np.abs(F).max(initial=0.0))
    if s == 0.0:
        return 0.0
    return float(np.linalg.eigvalsh(F / s)[0]) * s


@dataclass(frozen=True)
class Feasibility:
    pass


@dataclass(frozen=True)
class MinimizeSumOfNorms:
    """Minimize the sum of spectral norms of the listed expressions."""

    exprs: tuple

    def __init__(self, exprs):
        object.__setattr__(self, "exprs", tuple(as_affine(e) for e in exprs))


@dataclass(frozen=True)
class MinimizeScalar:
    expr: Affine

    def __init__(self, expr):
        e = as_affine(expr)
        if e.shape != (1, 1):
            raise StructuralError(f"scalar objective must be 1x1, got {e.shape}")
        object.__setattr__(self, "expr", e)


@dataclass
class PsdConstraint:
    """``expr >= margin * I``."""

    expr: Affine
    margin: float
    name: str


@dataclass
class EqualityConstraint:
    expr: Affine
    name: str


def svec_index(N):
    """Upper-triangle pairs in column order and their scaling weights."""
    ii, jj, ww = [], [], []
    for j in range(N):
        for i in range(j + 1):
            ii.append(i)
            jj.append(j)
            ww.append(1.0 if i == j else _SQRT2)
    return np.array(ii), np.array(jj), np.array(ww)


class LmiProgram:
    """A collection of LMI constraints, linear equalities and an objective.

    Parameters
    ----------
    name : str
    default_margin : float
        Margin used for variables declared ``positive`` and for constraints
        added without an explicit margin.
    """

    def __init__(self, name: str = "lmi", default_margin: float = 0.0):
        self.name = name
        self.default_margin = float(default_margin)
        self.declared: List[MatrixVar] = []
        self.psd: List[PsdConstraint] = []
        self.equalities: List[EqualityConstraint] = []
        self.objective = Feasibility()
        self._epi: List[MatrixVar] = []

    # construction -------------------------------------------------------
    def var(self, name, rows, cols=None, symmetric=False, positive=False) -> MatrixVar:
        if any(v.name == name for v in self.declared):
            raise StructuralError(f"variable {name!r} declared twice")
        v = MatrixVar(name, rows, cols, symmetric=symmetric, positive=positive)
        self.declared.append(v)
        return v

    def add_psd(self, expr, margin=None, name=None) -> PsdConstraint:
        if isinstance(expr, BlockExpr):
            e = expr.assemble()
        else:
            e = as_affine(expr)
            if e.shape[0] != e.shape[1]:
                raise StructuralError(f"LMI expression must be square, got {e.shape}")
            if not e.is_symmetric(1e-12 * (1.0 + np.abs(e.const).max(initial=0.0))):
                raise StructuralError(f"LMI expression {name or len(self.psd)} is not symmetric")
        margin = self.default_margin if margin is None else float(margin)
        if margin < 0:
            raise StructuralError("margin must be non-negative")
        c = PsdConstraint(e, margin, name or f"lmi{len(self.psd)}")
        self.psd.append(c)
        return c

    def add_equality(self, expr, name=None) -> EqualityConstraint:
        c = EqualityConstraint(as_affine(expr), name or f"eq{len(self.equalities)}")
        self.equalities.append(c)
        return c

    def set_objective(self, objective):
        if not isinstance(objective, (Feasibility, MinimizeSumOfNorms, MinimizeScalar)):
            raise StructuralError(f"unsupported objective {objective!r}")
        self.objective = objective

    # lowering -----------------------------------------------------------
    def _all_constraints(self):
        """User constraints plus implicit positivity and norm-epigraph LMIs."""
        psd = list(self.psd)
        for v in self.declared:
            if v.positive:
                psd.append(PsdConstraint(v.expr(), self.default_margin, f"{v.name}>0"))
        epi = []
        if isinstance(self.objective, MinimizeSumOfNorms):
            for k, E in enumerate(self.objective.exprs):
                t = MatrixVar(f"_t{k}", 1, 1, symmetric=True)
                r, c = E.shape
                blk = BlockExpr([[scalar_identity(t, r), E], [STAR, scalar_identity(t, c)]])
                psd.append(PsdConstraint(blk.assemble(), 0.0, f"norm{k}"))
                epi.append(t)
        return psd, epi

    def variables(self):
        """Declared variables followed by any others met in constraints, in order."""
        seen = {}
        for v in self.declared:
            seen[v] = None
        for c in list(self.psd) + list(self.equalities):
            for v in c.expr.variables:
                seen.setdefault(v, None)
        if isinstance(self.objective, MinimizeScalar):
            for v in self.objective.expr.variables:
                seen.setdefault(v, None)
        if isinstance(self.objective, MinimizeSumOfNorms):
            for e in self.objective.exprs:
                for v in e.variables:
                    seen.setdefault(v, None)
        return list(seen)

    def lower(self) -> "ConicProblem":
        psd, epi = self._all_constraints()
        variables = self.variables()
        used = set()
        for c in psd + self.equalities:
            used.update(c.expr.variables)
        unused = [v.name for v in variables if v not in used]
        if unused:
            raise StructuralError(f"variables not referenced by any constraint: {unused}")
        variables = variables + epi
        offsets = {}
        pos = 0
        for v in variables:
            offsets[v] = pos
            pos += v.size
        nx = pos

        def global_map(e: Affine) -> sp.csr_matrix:
            r = e.shape[0] * e.shape[1]
            blocks = []
            for v, M in e.terms.items():
                M = M.tocoo()
                blocks.append((M.row, M.col + offsets[v], M.data))
            if not blocks:
                return sp.csr_matrix((r, nx))
            rows = np.concatenate([b[0] for b in blocks])
            cols = np.concatenate([b[1] for b in blocks])
            vals = np.concatenate([b[2] for b in blocks])
            return sp.csr_matrix((vals, (rows, cols)), shape=(r, nx))

        A_parts, b_parts, cones, meta = [], [], [], []
        row = 0
        eq_dim = 0
        for c in self.equalities:
            G = global_map(c.expr)
            A_parts.append(G)
            b_parts.append(-c.expr.const.ravel(order="F"))
            meta.append({"name": c.name, "kind": "equality", "rows": [row, row + G.shape[0]],
                         "shape": list(c.expr.shape)})
            row += G.shape[0]
            eq_dim += G.shape[0]
        if eq_dim:
            cones.append(("zero", eq_dim))
        for c in psd:
            N = c.expr.shape[0]
            ii, jj, ww = svec_index(N)
            # symmetrized entries weighted for the svec inner product
            sel = sp.csr_matrix(
                (np.concatenate([ww / 2, ww / 2]),
                 (np.concatenate([np.arange(ii.size)] * 2),
                  np.concatenate([ii + jj * N, jj + ii * N]))),
                shape=(ii.size, N * N))
            G = sel @ global_map(c.expr)
            C = c.expr.const - c.margin * np.eye(N)
            A_parts.append(-G)
            b_parts.append(sel @ C.ravel(order="F"))
            cones.append(("psd", N))
            meta.append({"name": c.name, "kind": "psd", "rows": [row, row + ii.size],
                         "order": N, "margin": c.margin})
            row += ii.size
        A = sp.vstack(A_parts, format="csc") if A_parts else sp.csc_matrix((0, nx))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)

        q = np.zeros(nx)
        if isinstance(self.objective, MinimizeScalar):
            q = np.asarray(global_map(self.objective.expr).todense()).ravel()
        elif isinstance(self.objective, MinimizeSumOfNorms):
            for t in epi:
                q[offsets[t]] = 1.0

        scale = 1.0
        for c in psd + self.equalities:
            scale = max(scale, float(np.abs(c.expr.const).max(initial=0.0)))
        return ConicProblem(q, A, b, cones, variables, offsets, meta, psd, list(self.equalities),
                            scale, self.name)

    def solve(self, backend=None, **opts) -> "SolveOutcome":
        from .backends import get_backend
        conic = self.lower()
        be = get_backend(backend)
        res = be.solve(conic, **opts)
        return conic.check(res, be.name)

    def verify(self, assignment, equalities=True) -> "SolveOutcome":
        """Check a given point against the declared constraints.

        Uses the same tolerances as post-validation. Norm-epigraph constraints
        are skipped; ``equalities=False`` also skips the linear equalities.
        """
        by_var = {}
        for v in self.variables():
            if v.name not in assignment:
                raise StructuralError(f"assignment lacks variable {v.name!r}")
            by_var[v] = np.asarray(assignment[v.name], dtype=float).reshape(v.rows, v.cols)
        psd = list(self.psd) + [PsdConstraint(v.expr(), self.default_margin, f"{v.name}>0")
                                for v in self.declared if v.positive]
        mins, margins = {}, {}
        for c in psd:
            F = c.expr.value(by_var)
            mins[c.name] = min_eig(F)
            margins[c.name] = mins[c.name] - c.margin
        eqs = self.equalities if equalities else []
        resid = {c.name: float(np.abs(c.expr.value(by_var)).max(initial=0.0)) for c in eqs}
        ok = (all(margins[c.name] >= -EIG_TOL * _cscale(c) for c in psd)
              and all(resid[c.name] <= EQ_TOL * _cscale(c) for c in eqs))
        scale = max([1.0] + [_cscale(c) for c in psd + list(eqs)])
        return SolveOutcome("Feasible" if ok else "NumericalFailure",
                            {v.name: by_var[v] for v in by_var}, margins, mins, resid,
                            None, {"backend": "verify"}, scale)

    def dump(self, fp):
        """Write the lowered problem as JSON (see ``ConicProblem.to_json``)."""
        json.dump(self.lower().to_json(), fp, indent=1)


def _cscale(c) -> float:
    """Tolerance scale of one constraint: its largest constant magnitude, at least 1."""
    return max(1.0, float(np.abs(c.expr.const).max(initial=0.0)))


@dataclass
class ConicProblem:
    q: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    variables: list
    offsets: dict
    meta: list
    psd: list
    equalities: list
    scale: float
    name: str = "lmi"

    @property
    def n(self) -> int:
        return self.q.size

    def recover(self, x) -> Dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return {v.name: v.from_coords(x[self.offsets[v]:self.offsets[v] + v.size])
                for v in self.variables if not v.name.startswith("_")}

    def to_vector(self, assignment) -> np.ndarray:
        """Inverse of :meth:`recover` for assignments that cover every user variable."""
        x = np.zeros(self.n)
        for v in self.variables:
            if v.name in assignment:
                x[self.offsets[v]:self.offsets[v] + v.size] = v.to_coords(assignment[v.name])
        return x

    def equality_system(self):
        rows = sum(d for kind, d in self.cones if kind == "zero")
        return self.A[:rows], self.b[:rows]

    # post-validation ----------------------------------------------------
    def _evaluate(self, x):
        vals = {v: v.from_coords(x[self.offsets[v]:self.offsets[v] + v.size])
                for v in self.variables}
        mins = {}
        for c in self.psd:
            F = c.expr.value(vals)
            mins[c.name] = min_eig(F)
        resid = {c.name: float(np.abs(c.expr.value(vals)).max(initial=0.0))
                 for c in self.equalities}
        return mins, resid

    def _project_equalities(self, x):
        Aeq, beq = self.equality_system()
        if Aeq.shape[0] == 0:
            return x
        r = Aeq @ x - beq
        dx, *_ = np.linalg.lstsq(Aeq.toarray(), r, rcond=None)
        return x - dx

    def check(self, res, backend_name="") -> "SolveOutcome":
        diag = dict(res.info)
        diag["backend"] = backend_name
        if res.status == "infeasible":
            return SolveOutcome("Infeasible", {}, {}, {}, {}, None, diag, self.scale)
        if res.status != "solved" or res.x is None or not np.all(np.isfinite(res.x)):
            return SolveOutcome("NumericalFailure", {}, {}, {}, {}, None, diag, self.scale)
        x = np.asarray(res.x, dtype=float)
        mins, resid = self._evaluate(x)
        eq_ok = all(resid[c.name] <= EQ_TOL * _cscale(c) for c in self.equalities)
        if not eq_ok:
            # tidy up solver-level equality residuals by an exact projection
            x2 = self._project_equalities(x)
            mins2, resid2 = self._evaluate(x2)
            if all(resid2[c.name] <= EQ_TOL * _cscale(c) for c in self.equalities):
                x, mins, resid = x2, mins2, resid2
                diag["equality_projection"] = True
        margins = {c.name: mins[c.name] - c.margin for c in self.psd}
        ok_eig = all(margins[c.name] >= -EIG_TOL * _cscale(c) for c in self.psd)
        ok_eq = all(resid[c.name] <= EQ_TOL * _cscale(c) for c in self.equalities)
        status = "Feasible" if (ok_eig and ok_eq) else "NumericalFailure"
        if status != "Feasible":
            diag["post_validation"] = "failed"
        obj = float(self.q @ x)
        return SolveOutcome(status, self.recover(x), margins, mins, resid, obj, diag,
                            self.scale, x)

    # debug dump ---------------------------------------------------------
    def to_json(self) -> dict:
        A = self.A.tocoo()
        return {
            "format": "ddtds-conic-1",
            "name": self.name,
            "convention": "minimize q'x subject to A x + s = b, s in cones",
            "svec": "upper triangle, column order, off-diagonal times sqrt(2)",
            "n_variables": int(self.n),
            "q": self.q.tolist(),
            "A": {"shape": list(self.A.shape), "row": A.row.tolist(), "col": A.col.tolist(),
                  "val": A.data.tolist()},
            "b": self.b.tolist(),
            "cones": [{"type": k, ("dim" if k == "zero" else "order"): int(d)}
                      for k, d in self.cones],
            "variables": [{"name": v.name, "rows": v.rows, "cols": v.cols,
                           "symmetric": v.symmetric, "offset": int(self.offsets[v]),
                           "size": v.size} for v in self.variables],
            "constraints": self.meta,
            "scale": self.scale,
        }


@dataclass
class SolveOutcome:
    """Solver result after independent post-validation.

    ``margins`` holds ``min eig - margin`` per PSD constraint, ``min_eigs`` the
    raw smallest eigenvalues and ``residuals`` the max-abs equality residuals.
    """

    status: str
    assignment: Dict[str, np.ndarray]
    margins: Dict[str, float]
    min_eigs: Dict[str, float]
    residuals: Dict[str, float]
    objective: Optional[float]
    diagnostics: dict
    scale: float
    x: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.status == "Feasible"

    def __getitem__(self, name):
        return self.assignment[name]
