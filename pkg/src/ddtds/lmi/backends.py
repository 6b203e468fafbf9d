"""Conic solver backends.

A backend turns a :class:`ConicProblem` into a :class:`BackendResult` whose
status is ``"solved"``, ``"infeasible"`` or ``"failed"``. Nothing downstream
trusts that status alone; :meth:`ConicProblem.check` re-verifies every point.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = ["BackendResult", "ClarabelBackend", "CvxoptBackend", "get_backend", "BACKENDS"]


@dataclass
class BackendResult:
    status: str
    x: Optional[np.ndarray]
    info: dict = field(default_factory=dict)


class ClarabelBackend:
    """Interior-point solver Clarabel (native PSD triangle cones)."""

    name = "clarabel"

    def __init__(self, max_iter=200, tol=1e-9, verbose=False):
        self.max_iter = max_iter
        self.tol = tol
        self.verbose = verbose

    def solve(self, conic, **opts) -> BackendResult:
        import clarabel

        cones = []
        for kind, d in conic.cones:
            cones.append(clarabel.ZeroConeT(d) if kind == "zero" else clarabel.PSDTriangleConeT(d))
        s = clarabel.DefaultSettings()
        s.verbose = opts.get("verbose", self.verbose)
        s.max_iter = opts.get("max_iter", self.max_iter)
        tol = opts.get("tol", self.tol)
        s.tol_gap_abs = tol
        s.tol_gap_rel = tol
        s.tol_feas = tol
        s.tol_ktratio = 1e-7
        P = sp.csc_matrix((conic.n, conic.n))
        try:
            solver = clarabel.DefaultSolver(P, conic.q, sp.csc_matrix(conic.A), conic.b, cones, s)
            sol = solver.solve()
        except Exception as exc:  # the binding raises on some degenerate inputs
            return BackendResult("failed", None, {"error": str(exc)})
        st = str(sol.status)
        info = {"solver_status": st, "iterations": int(sol.iterations),
                "solve_time": float(sol.solve_time), "r_prim": float(sol.r_prim),
                "r_dual": float(sol.r_dual)}
        if st in ("Solved", "AlmostSolved"):
            return BackendResult("solved", np.asarray(sol.x), info)
        if st in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return BackendResult("infeasible", None, info)
        # a stalled run may still have produced a usable point; let post-validation decide
        if st in ("InsufficientProgress", "MaxIterations") and np.all(np.isfinite(sol.x)):
            return BackendResult("solved", np.asarray(sol.x), info)
        return BackendResult("failed", None, info)


class CvxoptBackend:
    """CVXOPT's primal-dual SDP solver.

    CVXOPT needs a full-row-rank equality matrix, so equalities are eliminated
    beforehand by parametrizing their solution set ``x = x0 + Z y``.
    """

    name = "cvxopt"

    def __init__(self, verbose=False, tol=1e-9, max_iter=200):
        self.verbose = verbose
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, conic, **opts) -> BackendResult:
        import cvxopt
        from scipy.linalg import null_space

        A = conic.A.tocsr()
        nx = conic.n
        Aeq, beq = conic.equality_system()
        if Aeq.shape[0]:
            Ad = Aeq.toarray()
            x0, *_ = np.linalg.lstsq(Ad, beq, rcond=None)
            if np.abs(Ad @ x0 - beq).max() > 1e-9 * max(1.0, np.abs(beq).max()):
                return BackendResult("infeasible", None, {"reason": "inconsistent equalities"})
            Z = null_space(Ad)
        else:
            x0 = np.zeros(nx)
            Z = np.eye(nx)
        if Z.shape[1] == 0:
            return BackendResult("solved", x0, {"reason": "equalities fix the point"})
        # drop directions no cone constraint sees (CVXOPT needs rank [G; A] = n)
        Apsd = A[Aeq.shape[0]:]
        _, sv, Vt = np.linalg.svd(np.asarray(Apsd @ Z), full_matrices=False)
        keep = sv > sv[0] * max(Apsd.shape) * np.finfo(float).eps if sv.size else sv > 0
        qz = Z.T @ conic.q
        Vk = Vt[keep].T
        if np.linalg.norm(qz - Vk @ (Vk.T @ qz)) > 1e-9 * max(1.0, np.linalg.norm(qz)):
            return BackendResult("failed", None, {"reason": "objective unbounded along a free direction"})
        Z = Z @ Vk

        Gs, hs = [], []
        row = Aeq.shape[0]
        for kind, N in conic.cones:
            if kind != "psd":
                continue
            k = N * (N + 1) // 2
            Ablk = A[row:row + k]
            bblk = conic.b[row:row + k]
            row += k
            # svec rows -> full column-major matrix rows (cvxopt reads the lower triangle)
            ii, jj = _upper(N)
            w = np.where(ii == jj, 1.0, np.sqrt(2.0))
            E = sp.csr_matrix((1.0 / w, (jj + ii * N, np.arange(k))), shape=(N * N, k))
            G = E @ (Ablk @ Z)
            h = E @ (bblk - Ablk @ x0)
            Gs.append(cvxopt.matrix(np.asarray(G, dtype=float)))
            hs.append(cvxopt.matrix(h.reshape(N, N, order="F")))
        c = cvxopt.matrix(Z.T @ conic.q)
        cvxopt.solvers.options.update({
            "show_progress": opts.get("verbose", self.verbose),
            "abstol": opts.get("tol", self.tol), "reltol": opts.get("tol", self.tol),
            "feastol": opts.get("tol", self.tol), "maxiters": opts.get("max_iter", self.max_iter),
        })
        try:
            sol = cvxopt.solvers.sdp(c, Gs=Gs, hs=hs)
        except (ValueError, ArithmeticError) as exc:
            return BackendResult("failed", None, {"error": str(exc)})
        info = {"solver_status": sol["status"], "iterations": int(sol.get("iterations", -1))}
        if sol["status"] == "optimal" or (sol["status"] == "unknown" and sol["x"] is not None):
            y = np.asarray(sol["x"]).ravel()
            return BackendResult("solved", x0 + Z @ y, info)
        if sol["status"] == "primal infeasible":
            return BackendResult("infeasible", None, info)
        return BackendResult("failed", None, info)


def _upper(N):
    ii, jj = [], []
    for j in range(N):
        for i in range(j + 1):
            ii.append(i)
            jj.append(j)
    return np.array(ii), np.array(jj)


BACKENDS = {"clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}


def get_backend(backend=None):
    if backend is None:
        return ClarabelBackend()
    if isinstance(backend, str):
        try:
            return BACKENDS[backend]()
        except KeyError:
            raise ValueError(f"unknown backend {backend!r}; choose from {sorted(BACKENDS)}")
    return backend
