"""Estimator-style wrappers around identification and synthesis.

The classes follow the scikit-learn conventions: hyperparameters are set in
``__init__`` and exposed by ``get_params``, learned quantities end with an
underscore and are set by ``fit``. ``fit`` takes a :class:`DataRecord`.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .datamat import build_shifted, open_loop_representation
from .delayid import Identified, scan_delays
from .exceptions import InfeasibleError, InvalidInputError, NotIdentifiableError
from .model import DataRecord
from .synth import (GuaranteedCost, Hinf, Stabilize, StabilizeNoisy, SynthesisSpec,
                    synthesize)

__all__ = ["DelayIdentifier", "OpenLoopDataModel", "DataDrivenStateFeedback", "shifts_for"]


def _check_record(rec):
    if not isinstance(rec, DataRecord):
        raise InvalidInputError(f"expected a DataRecord, got {type(rec).__name__}")
    return rec


def shifts_for(i, j):
    """Data shifts to build for delays ``h2 = i`` and ``h1 = j``.

    ``j = 0`` makes the state-delay block a copy of ``X0``, so the delayed
    and undelayed state terms merge into one and the block is dropped.
    """
    return int(i), (None if j is None or j == 0 else int(j))


class DelayIdentifier(BaseEstimator):
    """Locate the delays as the shift pair whose data explain ``X1``.

    Parameters
    ----------
    hbar : int, optional
        Largest candidate delay (defaults to the record's prefix).
    r : float, optional
        Distance threshold. Derived from ``variance`` when omitted.
    variance : float, optional
        Measurement noise variance.
    state_delay : bool
        Scan state shifts too; otherwise only input shifts.
    fixed_j : int, optional
        Restrict the state shift.
    """

    def __init__(self, hbar=None, r=None, variance=None, state_delay=True, fixed_j=None):
        self.hbar = hbar
        self.r = r
        self.variance = variance
        self.state_delay = state_delay
        self.fixed_j = fixed_j

    def fit(self, rec, y=None):
        _check_record(rec)
        self.scan_ = scan_delays(rec, self.hbar, self.r, fixed_j=self.fixed_j,
                                 variance=self.variance, state_delay=self.state_delay)
        self.verdict_ = self.scan_.verdict
        self.distances_ = self.scan_.distances
        self.threshold_ = self.scan_.threshold
        return self

    @property
    def delays_(self):
        """``(h2, h1)`` when identified, else raises."""
        check_is_fitted(self, "verdict_")
        if not isinstance(self.verdict_, Identified):
            raise NotIdentifiableError(f"delays not identified: {self.verdict_}")
        return self.verdict_.i, self.verdict_.j


class OpenLoopDataModel(BaseEstimator):
    """Data-based one-step model ``x(k+1) = [B A1 A0] w(k)``.

    ``predict`` takes rows ``[u(k - i), x(k - j), x(k)]`` (the state-delay
    part is absent when ``j`` is None) and returns ``x(k+1)``.
    """

    def __init__(self, i=0, j=None):
        self.i = i
        self.j = j

    def fit(self, rec, y=None):
        _check_record(rec)
        dm = build_shifted(rec, self.i, self.j)
        self.B_, self.A1_, self.A0_ = open_loop_representation(dm)
        self.n_features_in_ = dm.W0.shape[0]
        self.coef_ = np.hstack([self.B_, self.A0_] if self.j is None
                               else [self.B_, self.A1_, self.A0_])
        return self

    def predict(self, W):
        check_is_fitted(self, "coef_")
        W = check_array(W)
        if W.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {W.shape[1]}")
        return W @ self.coef_.T


class DataDrivenStateFeedback(BaseEstimator):
    """State feedback ``u(k) = K x(k - h2(k))`` synthesized from one record.

    Parameters
    ----------
    i, j : int
        Input and state delays used to shift the data; ``j`` of 0 or None
        drops the state-delay block.
    hbar : int, optional
        Delay bound for the certificate (defaults to the record's prefix).
    kind : {"stabilize", "cost", "hinf", "noisy"}
    epsilon, mode, margin, backend, epsilon_grid :
        Passed to :class:`SynthesisSpec`.
    alpha, lam, coupling :
        Noise bound, pinned multiplier and coupling form for ``"noisy"``.
    x0, L1, L2, D, D0, delta, gamma, theta :
        Performance data for ``"cost"`` and ``"hinf"``.
    """

    def __init__(self, i=0, j=None, hbar=None, kind="stabilize", epsilon=1.0, mode="equality",
                 margin=None, backend=None, epsilon_grid=False, alpha=0.0, lam=None,
                 coupling="structured", x0=None, L1=None, L2=None, D=None, D0=None, delta=None,
                 gamma=None, theta=None):
        self.i = i
        self.j = j
        self.hbar = hbar
        self.kind = kind
        self.epsilon = epsilon
        self.mode = mode
        self.margin = margin
        self.backend = backend
        self.epsilon_grid = epsilon_grid
        self.alpha = alpha
        self.lam = lam
        self.coupling = coupling
        self.x0 = x0
        self.L1 = L1
        self.L2 = L2
        self.D = D
        self.D0 = D0
        self.delta = delta
        self.gamma = gamma
        self.theta = theta

    def _kind(self, n):
        if self.kind == "stabilize":
            return Stabilize()
        if self.kind == "noisy":
            return StabilizeNoisy(float(self.alpha), self.lam, self.coupling)
        L1 = np.eye(n) if self.L1 is None else self.L1
        if self.kind == "cost":
            if self.x0 is None:
                raise InvalidInputError("kind 'cost' needs x0")
            return GuaranteedCost(np.asarray(self.x0, dtype=float), L1, self.L2, self.D,
                                  self.delta, theta=self.theta)
        if self.kind == "hinf":
            if self.D0 is None:
                raise InvalidInputError("kind 'hinf' needs D0")
            return Hinf(self.D0, L1, self.L2, self.D, self.gamma)
        raise InvalidInputError(f"unknown kind {self.kind!r}")

    def fit(self, rec, y=None):
        _check_record(rec)
        i, j = shifts_for(self.i, self.j)
        dm = build_shifted(rec, i, j)
        hbar = rec.hbar if self.hbar is None else int(self.hbar)
        spec = SynthesisSpec(self._kind(dm.n), hbar, float(self.epsilon), self.mode,
                             self.margin, epsilon_grid=self.epsilon_grid, backend=self.backend)
        self.result_ = synthesize(dm, spec)
        self.status_ = self.result_.status
        if not self.result_.feasible:
            reason = self.result_.diagnostics.get("reason", "")
            raise InfeasibleError(f"synthesis returned {self.status_} {reason}".strip(),
                                  self.result_)
        self.K_ = self.result_.K
        self.n_features_in_ = dm.n
        return self

    def predict(self, X):
        """Control input for each row of delayed states ``x(k - h2(k))``."""
        check_is_fitted(self, "K_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} states, got {X.shape[1]}")
        return X @ self.K_.T

