"""Reference experiments: the sampled triple integrator with a delayed input."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .model import (Constant, DataRecord, DelayedLtiSystem, add_measurement_noise, multisine,
                    simulate_open_loop, zoh_discretize)

TS = 0.05
HBAR = 6
T_DATA = 50
TRUE_H2 = 3
EXCITATION = ((10.0, np.pi), (5.0, 2 * np.pi), (-30.0, 3 * np.pi))

# published gains, kept for comparison only
REFERENCE_K_NOISE_FREE = np.array([[-1.876e-2, -1.35e-1, -4.98e-1]])
REFERENCE_K_NOISY = np.array([[-5.06e-2, -2.72e-1, -4.4e-1]])


def triple_integrator(Ts: float = TS, hbar: int = HBAR) -> DelayedLtiSystem:
    Ac = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    Bc = np.array([[0.0], [0.0], [1.0]])
    A0, B = zoh_discretize(Ac, Bc, Ts)
    return DelayedLtiSystem(A0, np.zeros((3, 3)), B, hbar)


def collect_from_rest(sys: DelayedLtiSystem, h1, h2, terms, Ts: float, T: int,
                      x_start=None) -> DataRecord:
    """Record the response over [-hbar, T] of a plant at rest at k = -hbar.

    The multisine input is applied from the first recorded sample on; the plant
    sees zero input before that. This is a pre-roll, so no recursion sample
    inside the window is replaced by an artificial initial history.
    """
    hbar = sys.hbar
    k = np.arange(-hbar, T + 1)
    u = multisine(k, terms, Ts)[:, None] * np.ones((1, sys.m))
    # shifted time s = k + hbar; zero history before s = 0
    u_shift = np.vstack([np.zeros((hbar, sys.m)), u])
    hist = np.zeros((hbar + 1, sys.n))
    if x_start is not None:
        hist[-1] = x_start
    rec = simulate_open_loop(sys, h1, h2, u_shift, hist, T + hbar)
    x = rec.x[hbar:]
    return DataRecord(x, u, T, hbar)


def scenario_data(noise_variance: float = 0.0, seed: Optional[int] = None,
                  Ts: float = TS, hbar: int = HBAR, T: int = T_DATA, h2: int = TRUE_H2,
                  terms=EXCITATION) -> DataRecord:
    """The 56-sample record (T = 50 after the hbar = 6 prefix), optionally noisy."""
    sys = triple_integrator(Ts, hbar)
    rec = collect_from_rest(sys, Constant(0), Constant(h2), terms, Ts, T)
    if noise_variance > 0:
        rec = add_measurement_noise(rec, noise_variance, seed)
    return rec
