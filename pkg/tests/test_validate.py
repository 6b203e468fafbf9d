import numpy as np
import pytest

from ddtds.exceptions import InvalidInputError, NoConvergenceError
from ddtds.model import ClosedLoopTrajectory, DelayedLtiSystem, simulate_closed_loop
from ddtds.validate import (LkfCertificate, check_lkf_decrease, decay_rate,
                            disturbance_ensemble, empirical_cost, empirical_l2_gain, lkf_series,
                            lkf_value, simulate_cost, tracking_settles, validate_gain)


def lkf_direct(P, S, R1, R2, hbar, x, k):
    """The functional as the plain triple sum, with x indexed by absolute row."""
    v = x[k] @ P @ x[k]
    for j in range(k - hbar, k):
        v += x[j] @ S @ x[j]
    for th in range(-hbar, 0):
        for j in range(k + th, k):
            y = x[j + 1] - x[j]
            v += hbar * (y @ R1 @ y + y @ R2 @ y)
    return v


def random_pd(rng, n):
    M = rng.standard_normal((n, n))
    return M @ M.T + 0.1 * np.eye(n)


@pytest.mark.parametrize("hbar", [0, 1, 3, 6])
def test_lkf_matches_direct_sum(hbar):
    rng = np.random.default_rng(hbar)
    n = 2
    P, S, R1, R2 = (random_pd(rng, n) for _ in range(4))
    cert = LkfCertificate(P, S, R1, R2, hbar)
    x = rng.standard_normal((hbar + 12, n))
    V = lkf_series(cert, x)
    for r in range(hbar, x.shape[0]):
        ref = lkf_direct(P, S, R1, R2, hbar, x, r)
        assert V[r - hbar] == pytest.approx(ref, rel=1e-12)
        assert lkf_value(cert, x[r - hbar:r + 1]) == pytest.approx(ref, rel=1e-12)


def test_lkf_hand_value():
    # scalar, hbar 1, window [1, 2]: 4 P + 1 S + 1 * (1)^2 (R1 + R2)
    cert = LkfCertificate([[1.0]], [[1.0]], [[1.0]], [[1.0]], 1)
    assert lkf_value(cert, [[1.0], [2.0]]) == pytest.approx(4 + 1 + 2)


def test_certificate_checks():
    with pytest.raises(InvalidInputError):
        LkfCertificate(np.eye(2), -np.eye(2), np.eye(2), np.eye(2), 1)
    with pytest.raises(InvalidInputError):
        LkfCertificate(np.eye(2), np.eye(3), np.eye(2), np.eye(2), 1)
    cert = LkfCertificate(np.eye(2), np.eye(2), np.eye(2), np.eye(2), 2)
    with pytest.raises(InvalidInputError):
        lkf_value(cert, np.zeros((2, 2)))


def test_certified_gain_decreases_functional(certified, plant):
    cert = LkfCertificate.from_result(certified)
    rng = np.random.default_rng(0)
    h2 = rng.integers(3, 7, size=400)
    tr = simulate_closed_loop(plant, certified.K, 0, h2, rng.standard_normal((7, 3)), 400)
    chk = check_lkf_decrease(cert, tr)
    assert chk.passed and chk.steps > 0
    assert chk.worst_margin < 0


def test_destabilizing_gain_is_flagged(certified, plant):
    cert = LkfCertificate.from_result(certified)
    tr = simulate_closed_loop(plant, -certified.K, 0, 3, np.ones(3), 200)
    chk = check_lkf_decrease(cert, tr)
    assert not chk.passed
    assert decay_rate(tr) > 1


def test_decay_rate_geometric():
    k = np.arange(200)
    x = (0.9 ** k)[:, None] * np.array([[1.0, -2.0]])
    assert decay_rate(x) == pytest.approx(0.9, rel=1e-10)
    assert decay_rate(np.zeros((10, 2))) == 0.0


def test_empirical_cost_geometric():
    r = 0.8
    z = r ** np.arange(60)
    est = empirical_cost(z)
    assert est.J == pytest.approx((1 - r ** 120) / (1 - r ** 2), rel=1e-12)
    # exact tail of the geometric series
    assert est.upper == pytest.approx(1 / (1 - r ** 2), rel=1e-9)
    with pytest.raises(NoConvergenceError):
        empirical_cost(1.01 ** np.arange(60))
    with pytest.raises(NoConvergenceError):
        empirical_cost(z, rtol=1e-12, strict=True)


def test_simulate_cost_closed_form():
    sys = DelayedLtiSystem([[0.5]], [[0.0]], [[1.0]], 0, L1=[[1.0]])
    est = simulate_cost(sys, [[-0.2]], 0, 0, [1.0])
    assert est.J == pytest.approx(1 / (1 - 0.3 ** 2), rel=1e-9)


def test_l2_gain_scalar_peak():
    # loop x+ = 0.5 x + w, z = x; peak squared gain 1 / (1 - 0.5)^2 at omega = 0
    sys = DelayedLtiSystem([[0.5]], [[0.0]], [[1.0]], 0, L1=[[1.0]], D0=[[1.0]])
    est = empirical_l2_gain(sys, [[0.0]], length=2000)
    assert est.ratio <= 4.0 * (1 + 1e-9)
    assert est.ratio > 0.99 * 4.0
    assert est.worst.startswith("sin[0] omega=0.0000")
    assert est.amplitude == pytest.approx(np.sqrt(est.ratio))


def test_l2_gain_requires_channels():
    sys = DelayedLtiSystem([[0.5]], [[0.0]], [[1.0]], 0)
    with pytest.raises(InvalidInputError):
        empirical_l2_gain(sys, [[0.0]])


def test_disturbance_ensemble_size():
    items = list(disturbance_ensemble(2, 10, n_freq=5, n_random=3))
    assert len(items) == 2 * (5 + 1) + 3
    assert all(w.shape == (10, 2) for _, w in items)


def test_tracking_settles():
    x = np.ones((101, 1))
    x[:41, 0] = 0.0
    tr = ClosedLoopTrajectory(x, np.zeros((100, 1)), np.zeros(100), np.zeros(100), 0,
                              x_ref=np.array([1.0]))
    assert tracking_settles(tr) == 41
    x[:, 0] = 0.0
    assert tracking_settles(tr) is None


def test_validate_gain_report(certified, plant):
    cert = LkfCertificate.from_result(certified)
    rep = validate_gain(plant, certified.K, cert, n_histories=3, n_sequences=4, T=400,
                        h2_range=(3, 6), tracking_T=2000)
    assert rep.passed
    assert rep.runs == 12 and rep.diverged == 0
    assert rep.decay_rate < 1
    d = rep.as_dict()
    assert d["lkf"]["violations"] == 0 and d["tracking_ok"]


def test_validate_gain_flags_wrong_gain(certified, plant):
    rep = validate_gain(plant, -certified.K, None, n_histories=2, n_sequences=2, T=200,
                        reference=None)
    assert not rep.passed
