import numpy as np
import pytest

from ddtds.datamat import (build_shifted, gain_pattern, numerical_rank, open_loop_representation,
                           pinv, row_space_projector, solve_gk)
from ddtds.exceptions import InvalidInputError, NotIdentifiableError, OutOfWindowError
from ddtds.model import DataRecord

from conftest import random_plant, random_record


def test_blocks_follow_the_shift_definition(record):
    dm = build_shifted(record, 3, 2)
    T = record.T
    for c in (0, 17, T - 1):
        assert np.array_equal(dm.U[:, c], record.u_at(c - 3))
        assert np.array_equal(dm.Xh[:, c], record.x_at(c - 2))
        assert np.array_equal(dm.X0[:, c], record.x_at(c))
        assert np.array_equal(dm.X1[:, c], record.x_at(c + 1))
    assert dm.W0.shape == (1 + 3 + 3, T)
    assert dm.X0.shape == (3, T)


def test_shift_outside_window(record):
    with pytest.raises(OutOfWindowError):
        build_shifted(record, 7, None)
    with pytest.raises(OutOfWindowError):
        build_shifted(record, 0, -1)


def test_duplicate_state_block_rank(record):
    dm = build_shifted(record, 3, 0)
    assert dm.required_rank == 7
    assert dm.distinct_rows == 4
    assert dm.rank().numerical_rank == 4


def test_reduced_form_recovers_plant(dm, plant):
    B, A1, A0 = open_loop_representation(dm)
    assert np.abs(B - plant.B).max() < 1e-9
    assert np.abs(A0 - plant.A0).max() < 1e-9
    assert np.array_equal(A1, np.zeros((3, 3)))


def test_rank_failure_is_reported():
    x = np.zeros((12, 2))
    u = np.ones((12, 1))
    dm = build_shifted(DataRecord(x, u, 10, 1), 0, None)
    with pytest.raises(NotIdentifiableError) as err:
        open_loop_representation(dm)
    assert err.value.rank < err.value.required


def test_numerical_rank_and_pinv():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((3, 2)) @ rng.standard_normal((2, 6))
    rep = numerical_rank(M)
    assert rep.numerical_rank == 2
    P = pinv(M)
    assert np.allclose(M @ P @ M, M, atol=1e-12)
    R = row_space_projector(M)
    assert np.allclose(R @ R, R, atol=1e-12)
    assert np.allclose(M @ R, M, atol=1e-12)
    with pytest.raises(InvalidInputError):
        numerical_rank(np.array([[np.nan]]))


def test_solve_gk_closed_loop(dm, plant):
    K = np.array([[-0.02, -0.13, -0.49]])
    G = solve_gk(dm, K)
    assert np.abs(dm.W0 @ G - gain_pattern(K, 3, False)).max() < 1e-10
    assert np.abs(dm.X1 @ G - np.hstack([plant.B @ K, plant.A0])).max() < 1e-8
    with pytest.raises(InvalidInputError):
        solve_gk(dm, np.ones((2, 3)))


def test_gain_pattern_layout():
    K = np.array([[1.0, 2.0]])
    P = gain_pattern(K, 2)
    assert P.shape == (5, 6)
    assert np.array_equal(P[0, :2], [1, 2])
    assert np.array_equal(P[1:3, 2:4], np.eye(2))
    assert np.array_equal(P[3:, 4:], np.eye(2))


def test_compress_is_lossless(dm):
    red, V = dm.compress()
    assert np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-12)
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((dm.T, 3))
    Y = V.T @ Q
    for full, small in ((dm.U, red.U), (dm.X0, red.X0), (dm.X1, red.X1)):
        assert np.allclose(full @ Q, small @ Y, atol=1e-9 * np.abs(full).max())


def test_state_delay_representation():
    rng = np.random.default_rng(7)
    sys = random_plant(rng, 2, 1, hbar=2, state_delay=True)
    rec = random_record(rng, sys, 1, 2, 30)
    B, A1, A0 = open_loop_representation(build_shifted(rec, 2, 1))
    assert np.abs(B - sys.B).max() < 1e-8
    assert np.abs(A1 - sys.A1).max() < 1e-8
    assert np.abs(A0 - sys.A0).max() < 1e-8
