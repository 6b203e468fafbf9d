import warnings

import numpy as np
import pytest

from ddtds.datamat import build_shifted
from ddtds.delayid import (Identified, NoneFound, Undecidable, delta_bound, distance,
                           noise_norm_bound, scan_delays)
from ddtds.exceptions import InvalidInputError, NotIdentifiableError
from ddtds.model import add_measurement_noise

from conftest import random_plant, random_record


def test_reference_data_single_line(record):
    scan = scan_delays(record, fixed_j=0)
    assert scan.verdict == Identified(3, 0)
    d = scan.row(0)
    assert d[3] < 1e-10
    assert np.all(np.delete(d, 3) > 2.0)
    assert scan.separation_ratio == float("inf") or scan.separation_ratio > 1e10


def test_without_state_delay_block(record):
    scan = scan_delays(record, state_delay=False)
    assert scan.state_shifts == [None]
    assert scan.verdict == Identified(3, None)


def test_full_grid_is_undecidable_without_state_delay(record):
    # A1 = 0, so every state shift explains the data equally well
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scan = scan_delays(record)
    assert isinstance(scan.verdict, Undecidable)
    assert {i for i, _ in scan.verdict.candidates} == {3}
    assert (3, 0) in scan.verdict.candidates and len(scan.verdict.candidates) > 1
    # pairs whose stacked data lose rank are skipped, not counted
    assert set(scan.skipped).isdisjoint(scan.verdict.candidates)


def test_noise_free_distance_is_zero_at_true_pair():
    rng = np.random.default_rng(11)
    sys = random_plant(rng, 2, 1, hbar=3, state_delay=True)
    rec = random_record(rng, sys, 2, 1, 40)
    scan = scan_delays(rec)
    assert scan.verdict == Identified(1, 2)
    assert scan.distances[1, 2] < 1e-10


def test_nothing_within_threshold(record):
    noisy = add_measurement_noise(record, 1e-3, seed=0)
    scan = scan_delays(noisy, fixed_j=0, r=1e-6)
    assert isinstance(scan.verdict, NoneFound)


def test_threshold_from_variance(record):
    noisy = add_measurement_noise(record, 1e-3, seed=0)
    scan = scan_delays(noisy, fixed_j=0, variance=1e-3)
    assert scan.threshold == pytest.approx(np.sqrt(3 * 50 * 1e-3))


def test_distance_rank_check():
    rng = np.random.default_rng(0)
    sys = random_plant(rng, 2, 1)
    rec = random_record(rng, sys, 0, 0, 2)
    with pytest.raises(NotIdentifiableError):
        distance(build_shifted(rec, 0, None))


def test_bounds():
    assert noise_norm_bound(3, 50, 1e-3) == pytest.approx(np.sqrt(0.15))
    assert delta_bound(2.0, 0.5, 0.25) == pytest.approx(1.25)
    with pytest.raises(InvalidInputError):
        noise_norm_bound(-1, 2, 1.0)
    with pytest.raises(InvalidInputError):
        delta_bound(1.0, -1.0, 0.0)


def test_scan_bound_above_prefix(record):
    with pytest.raises(InvalidInputError):
        scan_delays(record, hbar=7)


def test_as_dict_round_trips_nan(record):
    d = scan_delays(record, fixed_j=0).as_dict()
    assert d["verdict"] == "Identified(3, 0)"
    assert len(d["distances"]) == 7


def test_workers_match_serial(record):
    a = scan_delays(record, fixed_j=0)
    b = scan_delays(record, fixed_j=0, workers=4)
    assert np.array_equal(a.distances, b.distances)
