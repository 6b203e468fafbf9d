"""Shared fixtures: the reference data sets, a certified gain and random plants."""
import numpy as np
import pytest

from ddtds.datamat import build_shifted
from ddtds.model import DataRecord, DelayedLtiSystem, simulate_open_loop
from ddtds.scenarios import scenario_data, triple_integrator
from ddtds.synth import Stabilize, SynthesisSpec, synthesize

AC_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[AC_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(AC_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0][2:])):
            terminalreporter.write_line(line)


@pytest.fixture
def ac_report(request):
    """Record one ``ACn: PASS|FAIL ...`` line; it is printed and listed in the summary."""

    def report(tag, ok, detail):
        line = f"{tag}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        request.config.stash[AC_KEY].append(line)
        return ok

    return report


@pytest.fixture(scope="session")
def plant():
    return triple_integrator()


@pytest.fixture(scope="session")
def record():
    return scenario_data()


@pytest.fixture(scope="session")
def dm(record):
    return build_shifted(record, 3, None)


@pytest.fixture(scope="session")
def certified(dm):
    """Stabilizing synthesis on the noise-free reference data (hbar 6, epsilon 30)."""
    res = synthesize(dm, SynthesisSpec(Stabilize(), 6, 30.0))
    assert res.feasible
    return res


def random_plant(rng, n, m, hbar=0, state_delay=False, stable=None):
    """Random plant; ``stable`` forces the spectral radius of A0 below or above 1."""
    A0 = rng.standard_normal((n, n)) / np.sqrt(n)
    if stable is not None:
        rho = max(abs(np.linalg.eigvals(A0)))
        target = rng.uniform(0.3, 0.9) if stable else rng.uniform(1.02, 1.2)
        A0 = A0 * target / rho
    A1 = 0.1 * rng.standard_normal((n, n)) if state_delay else np.zeros((n, n))
    B = rng.standard_normal((n, m))
    return DelayedLtiSystem(A0, A1, B, hbar)


def random_record(rng, sys, h1, h2, T):
    """Open-loop record with i.i.d. Gaussian input and a random initial history."""
    hbar = sys.hbar
    u = rng.standard_normal((T + hbar + 1, sys.m))
    hist = rng.standard_normal((hbar + 1, sys.n))
    rec = simulate_open_loop(sys, h1, h2, u, hist, T)
    return DataRecord(rec.x, u, T, hbar)
