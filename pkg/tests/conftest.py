import sys
import numpy as np
import pytest

from ragicl.config import derive_stream


@pytest.fixture
def rng():
    return derive_stream(1234, 0)


def rand_matrix(rng, d, scale=1.0):
    return scale * rng.standard_normal((d, d))


def assert_within(est, target, sigmas=4.0):
    """Entrywise |est - target| <= sigmas * stderr."""
    diff = np.abs(np.asarray(est.value if hasattr(est, "value") else est.mean) - np.asarray(target))
    se = np.asarray(est.stderr)
    assert np.all(diff <= sigmas * se + 1e-12), (diff, se)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
