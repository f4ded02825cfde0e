import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_simplex(rng, k, zero_prob=0.3):
    """Random probability vector with some exact zeros (never all zero)."""
    w = rng.random(k) * (rng.random(k) >= zero_prob)
    if w.sum() == 0:
        w[rng.integers(k)] = 1.0
    return w / w.sum()


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
