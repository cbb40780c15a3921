import numpy as np
import pytest

from acrhands.synth import default_rigs


@pytest.fixture(scope="session")
def rigs():
    return default_rigs()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rot6d(rng, n, scale=1.0):
    """Random well-conditioned 6D inputs (not orthonormal)."""
    return scale * rng.standard_normal((n, 6))


# criterion number -> (name, passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
