import sys

import numpy as np
import pytest

from pdsgd import graphs


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance verdict lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None) if mod else None
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1():
    return graphs.build_named("fig1", 10)


@pytest.fixture(scope="session")
def fig1_spectrum(fig1):
    return graphs.spectrum(fig1)


@pytest.fixture(scope="session")
def ring4():
    return graphs.build_named("ring", 4)


@pytest.fixture(scope="session")
def ring4_spectrum(ring4):
    return graphs.spectrum(ring4)


@pytest.fixture(scope="session")
def path2():
    return graphs.build_named("path", 2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
