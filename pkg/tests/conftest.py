import numpy as np
import pytest

from robsens.dataset import TransformSpec, build_designs
from robsens.logistic import fit_mle
from robsens.simulate import SimSpec, generate


def simulated(n, seed):
    """Simulated data with x in both the propensity and the balance design."""
    ds = build_designs(generate(SimSpec(n, seed)).dataset, TransformSpec.identity(["x"]))
    return ds, fit_mle(ds)


@pytest.fixture(scope="session")
def sim50():
    return simulated(50, 0)


@pytest.fixture(scope="session")
def sim200():
    return simulated(200, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
