import numpy as np
import pytest

from qcap.circuits import GraphFactory


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale reproduction tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def ring4():
    return GraphFactory.create("ring:4")


@pytest.fixture
def line3():
    return GraphFactory.create("line:3")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
