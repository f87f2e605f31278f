import numpy as np
import pytest

from backupcbf import (FilterConfig, double_integrator_scenario,
                       spacecraft_scenario)


@pytest.fixture(scope="session")
def di_scenario():
    return double_integrator_scenario()


@pytest.fixture(scope="session")
def sc_scenario():
    return spacecraft_scenario()


@pytest.fixture(scope="session")
def di_cfg(di_scenario):
    return FilterConfig.for_scenario(di_scenario)


@pytest.fixture(scope="session")
def sc_cfg(sc_scenario):
    return FilterConfig.for_scenario(sc_scenario)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
