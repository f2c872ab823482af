import numpy as np
import pytest

from ncsmd.barriers import Barrier
from ncsmd.oracle import CostFunction, build_instance


def canonical(link="logistic"):
    return build_instance(Barrier.ball([0.0, 0.0]), CostFunction.isotropic([0.3, 0.0]), link)


@pytest.fixture(scope="session")
def inst():
    return canonical()


@pytest.fixture(scope="session")
def inst_linear():
    return canonical("linear")


@pytest.fixture(scope="session")
def inst_gauss():
    return canonical("gaussian_cdf_var2")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CANONICAL_CONFIG = {
    "version": 1,
    "instance": {
        "set": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
        "cost": {"center": [0.3, 0.0]},
        "link": "logistic",
    },
    "T_grid": [1024],
    "seeds": [0, 1],
}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
