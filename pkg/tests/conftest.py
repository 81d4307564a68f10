import numpy as np
import pytest

from corrkal import ObserverCanonicalModel

EX1_THETA = [-0.05, -0.35, 2.0, 3.0, 1.3, 0.0505, 0.0139]
EX2_THETA = [-0.11, -0.15, 1.9, 1.6, 1.9, 0.1069, -0.0143]
EX1_Q = (0.0049, 0.0001)
EX1_R = 0.64
EX2_Q = (0.6, 0.4)
EX2_R = 1.6


@pytest.fixture
def ex1_model():
    return ObserverCanonicalModel([-0.05, -0.35], [2.0, 3.0], 1.3, [0.0505, 0.0139])


@pytest.fixture
def ex2_model():
    return ObserverCanonicalModel([-0.11, -0.15], [1.9, 1.6], 1.9, [0.1069, -0.0143])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    for mod in list(sys.modules.values()):
        results = getattr(mod, "ACCEPTANCE_RESULTS", None)
        if results:
            terminalreporter.section("acceptance criteria")
            for k in sorted(results):
                terminalreporter.write_line(results[k])
            break
