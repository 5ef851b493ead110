import numpy as np
import pytest

from carealgebra.synth import SynthConfig, gen_synthetic


@pytest.fixture(scope="session")
def small_cohort():
    return gen_synthetic(SynthConfig(patients=60, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
