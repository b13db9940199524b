import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nhlp.measure import DiscreteMeasure, generate_example
from nhlp.pipeline import Pipeline, RunConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def three_atoms():
    """Atoms {0, 1, 2} on the line, unit weights, n = 1."""
    return DiscreteMeasure(np.array([[0.0], [1.0], [2.0]]), np.ones(3), 1.0, 1.0, "three")


@pytest.fixture(scope="session")
def interval100():
    return generate_example("uniform_interval", atoms=100)


@pytest.fixture(scope="session")
def comb3():
    return generate_example("comb", level=3)


@pytest.fixture(scope="session")
def square64():
    return generate_example("uniform_square", atoms=64)


@pytest.fixture(scope="session")
def small_pipe():
    """Tuned pipeline on a 200-atom interval; stages are cached across tests."""
    return Pipeline(RunConfig(measure={"kind": "uniform_interval", "atoms": 200}))


@pytest.fixture(scope="session")
def comb_pipe():
    return Pipeline(RunConfig(measure={"kind": "comb", "level": 3}))


@pytest.fixture(scope="session")
def lip_pipe():
    return Pipeline(RunConfig(measure={"kind": "lipschitz_graph_arclength", "atoms": 200}))
