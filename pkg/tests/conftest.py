import numpy as np
import pytest

from dengue_ocp import Grid, Scenario, build, solve
from dengue_ocp.transcription import Scheme

GRID_STEPS = (0.5, 0.25, 0.125)
GRID_SCHEMES = (Scheme.EULER, Scheme.TRAPEZOIDAL)


@pytest.fixture(scope="session")
def scenario():
    return Scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(20090101)


def make_problem(scheme, h, params=None, scenario=None):
    sc = scenario or Scenario()
    return build(Grid(sc.t_final, h), scheme, params or sc.params, sc.x_init)


@pytest.fixture(scope="session")
def grid_solves():
    """All six default solves, computed once per session."""
    out = {}
    for s in GRID_SCHEMES:
        for h in GRID_STEPS:
            problem = make_problem(s, h)
            out[s, h] = (problem, solve(problem))
    return out


@pytest.fixture(scope="session")
def scaled_solves():
    """Solves with every cost weight multiplied by 10."""
    sc = Scenario()
    out = {}
    for s in GRID_SCHEMES:
        for h in GRID_STEPS:
            problem = make_problem(s, h, params=sc.params.scale_costs(10.0))
            out[s, h] = (problem, solve(problem))
    return out
