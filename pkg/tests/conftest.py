import numpy as np
import pytest

from fbslq.equilibrium import solve_equilibrium
from fbslq.fields import Strategy
from fbslq.presets import assumption_smoke_problem


@pytest.fixture(scope="session")
def smoke_spec():
    return assumption_smoke_problem(400)


@pytest.fixture(scope="session")
def smoke_solution(smoke_spec):
    return solve_equilibrium(smoke_spec, Strategy.zeros(smoke_spec.grid, 1, 1))


@pytest.fixture(scope="session")
def smoke_solution_1000():
    spec = assumption_smoke_problem(1000)
    return solve_equilibrium(spec, Strategy.zeros(spec.grid, 1, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
