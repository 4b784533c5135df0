import numpy as np
import pytest

from submcmc import (
    PoissonRegression,
    build_param_expanded,
    select_expansion_point,
    simulate_poisson,
)

EXAMPLE_THETA = np.array([1.0, 0.75])
EXAMPLE_SEED = 1830


@pytest.fixture(scope="session")
def poisson_example():
    """The running example: n=1000 Poisson regression with a scalar covariate."""
    return simulate_poisson(1000, EXAMPLE_THETA, seed=EXAMPLE_SEED)


@pytest.fixture(scope="session")
def poisson_model():
    return PoissonRegression()


@pytest.fixture(scope="session")
def example_center(poisson_model, poisson_example):
    """Full-data posterior mode, the expansion point for the example."""
    return select_expansion_point(poisson_model, poisson_example, exact=True)


@pytest.fixture(scope="session")
def param_caches(poisson_model, poisson_example, example_center):
    return {order: build_param_expanded(poisson_model, poisson_example,
                                        example_center, order=order)
            for order in (0, 1, 2)}
