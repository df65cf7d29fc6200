import numpy as np
import pytest

from lcmcr import (
    DependenceTerm,
    FitConfig,
    GeneratingConfig,
    ModelSpec,
    ParameterSet,
    preset_scenario1,
    simulate,
    two_by_two_from_margins,
)

SCENARIO1_TRUE_PROBS = np.array([[0.25, 0.20, 0.21, 0.29], [0.70, 0.82, 0.86, 0.83]])
SCENARIO1_TRUE_WEIGHTS = np.array([0.4, 0.6])


@pytest.fixture(scope="session")
def scenario1_config():
    return preset_scenario1(100_000, seed=1)


@pytest.fixture(scope="session")
def scenario1_sim(scenario1_config):
    return simulate(scenario1_config)


@pytest.fixture(scope="session")
def scenario1_fit(scenario1_sim):
    from lcmcr import fit

    spec = ModelSpec(("A", "B", "C", "D"), 2)
    return fit(spec, scenario1_sim.observed_counts, FitConfig(seed=5, num_starts=4))


@pytest.fixture(scope="session")
def specific_cd_setup():
    """Two-class generator whose C-D association flips sign between classes."""
    spec = ModelSpec(("A", "B", "C", "D"), 2, (DependenceTerm(("C", "D"), class_specific=True),))
    low = two_by_two_from_margins(0.21, 0.29, 2.0)
    high = two_by_two_from_margins(0.86, 0.83, 0.5)
    params = ParameterSet.for_spec(
        spec,
        (0.4, 0.6),
        np.array([[0.25, 0.20, 0.0, 0.0], [0.70, 0.82, 0.0, 0.0]]),
        block_tables=(np.stack([low, high]),),
    )
    return spec, params


def quick_fit_config(seed=0, num_starts=4, **kwargs):
    kwargs.setdefault("tol", 1e-8)
    return FitConfig(seed=seed, num_starts=num_starts, **kwargs)
