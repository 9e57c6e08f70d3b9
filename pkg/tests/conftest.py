import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from policysteer.data import DatasetConfig, generate_dataset
from policysteer.worldmodel import WorldModelConfig, train_world_model

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cup_dataset():
    """(demos, train, test) with the default 100 demos + 250 rollouts, split 300/50."""
    return generate_dataset(DatasetConfig())


@pytest.fixture(scope="session")
def trained_params(cup_dataset):
    """World model trained with the default configuration on the training split."""
    _, train, _ = cup_dataset
    return train_world_model(train, WorldModelConfig())


@pytest.fixture(scope="session")
def cup_policy(cup_dataset):
    from policysteer.policy import fit_policy

    demos, _, _ = cup_dataset
    return fit_policy(demos, 2, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
