import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rdp_forge.environments import generate_dataset, make_env, uniform_policy
from rdp_forge.trace import AlphabetSpec

settings.register_profile(
    "ci", derandomize=True, deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("ci")


@pytest.fixture
def tiny_alphabet():
    """Two actions, two rewards, one binary feature."""
    return AlphabetSpec(("a", "b"), (("x", "y"),), (0, 1), 2, ("y",))


@pytest.fixture(scope="session")
def corridor_data():
    env = make_env("corridor")
    return env, generate_dataset(env, uniform_policy(env), 10_000, seed=7)


@pytest.fixture(scope="session")
def tmaze_data():
    env = make_env("tmaze")
    return env, generate_dataset(env, uniform_policy(env), 10_000, seed=7)


def rng(seed):
    return np.random.default_rng(seed)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
