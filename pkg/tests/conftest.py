import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from d2dopt.scenario import NetworkScenario, ScenarioParams, generate_scenario

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_scenario(channels, cpus=None, task_sizes=None, beta=0.5, noise_power=1e-9, power=None, **params):
    """Hand-built scenario around explicit channels of shape (K, K, S, N, N)."""
    channels = np.asarray(channels, dtype=complex)
    K, _, S, N, _ = channels.shape
    p = ScenarioParams(node_count=K, subchannel_count=S, antenna_count=N, noise_power=noise_power, **params)
    if power is not None:
        p = p.with_(power=power)
    d = np.full((K, K), 20.0)
    np.fill_diagonal(d, 0.0)
    return NetworkScenario(
        params=p, seed=0, distances=d,
        task_sizes=np.full(K, 4e6) if task_sizes is None else task_sizes,
        cpus=np.full(K, 1.5e8) if cpus is None else cpus,
        channels=channels, beta=np.full(K, beta),
    )


@pytest.fixture
def small_scenario():
    return generate_scenario(ScenarioParams(node_count=6, subchannel_count=2, antenna_count=3), 11)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
