import functools

import pytest

from tempus.attack import Channel, Defence, ExperimentConfig, run_experiment
from tempus.leakage import analyze
from tempus.uarch import CoreConfig


@functools.lru_cache(maxsize=None)
def experiment(channel: Channel, defence: Defence, n: int = 100_000, seed: int = 1, noise: bool = True):
    """Run (once per session) and return the trace log."""
    kw = {} if noise else {"noise_events": 0}
    return run_experiment(ExperimentConfig(channel, defence, iterations=n, seed=seed, **kw))


@functools.lru_cache(maxsize=None)
def leakage(channel: Channel, defence: Defence, n: int = 100_000, seed: int = 1, reps: int = 1000):
    return analyze(experiment(channel, defence, n, seed), reps=reps, seed=seed)


@pytest.fixture
def core():
    return CoreConfig()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
