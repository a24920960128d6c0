import time

import pytest
from hypothesis import HealthCheck, settings

from ebridge.tasks import TaskSpec, gen_pairs
from ebridge.training import TrainConfig, train

settings.register_profile("ebridge", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ebridge")

ACCEPTANCE_LINES = []
TRAIN_WALL_S = {}


def record(criterion: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def moons_train():
    return gen_pairs(TaskSpec(n_samples=4096, seed=0))


@pytest.fixture(scope="session")
def moons_eval():
    return gen_pairs(TaskSpec(n_samples=2000, seed=1))


@pytest.fixture(scope="session")
def trained(moons_train):
    """Default config: 2000 warmup + 2000 consistency steps (~25 s)."""
    start = time.perf_counter()
    result = train(TrainConfig(), moons_train)
    TRAIN_WALL_S["default"] = time.perf_counter() - start
    return result
