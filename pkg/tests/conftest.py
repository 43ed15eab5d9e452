import numpy as np
import pytest

from dpchange.distributions import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def step_series():
    """Sixteen samples with a mean shift after t = 8."""
    r = np.random.default_rng(3)
    return np.concatenate([r.normal(0.0, 1.0, 8), r.normal(1.5, 1.0, 8)])


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one ``PASS``/``FAIL`` line per acceptance criterion."""
    lines = request.config.acceptance_lines

    def record(criterion: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
