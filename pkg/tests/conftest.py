import numpy as np
import pytest

from uwaloc.ocean import Environment, compute_modes


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def env():
    return Environment()


@pytest.fixture(scope="session")
def modes(env):
    return compute_modes(env)


# acceptance criteria register one line each; they are echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report_criterion():
    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
