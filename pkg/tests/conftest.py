import numpy as np
import pytest

from depthlab import synth


@pytest.fixture(scope="session")
def small_record():
    """One rendered ground_and_walls triplet at 32x48."""
    return synth.generate_dataset("ground_and_walls", 3, 1, 32, 48)[0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one ``A<n> PASS|FAIL`` line; lines are echoed in the terminal summary."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{criterion} {'PASS' if passed else 'FAIL'} :: {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
