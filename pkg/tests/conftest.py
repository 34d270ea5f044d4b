import numpy as np
import pytest

from msaw.lattice import SpectralCache, Torus
from msaw.rates import RateSpec


@pytest.fixture(scope="session")
def quartic():
    return RateSpec.quartic()


@pytest.fixture(scope="session")
def torus3():
    return Torus(3, 4)


@pytest.fixture(scope="session")
def cache8():
    return SpectralCache.build(Torus(3, 8))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record a one-line pass/fail verdict; the lines are echoed in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
