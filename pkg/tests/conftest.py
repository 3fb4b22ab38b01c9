import numpy as np
import pytest

from hessflat.grid import Cube, UniformGrid, sample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid2(m=33, d=2, r=1.0):
    return UniformGrid(Cube((0.0,) * d, r), m)


def sampled(fn, m=33, d=2, r=1.0):
    return sample(fn, Cube((0.0,) * d, r), m)


# criterion -> summary line, filled by test_acceptance.py
ACCEPTANCE = {}


def record_acceptance(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
