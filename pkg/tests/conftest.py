import numpy as np
import pytest

from satpredist.channel import build_channel
from satpredist.dsp import apsk32
from satpredist.volterra import VolterraKernels


@pytest.fixture(scope="session")
def default_channel():
    return build_channel()


@pytest.fixture(scope="session")
def constellation():
    return apsk32()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_sparse_kernels(rng, max_order=5, L1=1, L2=1, n_kernels=6, scale=0.1):
    """Random kernel set with a unit linear tap and a few higher orders."""
    entries = {(0,): 1.0 + 0.1j}
    lags = np.arange(-L1, L2 + 1)
    while len(entries) < n_kernels:
        p = int(rng.choice(np.arange(1, max_order + 1, 2)))
        u = tuple(sorted(rng.choice(lags, (p + 1) // 2)))
        c = tuple(sorted(rng.choice(lags, (p - 1) // 2)))
        key = u + c
        entries.setdefault(key, scale * (rng.standard_normal() + 1j * rng.standard_normal()))
    return VolterraKernels.from_entries(entries, L1, L2)


ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Store and print the outcome of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
