import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, str(Path(__file__).parent))


def random_sparse(m, n, density, rng, binary=False):
    A = sp.random(m, n, density=density, random_state=rng, format="csr")
    if binary:
        A.data[:] = 1.0
    A.sort_indices()
    return A


def random_model(m, n, r, rng, step_index=0):
    from psirec.model import FactorModel

    U, _ = np.linalg.qr(rng.standard_normal((m, r)))
    V, _ = np.linalg.qr(rng.standard_normal((n, r)))
    S = np.diag(np.sort(rng.uniform(1.0, 5.0, r))[::-1])
    return FactorModel(U=U, S=S, V=V, step_index=step_index)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Records one status line per acceptance criterion; printed in the terminal summary."""

    def record(number, status, detail):
        line = f"criterion {number:>2}: {status:<4} {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
