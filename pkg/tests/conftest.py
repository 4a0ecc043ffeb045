import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icmt.data import InteractionDataset, split_dataset  # noqa: E402
from icmt.synth import generate_zipf_interactions  # noqa: E402

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def record():
    """``record(n, passed, detail)`` prints and stores one line per acceptance criterion."""
    def _record(n, name, passed, detail=""):
        line = f"criterion {n} [{name}]: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        ACCEPTANCE[n] = line
        print(line)
        return passed
    return _record


@pytest.fixture(scope="session")
def tiny_split():
    """20 users x 30 items."""
    pairs = generate_zipf_interactions(20, 30, 1.2, seed=3, per_user=8)
    ds = InteractionDataset(20, 30, pairs)
    return split_dataset(ds, seed=3)


@pytest.fixture(scope="session")
def small_split():
    pairs = generate_zipf_interactions(60, 80, 1.2, seed=5, per_user=15)
    ds = InteractionDataset(60, 80, pairs)
    return split_dataset(ds, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
