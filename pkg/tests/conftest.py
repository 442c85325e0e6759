import os
from pathlib import Path

import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def record_criterion():
    """Collect one PASS/FAIL line per acceptance criterion for the summary."""

    def record(label, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] {label}" + (f" -- {detail}" if detail else ""))
        return passed

    return record


@pytest.fixture(scope="session")
def data_dir():
    """Directory holding user-exported strikenb.csv / doctor.csv / bids.csv, if any."""
    value = os.environ.get("DWCOUNT_DATA_DIR")
    return Path(value) if value else None


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
