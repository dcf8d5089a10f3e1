from __future__ import annotations

import numpy as np
import pytest

from riskeig.model import DtModel, CtModel


def dense_dt(mats, cost, **kw):
    return DtModel.from_dense(np.asarray(mats, dtype=float), np.asarray(cost, dtype=float), **kw)


def dense_ct(mats, cost, **kw):
    return CtModel.from_dense(np.asarray(mats, dtype=float), np.asarray(cost, dtype=float), **kw)


@pytest.fixture
def swap_dt():
    """Closed 2-state deterministic swap with costs (0.2, 1.0)."""
    return dense_dt([[[0, 1], [1, 0]]], [[0.2], [1.0]], closed=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
