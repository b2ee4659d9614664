from __future__ import annotations

import numpy as np
import pytest

from reversion.fixtures import write_fixture_benchmark
from reversion.toy import ToyBackbone

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def toy():
    return ToyBackbone()


@pytest.fixture(scope="session")
def toy_vocab(toy):
    return toy.vocabulary()


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench") / "benchmark"
    write_fixture_benchmark(root, seed=0)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion():
    """Record one acceptance verdict; reported in the terminal summary."""

    def record(number: int, ok: bool, detail: str = ""):
        _CRITERIA[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
