import numpy as np
import pytest

from p2pblock.basecase import prepare_base_case
from p2pblock.evaluator import Limits, TradeBlock
from p2pblock.netmodel import PhaseScaling, bundled_grid

PRODUCERS = [5, 7, 15, 19]
CONSUMERS = [24, 17, 3, 32]
SCALING = PhaseScaling(1.0, 1.2, 0.8)


@pytest.fixture(scope="session")
def grid33():
    return bundled_grid()


@pytest.fixture(scope="session")
def base33(grid33):
    return prepare_base_case(grid33, SCALING)


@pytest.fixture(scope="session")
def same_phase_block():
    return TradeBlock.from_pairs(PRODUCERS, CONSUMERS, "a", "a")


@pytest.fixture(scope="session")
def cross_phase_block():
    return TradeBlock.from_pairs(PRODUCERS, CONSUMERS, "a", "b")


@pytest.fixture(scope="session")
def ref_limits():
    # alpha 1 %, current headroom 30 %, voltage deviation 5 %
    return Limits(0.01, 0.05, 0.30)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: number, name, outcome and a short measurement."""
    def record(num: int, name: str, ok: bool, detail: str = "") -> bool:
        ACCEPTANCE[num] = (name, bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[num]
        tr.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
