import pytest

from skipfree.bernstein import BernsteinTriplet, ZeroMeasure
from skipfree.families import beta33, meixner31, perturbed32

_ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Keep one result line per acceptance criterion for the terminal summary."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    _ACCEPTANCE[number] = line
    print(line)


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture(scope="session")
def linear():
    """phi(u) = u."""
    return BernsteinTriplet(0.0, 1.0, ZeroMeasure())


@pytest.fixture(scope="session")
def meixner():
    return meixner31(1.0, 1.0)


@pytest.fixture(scope="session")
def meixner2():
    return meixner31(1.0, 2.0)


@pytest.fixture(scope="session")
def perturbed():
    return perturbed32(3.0)


@pytest.fixture(scope="session")
def beta_family():
    return beta33(2.0)
