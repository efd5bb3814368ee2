import pytest

from mechforge.market import BUYER, SELLER, make_instance

ACCEPTANCE_LINES: list[str] = []


def fixture_a(b1_value: float = 10.0):
    """Seller s1 offers goods 0 and 1 for -4; b1 wants both for b1_value; b2 wants good 0 for 3."""
    return make_instance(2, [
        (SELLER, [((-1, -1), -4.0)]),
        (BUYER, [((1, 1), b1_value)]),
        (BUYER, [((1, 0), 3.0)]),
    ])


@pytest.fixture
def fix_a():
    return fixture_a()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
