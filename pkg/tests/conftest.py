from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def mini_coin() -> Path:
    return FIXTURES / "mini_coin.json"


@pytest.fixture
def mini_crosstask() -> Path:
    return FIXTURES / "mini_crosstask"


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
