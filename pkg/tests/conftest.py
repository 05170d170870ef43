from collections import OrderedDict

import pytest

# Acceptance verdicts, filled in by test_acceptance and printed once at the end.
ACCEPTANCE = OrderedDict()


def record_acceptance(number, label, passed, detail):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {label}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
