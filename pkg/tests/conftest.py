import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance replica")
    config._acceptance_lines = []


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one acceptance line and returns ``ok``."""
    lines = request.config._acceptance_lines

    def record(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
