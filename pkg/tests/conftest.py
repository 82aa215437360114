import pytest

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.stash[_LINES_KEY]

    def _report(label: str, ok: bool, detail: str) -> bool:
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: _order(s)):
            terminalreporter.write_line(line)


def _order(line: str):
    label = line.split()[1].rstrip(":")
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label
