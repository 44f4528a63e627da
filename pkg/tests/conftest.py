from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def mnist_path():
    path = ROOT / "data" / "mnist5k"
    if not (path / "train-images-idx3-ubyte.gz").exists():
        pytest.skip("bundled MNIST subset missing")
    return path


# one line per acceptance criterion, echoed again at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` prints a PASS/FAIL line, then asserts ``ok``."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(n, ok, detail):
        line = f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        assert ok, line

    return record


def _order(line):
    tag = line.split(":")[0].split()[1]
    digits = "".join(c for c in tag if c.isdigit())
    return int(digits), tag


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=_order):
            terminalreporter.write_line(line)
