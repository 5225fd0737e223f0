import time
from contextlib import contextmanager

import pytest

_LINES = {}


@pytest.fixture
def criterion():
    """Context manager recording one PASS/FAIL line per acceptance criterion.

    Assertions inside the block decide the outcome; ``rec["detail"]`` is
    appended to the line.
    """

    @contextmanager
    def run(number, title):
        rec = {"detail": ""}
        t0 = time.perf_counter()
        try:
            yield rec
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            _LINES[number] = f"[{number:2d}] FAIL  {title}: {rec['detail']} ({msg[:160]})"
            print(_LINES[number])
            raise
        dt = time.perf_counter() - t0
        _LINES[number] = f"[{number:2d}] PASS  {title}: {rec['detail']} [{dt:.1f} s]"
        print(_LINES[number])

    return run


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_LINES):
            terminalreporter.write_line(_LINES[k])
