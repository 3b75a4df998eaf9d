import contextlib
import time

import pytest

_RESULTS = []


class _Check:
    def __init__(self, label):
        self.label = label
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion("4 MMD estimator") as c: ...`` records one PASS/FAIL line."""

    @contextlib.contextmanager
    def run(label):
        check = _Check(label)
        start = time.perf_counter()
        try:
            yield check
        except BaseException as exc:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            _emit(label, False, f"{check.detail} | {msg}".strip(" |"), time.perf_counter() - start)
            raise
        _emit(label, True, check.detail, time.perf_counter() - start)

    return run


def _emit(label, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {label}: {detail} [{seconds:.1f}s]"
    _RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)
