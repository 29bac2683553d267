import time
from contextlib import contextmanager

import pytest

_LINES: list = []


@pytest.fixture()
def criterion():
    """``with criterion(n, title, limit_s): ...`` records one pass/fail line and enforces the runtime limit."""

    @contextmanager
    def run(number: int, title: str, limit_s=None):
        note = {}
        start = time.perf_counter()
        try:
            yield note
        except pytest.skip.Exception as exc:
            _LINES.append(f"[SKIP] {number:>2}. {title}: {exc}")
            raise
        except BaseException as exc:
            _LINES.append(f"[FAIL] {number:>2}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            raise
        elapsed = time.perf_counter() - start
        detail = note.get("detail", "")
        timing = f"{elapsed:.2f}s" + (f" (limit {limit_s:g}s)" if limit_s else "")
        if limit_s is not None and elapsed >= limit_s:
            _LINES.append(f"[FAIL] {number:>2}. {title}: runtime {timing}")
            pytest.fail(f"criterion {number} took {elapsed:.2f}s, limit {limit_s}s")
        _LINES.append(f"[PASS] {number:>2}. {title}: {detail} [{timing}]".replace(":  [", ": ["))

    return run


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
        terminalreporter.write_line(line)
