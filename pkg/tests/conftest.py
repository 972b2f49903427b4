import contextlib
import time

import pytest


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion's verdict for the summary."""
    results = request.config.stash.setdefault(_RESULTS, {})

    @contextlib.contextmanager
    def run(number, title):
        notes = []
        start = time.perf_counter()
        try:
            yield notes.append
        except BaseException as exc:
            detail = "; ".join(notes + [f"{type(exc).__name__}: {exc}".splitlines()[0]])
            results[number] = (False, title, detail, time.perf_counter() - start)
            raise
        results[number] = (True, title, "; ".join(notes), time.perf_counter() - start)

    return run


_RESULTS = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, title, detail, seconds = results[number]
        tag = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{tag}] criterion {number}: {title} ({seconds:.2f}s) {detail}")
