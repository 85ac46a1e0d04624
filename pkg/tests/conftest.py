import warnings

import pytest

from kinklab.statics import SaddleWarning


@pytest.fixture(autouse=True)
def _quiet_saddles():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SaddleWarning)
        yield


CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion as a single pass/fail line and assert it.

    ``items`` is a list of ``(label, value, passed)``; the line is printed
    immediately and repeated in the terminal summary.
    """
    def record(number: int, items):
        failed = [label for label, _, ok in items if not ok]
        detail = "; ".join(f"{label} = {_fmt(value)}{'' if ok else ' [FAIL]'}"
                           for label, value, ok in items)
        line = f"criterion {number}: {'FAIL' if failed else 'PASS'} - {detail}"
        request.config.stash[CRITERIA][number] = line
        print(line)
        assert not failed, f"criterion {number} failed: {', '.join(failed)}"
    return record


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
