import time
from contextlib import contextmanager

import numpy as np
import pytest

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Outcome:
    def __init__(self):
        self.ok = False
        self.detail = ""
        self.seconds = 0.0


@pytest.fixture
def criterion(request):
    """Time an acceptance criterion and record one summary line for it.

    The body sets ``ok`` and ``detail``; an exception inside the block is
    recorded as a failure. The caller still asserts on the outcome.
    """
    lines = request.config.stash.setdefault(_CRITERIA, {})

    @contextmanager
    def run(number: int, title: str, budget: float):
        out = _Outcome()
        t0 = time.perf_counter()
        try:
            yield out
        except BaseException as e:
            out.ok = False
            out.detail = out.detail or f"{type(e).__name__}: {e}"
            raise
        finally:
            out.seconds = time.perf_counter() - t0
            if out.seconds >= budget:
                out.ok = False
                out.detail += f"; over the {budget:g} s budget"
            verdict = "PASS" if out.ok else "FAIL"
            lines[number] = (f"criterion {number:2d} {verdict}  {title}: {out.detail} "
                             f"[{out.seconds:.1f} s, budget {budget:g} s]")

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
