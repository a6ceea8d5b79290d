import itertools

import numpy as np
import pytest

from netlab._types import LatticePath
from netlab.kernel import lazy_kernel, simple_kernel


@pytest.fixture(scope="session")
def lazy():
    return lazy_kernel()


@pytest.fixture(scope="session")
def simple():
    return simple_kernel()


def naive_hop_closure(paths, rule="strict"):
    """Pairwise concatenation iterated to a fixpoint (reference for hop_closure)."""
    cur = set(paths)
    while True:
        new = set()
        for p, q in itertools.product(cur, repeat=2):
            lo = max(p.start_time, q.start_time) + (1 if rule == "strict" else 0)
            lo = max(lo, p.start_time + 1)
            for t in range(lo, p.end_time + 1):
                if q.defined_at(t) and p.at(t) == q.at(t):
                    head = p.positions[: t - p.start_time]
                    tail = q.positions[t - q.start_time :]
                    new.add(LatticePath(p.start_time, head + tail))
        if new <= cur:
            return cur
        cur |= new


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record the pass/fail line of an acceptance criterion."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        store[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n in store:
            ok, detail = store[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
