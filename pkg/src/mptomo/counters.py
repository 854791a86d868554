"""Process-wide operation counters used to audit the offline/online split."""

from __future__ import annotations

from collections import Counter
from contextlib import contextmanager

COUNTS: Counter = Counter()


def bump(name: str, n: int = 1) -> None:
    COUNTS[name] += n


def snapshot() -> Counter:
    return Counter(COUNTS)


def merge(delta: Counter) -> None:
    COUNTS.update(delta)


@contextmanager
def tally():
    """Yield a Counter that, on exit, holds the operations performed inside the block."""
    before = snapshot()
    out: Counter = Counter()
    try:
        yield out
    finally:
        after = snapshot()
        after.subtract(before)
        out.update({k: v for k, v in after.items() if v})
