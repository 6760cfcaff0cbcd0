"""Partition combinatorics shared by the simultaneous-merger machinery.

Merger patterns are class-size multisets; the number of set partitions
realizing a multiset is carried analytically so raw equivalence relations
never need to be enumerated outside of brute-force test oracles.
"""
from __future__ import annotations

import math
from functools import lru_cache


@lru_cache(maxsize=None)
def partitions(n: int) -> tuple[tuple[int, ...], ...]:
    """Integer partitions of n, each as a tuple of parts in decreasing order."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return ((),)
    out: list[tuple[int, ...]] = []

    def extend(remaining: int, max_part: int, prefix: list[int]):
        if remaining == 0:
            out.append(tuple(prefix))
            return
        for part in range(min(remaining, max_part), 0, -1):
            prefix.append(part)
            extend(remaining - part, part, prefix)
            prefix.pop()

    extend(n, n, [])
    return tuple(out)


@lru_cache(maxsize=None)
def set_partition_count(n: int, parts: tuple[int, ...]) -> int:
    """Number of set partitions of n labeled elements with the given class sizes.

    Equals n! / (prod of part factorials * prod of multiplicities of each
    repeated part size).
    """
    if sum(parts) != n:
        raise ValueError(f"parts {parts} do not sum to {n}")
    count = math.factorial(n)
    for p in parts:
        count //= math.factorial(p)
    mult: dict[int, int] = {}
    for p in parts:
        mult[p] = mult.get(p, 0) + 1
    for m in mult.values():
        count //= math.factorial(m)
    return count


def log_multinomial(total: int, counts) -> float:
    out = math.lgamma(total + 1)
    for c in counts:
        out -= math.lgamma(c + 1)
    return out


def multinomial(total: int, counts) -> float:
    return math.exp(log_multinomial(total, counts))
