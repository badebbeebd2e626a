"""Scalar log-domain helpers shared by the decoders."""

from __future__ import annotations

import math
from typing import Iterable

NEG_INF = float("-inf")


def log_add(a: float, b: float) -> float:
    """Return log(exp(a) + exp(b)) without leaving the log domain."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def logsumexp(values: Iterable[float]) -> float:
    vals = [v for v in values if v != NEG_INF]
    if not vals:
        return NEG_INF
    m = max(vals)
    if m == float("inf"):
        return m
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


def weighted(weight: float, value: float) -> float:
    """``weight * value`` where a zero weight silences ``-inf`` instead of giving NaN."""
    if weight == 0.0:
        return 0.0
    return weight * value
