"""Retry schedule shared by the publisher reporter and the device queue.

Delay before retry ``n`` (n >= 1) is ``min(cap, base * 2**(n-1))`` seconds,
stretched by a uniform multiplicative jitter in ``[1.0, 1.5)``.
"""

from __future__ import annotations

import random

BASE_DELAY = 1.0
MAX_DELAY = 60.0
JITTER = 0.5


def backoff_delay(attempt: int, base: float = BASE_DELAY, cap: float = MAX_DELAY) -> float:
    if attempt < 1:
        raise ValueError("attempt numbers start at 1")
    # Clamp the exponent so huge attempt counts don't build giant ints.
    return min(cap, base * 2 ** min(attempt - 1, 64))


def jittered_delay(
    attempt: int,
    rng: random.Random,
    base: float = BASE_DELAY,
    cap: float = MAX_DELAY,
    jitter: float = JITTER,
) -> float:
    delay = backoff_delay(attempt, base, cap)
    return delay + rng.uniform(0.0, jitter) * delay
