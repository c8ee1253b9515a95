"""Brute-force Merkle oracle written straight from the RFC 6962 definitions.

Deliberately shares no code with ``aegon.merkle``: plain recursion over the
raw leaf byte strings, hashing with hashlib directly.
"""

import hashlib


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def mth(leaves: list[bytes]) -> bytes:
    n = len(leaves)
    if n == 0:
        return sha256(b"")
    if n == 1:
        return sha256(b"\x00" + leaves[0])
    k = 1
    while k * 2 < n:
        k *= 2
    return sha256(b"\x01" + mth(leaves[:k]) + mth(leaves[k:]))


def path(m: int, leaves: list[bytes]) -> list[bytes]:
    n = len(leaves)
    if n <= 1:
        return []
    k = 1
    while k * 2 < n:
        k *= 2
    if m < k:
        return path(m, leaves[:k]) + [mth(leaves[k:])]
    return path(m - k, leaves[k:]) + [mth(leaves[:k])]


def subproof(m: int, leaves: list[bytes], complete: bool) -> list[bytes]:
    n = len(leaves)
    if m == n:
        return [] if complete else [mth(leaves)]
    k = 1
    while k * 2 < n:
        k *= 2
    if m <= k:
        return subproof(m, leaves[:k], complete) + [mth(leaves[k:])]
    return subproof(m - k, leaves[k:], False) + [mth(leaves[:k])]


def consistency(m: int, leaves: list[bytes]) -> list[bytes]:
    if m == 0 or m == len(leaves):
        return []
    return subproof(m, leaves, True)


def prefix_roots(leaves: list[bytes]) -> list[bytes]:
    """MTH of every prefix, leaves[:1] through leaves[:n].

    Same recursion as ``mth``, memoized on (lo, hi) so that checking all
    prefixes of a 512-leaf ledger stays cheap.
    """
    memo: dict[tuple[int, int], bytes] = {}

    def h(lo: int, hi: int) -> bytes:
        if (lo, hi) in memo:
            return memo[lo, hi]
        n = hi - lo
        if n == 1:
            out = sha256(b"\x00" + leaves[lo])
        else:
            k = 1
            while k * 2 < n:
                k *= 2
            out = sha256(b"\x01" + h(lo, lo + k) + h(lo + k, hi))
        memo[lo, hi] = out
        return out

    return [h(0, n) for n in range(1, len(leaves) + 1)]
