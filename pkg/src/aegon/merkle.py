"""RFC 6962 Merkle tree hashing, proof generation and pure proof verification.

Leaves hash as SHA-256(0x00 || data) and interior nodes as
SHA-256(0x01 || left || right). The empty tree hashes to SHA-256("").
The verifiers follow the RFC 9162 algorithms and need no tree state, so an
auditor can run them on bytes fetched from an untrusted broker.
"""

from __future__ import annotations

import hashlib
import threading
from collections.abc import Sequence

from aegon.errors import OutOfRangeError, ProofFormatError

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
DIGEST_SIZE = 32
EMPTY_ROOT = hashlib.sha256(b"").digest()


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def interior_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def split_point(n: int) -> int:
    """Largest power of two strictly less than ``n`` (n >= 2)."""
    return 1 << ((n - 1).bit_length() - 1)


class MerkleTree:
    """Append-only tree over leaf hashes.

    Hashes of complete, aligned power-of-two subtrees are cached per level,
    so roots and proofs for any historical size cost O(log^2 n) hashes.
    """

    def __init__(self, leaf_hashes: Sequence[bytes] = ()):
        self._levels: list[list[bytes]] = [[]]
        self._lock = threading.Lock()
        for digest in leaf_hashes:
            self.append_hash(digest)

    @property
    def size(self) -> int:
        return len(self._levels[0])

    def append_hash(self, digest: bytes) -> int:
        if len(digest) != DIGEST_SIZE:
            raise ProofFormatError("leaf digest must be 32 bytes")
        with self._lock:
            index = len(self._levels[0])
            # Upper levels are filled before the leaf becomes visible, so a
            # concurrent reader never sees a size whose subtrees are missing.
            node, level, pos = digest, 0, index
            pending = []
            while pos & 1:
                sibling = self._levels[level][pos - 1]
                node = interior_hash(sibling, node)
                level += 1
                pos >>= 1
                pending.append((level, node))
            for lvl, value in pending:
                if lvl == len(self._levels):
                    self._levels.append([])
                self._levels[lvl].append(value)
            self._levels[0].append(digest)
            return index

    def append(self, data: bytes) -> int:
        return self.append_hash(leaf_hash(data))

    def leaf(self, index: int) -> bytes:
        return self._levels[0][index]

    def _check_size(self, tree_size: int) -> None:
        if not 0 <= tree_size <= self.size:
            raise OutOfRangeError(f"tree_size {tree_size} outside [0, {self.size}]")

    def _subtree(self, start: int, end: int) -> bytes:
        n = end - start
        if n == 0:
            return EMPTY_ROOT
        if n & (n - 1) == 0 and start % n == 0:
            level = n.bit_length() - 1
            return self._levels[level][start >> level]
        k = split_point(n)
        return interior_hash(self._subtree(start, start + k), self._subtree(start + k, end))

    def root(self, tree_size: int | None = None) -> bytes:
        if tree_size is None:
            tree_size = self.size
        self._check_size(tree_size)
        return self._subtree(0, tree_size)

    def inclusion_path(self, leaf_index: int, tree_size: int | None = None) -> list[bytes]:
        if tree_size is None:
            tree_size = self.size
        self._check_size(tree_size)
        if not 0 <= leaf_index < tree_size:
            raise OutOfRangeError(f"leaf_index {leaf_index} not below tree_size {tree_size}")
        path: list[bytes] = []
        start, end, m = 0, tree_size, leaf_index
        while end - start > 1:
            k = split_point(end - start)
            if m < k:
                path.append(self._subtree(start + k, end))
                end = start + k
            else:
                path.append(self._subtree(start, start + k))
                start += k
                m -= k
        path.reverse()
        return path

    def consistency_path(self, old_size: int, new_size: int | None = None) -> list[bytes]:
        if new_size is None:
            new_size = self.size
        self._check_size(new_size)
        if not 0 <= old_size <= new_size:
            raise OutOfRangeError(f"old_size {old_size} outside [0, {new_size}]")
        if old_size == 0 or old_size == new_size:
            return []
        path: list[bytes] = []
        start, end, m, complete = 0, new_size, old_size, True
        while m != end - start:
            k = split_point(end - start)
            if m <= k:
                path.append(self._subtree(start + k, end))
                end = start + k
            else:
                path.append(self._subtree(start, start + k))
                start += k
                m -= k
                complete = False
        if not complete:
            path.append(self._subtree(start, end))
        path.reverse()
        return path


def _check_digest(value: bytes, what: str) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_SIZE:
        raise ProofFormatError(f"{what} must be a 32-byte digest")


def root_from_inclusion_path(
    leaf_digest: bytes, leaf_index: int, tree_size: int, path: Sequence[bytes]
) -> bytes | None:
    """Recompute the root implied by an audit path, or None if the path shape is wrong."""
    _check_digest(leaf_digest, "leaf digest")
    for p in path:
        _check_digest(p, "audit path element")
    if leaf_index < 0 or leaf_index >= tree_size:
        return None
    fn, sn = leaf_index, tree_size - 1
    r = bytes(leaf_digest)
    for p in path:
        if sn == 0:
            return None
        if fn & 1 or fn == sn:
            r = interior_hash(p, r)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            r = interior_hash(r, p)
        fn >>= 1
        sn >>= 1
    if sn != 0:
        return None
    return r


def verify_inclusion_path(
    leaf_digest: bytes, leaf_index: int, tree_size: int, path: Sequence[bytes], root: bytes
) -> bool:
    _check_digest(root, "root")
    computed = root_from_inclusion_path(leaf_digest, leaf_index, tree_size, path)
    return computed is not None and computed == root


def verify_consistency_path(
    old_size: int,
    new_size: int,
    path: Sequence[bytes],
    old_root: bytes,
    new_root: bytes,
) -> bool:
    """True iff ``path`` proves the size-old_size tree is a prefix of the size-new_size tree."""
    _check_digest(old_root, "old root")
    _check_digest(new_root, "new root")
    for p in path:
        _check_digest(p, "consistency path element")
    if old_size < 0 or new_size < old_size:
        return False
    if old_size == new_size:
        return not path and old_root == new_root
    if old_size == 0:
        return not path and old_root == EMPTY_ROOT
    if not path:
        return False

    nodes = list(path)
    if old_size & (old_size - 1) == 0:
        nodes.insert(0, bytes(old_root))
    fn, sn = old_size - 1, new_size - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = nodes[0]
    for c in nodes[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = interior_hash(c, fr)
            sr = interior_hash(c, sr)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            sr = interior_hash(sr, c)
        fn >>= 1
        sn >>= 1
    return sn == 0 and fr == old_root and sr == new_root
