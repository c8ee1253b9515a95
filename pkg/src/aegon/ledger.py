"""Append-only transaction ledger committed into an RFC 6962 Merkle tree.

Every entry is canonical JSON; its leaf hash is taken over exactly those
bytes. The ledger publishes Signed Tree Heads and serves inclusion and
consistency proofs for any historical size. Verification helpers at the
bottom of the module are pure functions of their arguments.
"""

from __future__ import annotations

import logging
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from aegon import jose
from aegon.canonical import canonical_decode, canonical_encode
from aegon.errors import (
    ConflictError,
    KeyUnavailableError,
    NotFoundError,
    OutOfRangeError,
    ProofFormatError,
    ValidationError,
)
from aegon.keys import STH_SIGNING, BrokerKeySet, find_jwk
from aegon.merkle import (
    DIGEST_SIZE,
    MerkleTree,
    leaf_hash,
    verify_consistency_path,
    verify_inclusion_path,
)
from aegon.recordlog import RecordLog

logger = logging.getLogger(__name__)

LICENSE_ISSUED = "license_issued"
CONTENT_HASH_REPORTED = "content_hash_reported"
PROVENANCE_EVENT = "provenance_event"
RECEIPT_ACCEPTED = "receipt_accepted"
SPOT_CHECK_RESULT = "spot_check_result"
ENTRY_TYPES = (
    LICENSE_ISSUED,
    CONTENT_HASH_REPORTED,
    PROVENANCE_EVENT,
    RECEIPT_ACCEPTED,
    SPOT_CHECK_RESULT,
)

LEDGER_FILE = "ledger.aegl"
STH_FILE = "sth.aegl"


@dataclass(frozen=True)
class LedgerEntry:
    txn_id: str
    entry_type: str
    payload: bytes
    server_timestamp: int
    leaf_index: int | None = None

    @classmethod
    def create(
        cls, txn_id: str, entry_type: str, payload: dict, server_timestamp: int
    ) -> LedgerEntry:
        return cls(txn_id, entry_type, canonical_encode(payload), int(server_timestamp))

    @property
    def payload_obj(self) -> Any:
        return canonical_decode(self.payload)

    def leaf_bytes(self) -> bytes:
        """The exact bytes committed into the tree (leaf_index is positional, not included)."""
        return canonical_encode(
            {
                "entry_type": self.entry_type,
                "payload": canonical_decode(self.payload),
                "server_timestamp": self.server_timestamp,
                "txn_id": self.txn_id,
            }
        )

    @classmethod
    def from_leaf_bytes(cls, data: bytes, leaf_index: int | None = None) -> LedgerEntry:
        obj = canonical_decode(data)
        if not isinstance(obj, dict) or set(obj) != {
            "entry_type", "payload", "server_timestamp", "txn_id",
        }:
            raise ValidationError("leaf bytes are not a ledger entry")
        return cls(
            txn_id=obj["txn_id"],
            entry_type=obj["entry_type"],
            payload=canonical_encode(obj["payload"]),
            server_timestamp=obj["server_timestamp"],
            leaf_index=leaf_index,
        )

    def to_json(self) -> dict:
        return {
            "txn_id": self.txn_id,
            "entry_type": self.entry_type,
            "payload": self.payload_obj,
            "server_timestamp": self.server_timestamp,
            "leaf_index": self.leaf_index,
            "leaf_b64": jose.b64url_encode(self.leaf_bytes()),
        }


def _sth_message(tree_size: int, timestamp: int, root_hash: bytes) -> bytes:
    return canonical_encode(
        {"root_hash": root_hash.hex(), "timestamp": timestamp, "tree_size": tree_size}
    )


@dataclass(frozen=True)
class SignedTreeHead:
    tree_size: int
    root_hash: bytes
    timestamp: int
    signature: bytes
    key_id: str

    def message(self) -> bytes:
        return _sth_message(self.tree_size, self.timestamp, self.root_hash)

    def to_json(self) -> dict:
        return {
            "tree_size": self.tree_size,
            "root_hash": self.root_hash.hex(),
            "timestamp": self.timestamp,
            "signature": jose.b64url_encode(self.signature),
            "key_id": self.key_id,
        }

    @classmethod
    def from_json(cls, doc: dict) -> SignedTreeHead:
        try:
            root = bytes.fromhex(doc["root_hash"])
            sth = cls(
                tree_size=doc["tree_size"],
                root_hash=root,
                timestamp=doc["timestamp"],
                signature=jose.b64url_decode(doc["signature"]),
                key_id=doc["key_id"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProofFormatError(f"malformed STH: {exc}") from exc
        if len(root) != DIGEST_SIZE:
            raise ProofFormatError("STH root_hash must be 32 bytes")
        for name in ("tree_size", "timestamp"):
            value = getattr(sth, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ProofFormatError(f"STH {name} must be a non-negative integer")
        return sth


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    tree_size: int
    audit_path: tuple[bytes, ...]

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "tree_size": self.tree_size,
            "audit_path": [d.hex() for d in self.audit_path],
        }

    @classmethod
    def from_json(cls, doc: dict) -> InclusionProof:
        try:
            return cls(
                leaf_index=int(doc["leaf_index"]),
                tree_size=int(doc["tree_size"]),
                audit_path=tuple(bytes.fromhex(h) for h in doc["audit_path"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProofFormatError(f"malformed inclusion proof: {exc}") from exc


@dataclass(frozen=True)
class ConsistencyProof:
    old_size: int
    new_size: int
    path: tuple[bytes, ...]

    def to_json(self) -> dict:
        return {
            "old_size": self.old_size,
            "new_size": self.new_size,
            "path": [d.hex() for d in self.path],
        }

    @classmethod
    def from_json(cls, doc: dict) -> ConsistencyProof:
        try:
            return cls(
                old_size=int(doc["old_size"]),
                new_size=int(doc["new_size"]),
                path=tuple(bytes.fromhex(h) for h in doc["path"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProofFormatError(f"malformed consistency proof: {exc}") from exc


@dataclass
class SthPolicy:
    """Publish after ``interval`` seconds or ``max_appends`` new leaves, whichever first."""

    interval: float = 60.0
    max_appends: int = 1000


class Ledger:
    """The broker's append-only ledger.

    Appends are serialized by one lock; reads of roots and proofs never
    block on it because every published tree size is immutable.
    ``data_dir=None`` keeps everything in memory.
    """

    def __init__(
        self,
        data_dir: str | Path | None = None,
        keys: BrokerKeySet | None = None,
        clock: Callable[[], float] = time.time,
        sth_policy: SthPolicy | None = None,
        fsync: bool = True,
    ):
        self.keys = keys
        self.clock = clock
        self.sth_policy = sth_policy or SthPolicy()
        self._write_lock = threading.RLock()
        self._tree = MerkleTree()
        self._entries: list[LedgerEntry] = []
        self._license_index: dict[str, int] = {}
        self._by_txn: dict[str, list[int]] = {}
        self._sths: list[SignedTreeHead] = []
        self._log: RecordLog | None = None
        self._sth_log: RecordLog | None = None
        self._listeners: list[Callable[[LedgerEntry], None]] = []

        if data_dir is not None:
            data_dir = Path(data_dir)
            self._log = RecordLog(data_dir / LEDGER_FILE, fsync=fsync)
            self._sth_log = RecordLog(data_dir / STH_FILE, fsync=fsync)
            self._recover()
        self._last_sth_time = self.clock()

    def _recover(self) -> None:
        assert self._log is not None and self._sth_log is not None
        for raw in self._log.records():
            entry = LedgerEntry.from_leaf_bytes(raw, leaf_index=len(self._entries))
            self._index(entry, raw)
        for raw in self._sth_log.records():
            sth = SignedTreeHead.from_json(canonical_decode(raw))
            if sth.tree_size <= self.size:
                self._sths.append(sth)
            else:
                # The leaf log lost entries an STH already committed to; keep the
                # STH out of history so the broker never serves it again.
                logger.error("dropping STH for size %d beyond recovered size %d",
                             sth.tree_size, self.size)
        logger.info("recovered ledger: %d entries, %d STHs", self.size, len(self._sths))

    def _index(self, entry: LedgerEntry, raw: bytes) -> None:
        self._entries.append(entry)
        self._by_txn.setdefault(entry.txn_id, []).append(entry.leaf_index)
        if entry.entry_type == LICENSE_ISSUED:
            self._license_index[entry.txn_id] = entry.leaf_index
        self._tree.append(raw)

    def add_listener(self, callback: Callable[[LedgerEntry], None]) -> None:
        self._listeners.append(callback)

    @property
    def size(self) -> int:
        return self._tree.size

    def append(self, entry: LedgerEntry) -> int:
        """Persist ``entry`` and return its leaf index."""
        if entry.entry_type not in ENTRY_TYPES:
            raise ValidationError(f"unknown entry_type {entry.entry_type!r}")
        raw = entry.leaf_bytes()
        with self._write_lock:
            if entry.entry_type == LICENSE_ISSUED:
                if entry.txn_id in self._license_index:
                    raise ConflictError(f"txn_id {entry.txn_id} already issued")
            elif entry.txn_id not in self._license_index:
                raise NotFoundError(f"txn_id {entry.txn_id} has no license_issued entry")
            index = self.size
            if self._log is not None:
                self._log.append(raw)
            stored = replace(entry, leaf_index=index)
            self._index(stored, raw)
            if self.keys is not None and self.size - self._last_sth_size() >= self.sth_policy.max_appends:
                self.publish_sth()
        for callback in self._listeners:
            callback(stored)
        return index

    def record(self, entry_type: str, txn_id: str, payload: dict, server_timestamp: int | None = None) -> LedgerEntry:
        """Build, append and return the stored entry."""
        ts = int(self.clock()) if server_timestamp is None else server_timestamp
        index = self.append(LedgerEntry.create(txn_id, entry_type, payload, ts))
        return self._entries[index]

    def entry(self, leaf_index: int) -> LedgerEntry:
        if not 0 <= leaf_index < self.size:
            raise OutOfRangeError(f"no leaf {leaf_index}")
        return self._entries[leaf_index]

    def entries_for(self, txn_id: str) -> list[LedgerEntry]:
        return [self._entries[i] for i in self._by_txn.get(txn_id, [])]

    def license_entry(self, txn_id: str) -> LedgerEntry:
        try:
            return self._entries[self._license_index[txn_id]]
        except KeyError:
            raise NotFoundError(f"unknown txn_id {txn_id}") from None

    def has_license(self, txn_id: str) -> bool:
        return txn_id in self._license_index

    def root_hash(self, tree_size: int | None = None) -> bytes:
        return self._tree.root(self.size if tree_size is None else tree_size)

    def leaf_digest(self, leaf_index: int) -> bytes:
        return self._tree.leaf(leaf_index)

    def inclusion_proof(
        self, target: str | int, tree_size: int | None = None
    ) -> InclusionProof:
        """Audit path for a leaf index, or for a txn_id's license_issued entry."""
        if isinstance(target, str):
            leaf_index = self.license_entry(target).leaf_index
        else:
            leaf_index = target
        size = self.size if tree_size is None else tree_size
        if not 0 <= size <= self.size:
            raise OutOfRangeError(f"tree_size {size} beyond current size {self.size}")
        if not 0 <= leaf_index < size:
            raise OutOfRangeError(f"leaf {leaf_index} not inside tree of size {size}")
        return InclusionProof(leaf_index, size, tuple(self._tree.inclusion_path(leaf_index, size)))

    def consistency_proof(self, old_size: int, new_size: int | None = None) -> ConsistencyProof:
        new = self.size if new_size is None else new_size
        if not 0 <= old_size <= new <= self.size:
            raise OutOfRangeError(f"need 0 <= {old_size} <= {new} <= {self.size}")
        return ConsistencyProof(old_size, new, tuple(self._tree.consistency_path(old_size, new)))

    # -- Signed Tree Heads -------------------------------------------------

    def _last_sth_size(self) -> int:
        return self._sths[-1].tree_size if self._sths else 0

    def publish_sth(self) -> SignedTreeHead:
        if self.keys is None:
            raise KeyUnavailableError("no STH signing key loaded")
        key = self.keys.active(STH_SIGNING)
        with self._write_lock:
            size = self.size
            root = self.root_hash(size)
            ts = int(self.clock() * 1000)
            if self._sths and ts < self._sths[-1].timestamp:
                ts = self._sths[-1].timestamp
            signature = jose.sign_es256(key.private_key, _sth_message(size, ts, root))
            sth = SignedTreeHead(size, root, ts, signature, key.kid)
            if self._sth_log is not None:
                self._sth_log.append(canonical_encode(sth.to_json()))
            self._sths.append(sth)
            self._last_sth_time = self.clock()
        return sth

    def maybe_publish(self) -> SignedTreeHead | None:
        """Cadence hook, called periodically by the broker's scheduler."""
        if self.keys is None:
            return None
        due = self.clock() - self._last_sth_time >= self.sth_policy.interval
        grown = self.size - self._last_sth_size() >= self.sth_policy.max_appends
        if due or grown or not self._sths:
            return self.publish_sth()
        return None

    def latest_sth(self) -> SignedTreeHead | None:
        return self._sths[-1] if self._sths else None

    def sth_history(self) -> list[SignedTreeHead]:
        return list(self._sths)

    def close(self) -> None:
        for log in (self._log, self._sth_log):
            if log is not None:
                log.close()


# -- pure verification ----------------------------------------------------


def verify_sth(sth: SignedTreeHead, jwks: dict) -> bool:
    """True iff the STH signature verifies under its key in ``jwks``."""
    jwk = find_jwk(jwks, sth.key_id, STH_SIGNING)
    if jwk is None:
        return False
    try:
        public_key = jose.jwk_to_public_key(jwk)
    except jose.JwsError:
        return False
    return jose.verify_es256(public_key, sth.message(), sth.signature)


def verify_inclusion(
    proof: InclusionProof, leaf_digest: bytes, sth: SignedTreeHead, jwks: dict
) -> bool:
    """Check the STH signature, then recompute the root from the leaf and audit path."""
    if len(leaf_digest) != DIGEST_SIZE:
        raise ProofFormatError("leaf digest must be 32 bytes")
    if proof.tree_size != sth.tree_size or not verify_sth(sth, jwks):
        return False
    return verify_inclusion_path(
        leaf_digest, proof.leaf_index, proof.tree_size, proof.audit_path, sth.root_hash
    )


def verify_consistency(
    proof: ConsistencyProof, old_sth: SignedTreeHead, new_sth: SignedTreeHead, jwks: dict
) -> bool:
    if proof.old_size != old_sth.tree_size or proof.new_size != new_sth.tree_size:
        return False
    if not (verify_sth(old_sth, jwks) and verify_sth(new_sth, jwks)):
        return False
    return verify_consistency_path(
        proof.old_size, proof.new_size, proof.path, old_sth.root_hash, new_sth.root_hash
    )


def entry_leaf_hash(entry: LedgerEntry) -> bytes:
    return leaf_hash(entry.leaf_bytes())
