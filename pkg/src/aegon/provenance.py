"""Platform-signed provenance events for the five AI transformation stages."""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.asymmetric import ec

from aegon import jose
from aegon.canonical import canonical_encode
from aegon.errors import AegonError, NotFoundError, Rejected, ValidationError
from aegon.ledger import CONTENT_HASH_REPORTED, PROVENANCE_EVENT, Ledger, LedgerEntry

logger = logging.getLogger(__name__)

EVENT_TYPES = (
    "content_fetched",
    "content_chunked",
    "chunk_embedded",
    "chunk_retrieved",
    "content_cited",
)
SKEW_THRESHOLD = 300
SIGNED_FIELDS = ("txn_id", "event_type", "content_fingerprint", "stage_detail", "client_timestamp")


def fingerprint(artifact: bytes) -> str:
    return hashlib.sha256(artifact).hexdigest()


def _signed_view(event: dict) -> dict:
    return {
        "txn_id": event["txn_id"],
        "event_type": event["event_type"],
        "content_fingerprint": event["content_fingerprint"],
        "stage_detail": event.get("stage_detail") or {},
        "client_timestamp": event["client_timestamp"],
    }


def sign_event(
    key: ec.EllipticCurvePrivateKey,
    txn_id: str,
    event_type: str,
    content_fingerprint: str,
    client_timestamp: int,
    stage_detail: dict | None = None,
    kid: str | None = None,
) -> dict:
    """Build a submission-ready event dict carrying ``platform_signature``."""
    event = {
        "txn_id": txn_id,
        "event_type": event_type,
        "content_fingerprint": content_fingerprint,
        "stage_detail": stage_detail or {},
        "client_timestamp": int(client_timestamp),
    }
    header = {"typ": "aegon-provenance"}
    if kid:
        header["kid"] = kid
    event["platform_signature"] = jose.jws_sign(canonical_encode(_signed_view(event)), key, **header)
    return event


def verify_event_signature(event: dict, public_key: ec.EllipticCurvePublicKey) -> bool:
    """The JWS must verify and its payload must equal the canonical encoding of the event fields."""
    try:
        decoded = jose.jws_decode(event["platform_signature"])
        expected = canonical_encode(_signed_view(event))
    except (KeyError, TypeError, jose.JwsError, AegonError):
        return False
    return decoded.payload == expected and jose.jws_verify(decoded, public_key)


def _check_shape(event: dict) -> None:
    if not isinstance(event, dict):
        raise ValidationError("event must be an object")
    if event.get("event_type") not in EVENT_TYPES:
        raise ValidationError(f"unknown event_type {event.get('event_type')!r}")
    fp = event.get("content_fingerprint")
    if not isinstance(fp, str) or len(fp) != 64 or any(c not in "0123456789abcdef" for c in fp):
        raise ValidationError("content_fingerprint must be 64 lowercase hex chars")
    ts = event.get("client_timestamp")
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise ValidationError("client_timestamp must be an integer")
    if not isinstance(event.get("txn_id"), str):
        raise ValidationError("txn_id must be a string")
    if not isinstance(event.get("stage_detail", {}) or {}, dict):
        raise ValidationError("stage_detail must be an object")
    if "server_receipt_timestamp" in event:
        raise ValidationError("server_receipt_timestamp is assigned by the broker")
    extra = set(event) - set(SIGNED_FIELDS) - {"platform_signature"}
    if extra:
        raise ValidationError(f"unexpected event fields {sorted(extra)}")


@dataclass
class ChainStatus:
    txn_id: str
    events_present: dict[str, int]
    order_valid: bool
    first_event_is_fetch: bool
    timestamp_flags: list[dict] = field(default_factory=list)
    fetch_hash_matches_publisher: str = "unreported"

    def to_json(self) -> dict:
        return {
            "txn_id": self.txn_id,
            "events_present": self.events_present,
            "order_valid": self.order_valid,
            "first_event_is_fetch": self.first_event_is_fetch,
            "timestamp_flags": self.timestamp_flags,
            "fetch_hash_matches_publisher": self.fetch_hash_matches_publisher,
        }


class ProvenanceLog:
    """Records signed events into the ledger and derives per-transaction chain status.

    ``platform_keys`` maps platform_id (the token ``sub``) to its public key.
    """

    def __init__(
        self,
        ledger: Ledger,
        platform_keys: dict[str, ec.EllipticCurvePublicKey] | None = None,
        clock: Callable[[], float] = time.time,
        skew_threshold: int = SKEW_THRESHOLD,
    ):
        self.ledger = ledger
        self.platform_keys = platform_keys if platform_keys is not None else {}
        self.clock = clock
        self.skew_threshold = skew_threshold
        self.rejections: list[dict] = []
        self._lock = threading.Lock()

    def register_platform(self, platform_id: str, public_key: ec.EllipticCurvePublicKey) -> None:
        self.platform_keys[platform_id] = public_key

    def _reject(self, event: dict, reason: str) -> Rejected:
        record = {"txn_id": event.get("txn_id"), "event_type": event.get("event_type"), "reason": reason}
        with self._lock:
            self.rejections.append(record)
        logger.warning("provenance event rejected: %s", record)
        return Rejected(reason)

    def record_event(
        self,
        event: dict,
        platform_pubkey: ec.EllipticCurvePublicKey | None = None,
        now: int | None = None,
    ) -> LedgerEntry:
        _check_shape(event)
        txn_id = event["txn_id"]
        if not self.ledger.has_license(txn_id):
            raise NotFoundError(f"unknown txn_id {txn_id}")
        if platform_pubkey is None:
            platform_id = self.ledger.license_entry(txn_id).payload_obj["claims"]["sub"]
            platform_pubkey = self.platform_keys.get(platform_id)
            if platform_pubkey is None:
                raise self._reject(event, "unregistered_platform")
        if not verify_event_signature(event, platform_pubkey):
            raise self._reject(event, "bad_signature")

        server_ts = int(self.clock()) if now is None else int(now)
        skew = server_ts - event["client_timestamp"]
        payload = {
            **_signed_view(event),
            "platform_signature": event["platform_signature"],
            "server_receipt_timestamp": server_ts,
        }
        if abs(skew) > self.skew_threshold:
            payload["skew_flag"] = {"skew_seconds": skew}
        return self.ledger.record(PROVENANCE_EVENT, txn_id, payload, server_ts)

    def events(self, txn_id: str) -> list[LedgerEntry]:
        return [e for e in self.ledger.entries_for(txn_id) if e.entry_type == PROVENANCE_EVENT]

    def validate_chain(self, txn_id: str) -> ChainStatus:
        entries = self.events(txn_id)
        counts = {t: 0 for t in EVENT_TYPES}
        first: dict[str, int] = {}
        flags = []
        fetched_fp = None
        for entry in entries:
            ev = entry.payload_obj
            etype = ev["event_type"]
            counts[etype] += 1
            first.setdefault(etype, entry.leaf_index)
            if etype == "content_fetched" and fetched_fp is None:
                fetched_fp = ev["content_fingerprint"]
            if "skew_flag" in ev:
                flags.append({"event": etype, "leaf_index": entry.leaf_index,
                              "skew_seconds": ev["skew_flag"]["skew_seconds"]})

        # Ledger order is arrival order, which the platform cannot backdate.
        present = [first[t] for t in EVENT_TYPES if t in first]
        order_valid = all(a < b for a, b in zip(present, present[1:]))
        first_is_fetch = bool(entries) and entries[0].payload_obj["event_type"] == "content_fetched"

        reported = [
            e.payload_obj["content_sha256"]
            for e in self.ledger.entries_for(txn_id)
            if e.entry_type == CONTENT_HASH_REPORTED
        ]
        if fetched_fp is None or not reported:
            match = "unreported"
        else:
            match = "match" if fetched_fp == reported[0] else "mismatch"
        return ChainStatus(txn_id, counts, order_valid, first_is_fetch, flags, match)
