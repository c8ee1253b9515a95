"""Broker-side verification of attested devices and their compliance receipts.

Attestation chains here are lists of JWS "certificates" (leaf first). Each
certificate carries a subject P-256 key and is signed by the next
certificate's key; the last one is self-signed by a pinned trust root. The
leaf carries the key-attestation extension: security level, verified boot
state, challenge, OS version and patch level. Trust decisions mirror those
made for Android key attestation X.509 chains.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from collections.abc import Callable, Iterable
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import ec

from aegon import jose
from aegon.canonical import canonical_encode
from aegon.errors import NotFoundError, Rejected, ReplayError, ValidationError
from aegon.ledger import CONTENT_HASH_REPORTED, RECEIPT_ACCEPTED, Ledger

logger = logging.getLogger(__name__)

CERT_FORMAT = "aegon-attest-cert/1"
CERT_TYP = "aegon-attest-cert"
SECURITY_LEVELS = ("STRONGBOX", "TRUSTED_ENVIRONMENT", "SOFTWARE")
ACCEPTED_LEVELS = ("STRONGBOX", "TRUSTED_ENVIRONMENT")
BOOT_STATES = ("VERIFIED", "SELF_SIGNED", "UNVERIFIED", "FAILED")

CHAIN_REASONS = (
    "untrusted_root",
    "broken_link",
    "expired_cert",
    "challenge_mismatch",
    "software_level",
    "unlocked_bootloader",
)
# Listed in the order the checks run; the first failure wins.
RECEIPT_REASONS = (
    "unknown_device",
    "revoked_device",
    "bad_signature",
    "malformed",
    "unknown_txn",
    "no_publisher_hash",
    "hash_mismatch",
    "stale_receipt",
    "duplicate_receipt",
)
RETRYABLE_REASONS = frozenset({"no_publisher_hash"})

RECEIPT_MAX_AGE = 7 * 24 * 3600
DEDUP_RETENTION = 8 * 24 * 3600
CHALLENGE_TTL = 600
MAX_BATCH = 100


# -- certificates ------------------------------------------------------------


def issue_cert(
    issuer_key: ec.EllipticCurvePrivateKey,
    issuer_id: str,
    subject_public_key: ec.EllipticCurvePublicKey,
    subject_id: str,
    not_before: int,
    not_after: int,
    attestation_ext: dict | None = None,
) -> str:
    body = {
        "format": CERT_FORMAT,
        "issuer_id": issuer_id,
        "subject_id": subject_id,
        "subject_public_key": jose.public_jwk(subject_public_key),
        "not_before": int(not_before),
        "not_after": int(not_after),
    }
    if attestation_ext is not None:
        body["attestation_ext"] = attestation_ext
    return jose.jws_sign(canonical_encode(body), issuer_key, typ=CERT_TYP)


def attestation_ext(
    challenge: bytes,
    security_level: str = "STRONGBOX",
    verified_boot_state: str = "VERIFIED",
    android_version: int = 14,
    security_patch_level: str = "2026-02-01",
) -> dict:
    return {
        "security_level": security_level,
        "verified_boot_state": verified_boot_state,
        "attestation_challenge": jose.b64url_encode(challenge),
        "android_version": android_version,
        "security_patch_level": security_patch_level,
    }


@dataclass
class _Cert:
    decoded: jose.DecodedJws
    body: dict
    public_key: ec.EllipticCurvePublicKey


def _parse_cert(token: str) -> _Cert:
    try:
        decoded = jose.jws_decode(token)
        body = decoded.json_payload()
        if decoded.header.get("typ") != CERT_TYP or body.get("format") != CERT_FORMAT:
            raise ValueError("not an attestation certificate")
        for name in ("issuer_id", "subject_id"):
            if not isinstance(body.get(name), str):
                raise ValueError(f"{name} missing")
        for name in ("not_before", "not_after"):
            if not isinstance(body.get(name), int):
                raise ValueError(f"{name} missing")
        public_key = jose.jwk_to_public_key(body["subject_public_key"])
    except (jose.JwsError, ValueError, KeyError, TypeError, AttributeError) as exc:
        raise Rejected("broken_link", f"unparseable certificate: {exc}") from None
    return _Cert(decoded, body, public_key)


@dataclass(frozen=True)
class ChainResult:
    device_public_key: ec.EllipticCurvePublicKey
    device_jwk: dict
    security_level: str
    verified_boot_state: str
    android_version: int
    security_patch_level: str


def _root_thumbprints(trust_roots: Iterable) -> set[str]:
    prints = set()
    for root in trust_roots:
        if isinstance(root, ec.EllipticCurvePublicKey):
            root = jose.public_jwk(root)
        prints.add(jose.jwk_thumbprint(root))
    return prints


def verify_chain(chain: list[str], trust_roots: Iterable, expected_challenge: bytes, now: float) -> ChainResult:
    """Validate an attestation chain; raises Rejected with one of CHAIN_REASONS."""
    roots = _root_thumbprints(trust_roots)
    if not roots:
        raise ValueError("at least one trust root must be configured")
    if not isinstance(chain, list) or len(chain) < 2:
        raise Rejected("broken_link", "chain needs a leaf and a root")
    certs = [_parse_cert(c) for c in chain]

    root = certs[-1]
    if jose.jwk_thumbprint(root.body["subject_public_key"]) not in roots:
        raise Rejected("untrusted_root")
    if root.body["issuer_id"] != root.body["subject_id"] or not jose.jws_verify(root.decoded, root.public_key):
        raise Rejected("broken_link", "root is not validly self-signed")
    for child, parent in zip(certs, certs[1:]):
        if child.body["issuer_id"] != parent.body["subject_id"]:
            raise Rejected("broken_link", "issuer does not match parent subject")
        if not jose.jws_verify(child.decoded, parent.public_key):
            raise Rejected("broken_link", f"signature on {child.body['subject_id']} does not verify")
    for cert in certs:
        if not cert.body["not_before"] <= now <= cert.body["not_after"]:
            raise Rejected("expired_cert", f"{cert.body['subject_id']} outside validity window")

    ext = certs[0].body.get("attestation_ext")
    if not isinstance(ext, dict):
        raise Rejected("broken_link", "leaf has no attestation extension")
    try:
        challenge = jose.b64url_decode(ext["attestation_challenge"])
        level, boot = ext["security_level"], ext["verified_boot_state"]
        android_version, patch = ext["android_version"], ext["security_patch_level"]
    except (KeyError, jose.JwsError):
        raise Rejected("broken_link", "attestation extension incomplete") from None
    if not secrets.compare_digest(challenge, expected_challenge):
        raise Rejected("challenge_mismatch")
    if level not in ACCEPTED_LEVELS:
        raise Rejected("software_level", f"security level {level}")
    if boot != "VERIFIED":
        raise Rejected("unlocked_bootloader", f"verified boot state {boot}")
    return ChainResult(
        device_public_key=certs[0].public_key,
        device_jwk=certs[0].body["subject_public_key"],
        security_level=level,
        verified_boot_state=boot,
        android_version=android_version,
        security_patch_level=patch,
    )


class TestRootAuthority:
    """Stand-in for the hardware attestation CA: root plus one intermediate."""

    __test__ = False  # not a pytest class

    def __init__(self, name: str = "aegon-test-root", rng=None, now: int = 0,
                 lifetime: int = 20 * 365 * 24 * 3600):
        self.name = name
        self.root_key = jose.generate_key(rng)
        self.intermediate_key = jose.generate_key(rng)
        self.not_before = now - 24 * 3600
        self.not_after = now + lifetime
        self.root_cert = issue_cert(self.root_key, name, self.root_key.public_key(), name,
                                    self.not_before, self.not_after)
        self.intermediate_id = f"{name}/intermediate"
        self.intermediate_cert = issue_cert(self.root_key, name, self.intermediate_key.public_key(),
                                            self.intermediate_id, self.not_before, self.not_after)

    @property
    def root_jwk(self) -> dict:
        return jose.public_jwk(self.root_key.public_key())

    def attest(self, device_public_key: ec.EllipticCurvePublicKey, device_id: str, ext: dict,
               not_before: int, not_after: int) -> list[str]:
        leaf = issue_cert(self.intermediate_key, self.intermediate_id, device_public_key, device_id,
                          not_before, not_after, ext)
        return [leaf, self.intermediate_cert, self.root_cert]


# -- registration ------------------------------------------------------------


class ChallengeStore:
    """Single-use registration nonces with a fixed expiry."""

    def __init__(self, ttl: int = CHALLENGE_TTL, random_bytes: Callable[[int], bytes] = secrets.token_bytes):
        self.ttl = ttl
        self.random_bytes = random_bytes
        self._live: dict[bytes, float] = {}
        self._lock = threading.Lock()

    def issue(self, now: float) -> tuple[bytes, float]:
        challenge = self.random_bytes(32)
        with self._lock:
            self._live = {c: exp for c, exp in self._live.items() if exp > now}
            self._live[challenge] = now + self.ttl
        return challenge, now + self.ttl

    def consume(self, challenge: bytes, now: float) -> None:
        with self._lock:
            expiry = self._live.pop(challenge, None)
        if expiry is None:
            raise ReplayError("challenge unknown or already used")
        if now > expiry:
            raise ReplayError("challenge expired")


@dataclass
class DeviceRecord:
    device_id: str
    public_jwk: dict
    security_level: str
    verified_boot_state: str
    android_version: int
    security_patch_level: str
    registered_at: int
    status: str = "active"

    def to_json(self) -> dict:
        return asdict(self)


class DeviceRegistry:
    def __init__(
        self,
        trust_roots: Iterable,
        challenges: ChallengeStore | None = None,
        path: str | Path | None = None,
    ):
        self.trust_roots = list(trust_roots)
        self.challenges = challenges or ChallengeStore()
        self.path = Path(path) if path else None
        self._devices: dict[str, DeviceRecord] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for item in json.loads(self.path.read_text()):
                self._devices[item["device_id"]] = DeviceRecord(**item)

    def _save(self) -> None:
        if self.path is None:
            return
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps([d.to_json() for d in self._devices.values()]))
        tmp.replace(self.path)

    def register_device(self, chain: list[str], challenge: bytes, now: float) -> DeviceRecord:
        # The nonce is spent by any attempt, successful or not.
        self.challenges.consume(challenge, now)
        result = verify_chain(chain, self.trust_roots, challenge, now)
        device_id = "dev_" + jose.jwk_thumbprint(result.device_jwk)[:22]
        record = DeviceRecord(
            device_id=device_id,
            public_jwk=result.device_jwk,
            security_level=result.security_level,
            verified_boot_state=result.verified_boot_state,
            android_version=result.android_version,
            security_patch_level=result.security_patch_level,
            registered_at=int(now),
        )
        with self._lock:
            existing = self._devices.get(device_id)
            if existing is not None and existing.status == "revoked":
                raise Rejected("revoked_device", "revoked keys must be replaced, not re-registered")
            self._devices[device_id] = record
            self._save()
        return record

    def revoke_device(self, device_id: str) -> DeviceRecord:
        with self._lock:
            record = self._devices.get(device_id)
            if record is None:
                raise NotFoundError(f"unknown device {device_id}")
            record.status = "revoked"
            self._save()
            return record

    def get(self, device_id: str) -> DeviceRecord | None:
        return self._devices.get(device_id)

    def __len__(self) -> int:
        return len(self._devices)


# -- receipts ----------------------------------------------------------------

_RECEIPT_FIELDS = {
    "receipt_id", "txn_id", "publisher_scope_id", "timestamp", "event_type",
    "content_hash", "license_constraints", "device_attestation",
}
_CONSTRAINT_FIELDS = {"license_type", "training_allowed", "storage_policy"}
_ATTESTATION_FIELDS = {"key_id", "strongbox_backed", "android_version", "security_patch_level"}


def parse_timestamp(text: str) -> int:
    if not isinstance(text, str) or not text.endswith("Z"):
        raise ValueError("timestamp must be UTC ISO-8601 ending in Z")
    return int(datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc).timestamp())


def format_timestamp(seconds: float) -> str:
    return datetime.fromtimestamp(int(seconds), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def check_receipt_shape(receipt: dict) -> None:
    if not isinstance(receipt, dict) or set(receipt) != _RECEIPT_FIELDS:
        raise ValidationError("receipt field set does not match the receipt format")
    if not isinstance(receipt["receipt_id"], str) or not receipt["receipt_id"].startswith("rcpt_"):
        raise ValidationError("receipt_id must start with rcpt_")
    if not isinstance(receipt["publisher_scope_id"], str) or not receipt["publisher_scope_id"].startswith("ps_"):
        raise ValidationError("publisher_scope_id must start with ps_")
    if receipt["event_type"] != "content_consumed":
        raise ValidationError("event_type must be content_consumed")
    ch = receipt["content_hash"]
    if not (isinstance(ch, str) and ch.startswith("sha256:") and len(ch) == 71
            and all(c in "0123456789abcdef" for c in ch[7:])):
        raise ValidationError("content_hash must be sha256: plus 64 hex chars")
    if not isinstance(receipt["license_constraints"], dict) or set(receipt["license_constraints"]) != _CONSTRAINT_FIELDS:
        raise ValidationError("license_constraints field set mismatch")
    if not isinstance(receipt["device_attestation"], dict) or set(receipt["device_attestation"]) != _ATTESTATION_FIELDS:
        raise ValidationError("device_attestation field set mismatch")
    try:
        parse_timestamp(receipt["timestamp"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


@dataclass
class ReceiptResult:
    status: str  # "accepted" | "rejected"
    reason: str | None = None
    receipt_id: str | None = None
    leaf_index: int | None = None

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    def to_json(self) -> dict:
        return {"status": self.status, "reason": self.reason,
                "receipt_id": self.receipt_id, "leaf_index": self.leaf_index}


class ReceiptVerifier:
    def __init__(self, ledger: Ledger, registry: DeviceRegistry, clock: Callable[[], float] = time.time):
        self.ledger = ledger
        self.registry = registry
        self.clock = clock
        self._seen: dict[str, int] = {}
        self._lock = threading.Lock()
        for entry in self._receipt_entries():
            self._seen[entry.payload_obj["receipt_id"]] = entry.server_timestamp

    def _receipt_entries(self):
        for i in range(self.ledger.size):
            entry = self.ledger.entry(i)
            if entry.entry_type == RECEIPT_ACCEPTED:
                yield entry

    def _publisher_hash(self, txn_id: str) -> str | None:
        for entry in self.ledger.entries_for(txn_id):
            if entry.entry_type == CONTENT_HASH_REPORTED:
                return entry.payload_obj["content_sha256"]
        return None

    def verify_receipt(self, receipt_jws: str, now: float | None = None) -> ReceiptResult:
        now = self.clock() if now is None else now
        try:
            decoded = jose.jws_decode(receipt_jws)
        except jose.JwsError:
            return ReceiptResult("rejected", "unknown_device")
        device_id = decoded.header.get("kid")
        device = self.registry.get(device_id) if isinstance(device_id, str) else None
        if device is None:
            return ReceiptResult("rejected", "unknown_device")
        if device.status != "active":
            return ReceiptResult("rejected", "revoked_device")
        if not jose.jws_verify(decoded, jose.jwk_to_public_key(device.public_jwk)):
            return ReceiptResult("rejected", "bad_signature")
        try:
            receipt = decoded.json_payload()
            check_receipt_shape(receipt)
        except (jose.JwsError, ValidationError) as exc:
            logger.info("malformed receipt from %s: %s", device_id, exc)
            return ReceiptResult("rejected", "malformed")
        rid = receipt["receipt_id"]
        if not self.ledger.has_license(receipt["txn_id"]):
            return ReceiptResult("rejected", "unknown_txn", rid)
        published = self._publisher_hash(receipt["txn_id"])
        if published is None:
            return ReceiptResult("rejected", "no_publisher_hash", rid)
        if receipt["content_hash"] != "sha256:" + published:
            return ReceiptResult("rejected", "hash_mismatch", rid)
        if now - parse_timestamp(receipt["timestamp"]) > RECEIPT_MAX_AGE:
            return ReceiptResult("rejected", "stale_receipt", rid)
        with self._lock:
            cutoff = now - DEDUP_RETENTION
            if len(self._seen) > 10_000:
                self._seen = {r: t for r, t in self._seen.items() if t >= cutoff}
            if rid in self._seen:
                return ReceiptResult("rejected", "duplicate_receipt", rid)
            entry = self.ledger.record(
                RECEIPT_ACCEPTED,
                receipt["txn_id"],
                {"receipt_id": rid, "device_id": device_id, "receipt_jws": receipt_jws},
                int(now),
            )
            self._seen[rid] = int(now)
        return ReceiptResult("accepted", None, rid, entry.leaf_index)

    def verify_batch(self, receipts: list[str], now: float | None = None) -> list[ReceiptResult]:
        if not isinstance(receipts, list) or len(receipts) > MAX_BATCH:
            raise ValidationError(f"batches carry a list of at most {MAX_BATCH} receipts")
        return [self.verify_receipt(r, now) if isinstance(r, str) else ReceiptResult("rejected", "unknown_device")
                for r in receipts]
