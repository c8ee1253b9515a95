"""Simulated mobile agent: attested key, receipts, pseudonymous IDs, offline queue.

Time and connectivity are injected so every retry schedule is reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import random
from collections import OrderedDict
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import httpx
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from aegon import jose
from aegon.attestation import (
    MAX_BATCH,
    RETRYABLE_REASONS,
    TestRootAuthority,
    attestation_ext,
    format_timestamp,
)
from aegon.backoff import backoff_delay, jittered_delay
from aegon.canonical import canonical_encode
from aegon.client import BrokerError
from aegon.clock import ManualClock
from aegon.recordlog import RecordLog

_QUEUE_AAD = b"aegon-offline-queue/1"


class OfflineQueue:
    """FIFO of receipt JWS strings, persisted as AES-GCM sealed operation records."""

    def __init__(self, path: str | Path | None = None, key: bytes | None = None, fsync: bool = True):
        self._aead = AESGCM(key or AESGCM.generate_key(bit_length=256))
        self._pending: OrderedDict[str, str] = OrderedDict()
        self.attempt = 0
        self.next_attempt_time = 0.0
        self._log = RecordLog(path, fsync=fsync) if path is not None else None
        if self._log is not None:
            for record in self._log.records():
                self._apply(json.loads(self._open(record)))

    def _seal(self, op: dict) -> bytes:
        # Plain JSON: retry times are fractional and these records never get signed.
        nonce = os.urandom(12)
        return nonce + self._aead.encrypt(nonce, json.dumps(op).encode("utf-8"), _QUEUE_AAD)

    def _open(self, record: bytes) -> bytes:
        return self._aead.decrypt(record[:12], record[12:], _QUEUE_AAD)

    def _apply(self, op: dict) -> None:
        kind = op["op"]
        if kind == "add":
            self._pending[op["receipt_id"]] = op["receipt"]
        elif kind == "ack":
            self._pending.pop(op["receipt_id"], None)
        elif kind == "retry":
            self.attempt, self.next_attempt_time = op["attempt"], op["next_attempt_time"]

    def _write(self, op: dict) -> None:
        if self._log is not None:
            self._log.append(self._seal(op))
        self._apply(op)

    def add(self, receipt_id: str, receipt_jws: str) -> None:
        self._write({"op": "add", "receipt_id": receipt_id, "receipt": receipt_jws})

    def ack(self, receipt_id: str) -> None:
        self._write({"op": "ack", "receipt_id": receipt_id})

    def set_retry(self, attempt: int, next_attempt_time: float) -> None:
        self._write({"op": "retry", "attempt": attempt, "next_attempt_time": next_attempt_time})

    def pending(self) -> list[tuple[str, str]]:
        return list(self._pending.items())

    def __len__(self) -> int:
        return len(self._pending)

    def close(self) -> None:
        if self._log is not None:
            self._log.close()


@dataclass
class FlushReport:
    batches: list[int] = field(default_factory=list)
    accepted: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)
    rejected: dict[str, str] = field(default_factory=dict)
    deferred: dict[str, str] = field(default_factory=dict)
    base_delays: list[float] = field(default_factory=list)
    delays: list[float] = field(default_factory=list)
    transport_failures: int = 0
    gave_up: bool = False

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def receipt_id_of(receipt_jws: str) -> str:
    return jose.jws_decode(receipt_jws).json_payload()["receipt_id"]


class SimDevice:
    """A device whose private key and scope secret stay inside the object."""

    def __init__(
        self,
        private_key,
        chain: list[str],
        security_level: str,
        verified_boot_state: str,
        clock: ManualClock | None = None,
        rng: random.Random | None = None,
        queue: OfflineQueue | None = None,
        android_version: int = 14,
        security_patch_level: str = "2026-02-01",
    ):
        self._key = private_key
        self.rng = rng or random.Random()
        self._random_bytes = jose.random_bytes_from(rng)
        self._scope_secret = self._random_bytes(32)
        self.chain = list(chain)
        self.security_level = security_level
        self.verified_boot_state = verified_boot_state
        self.android_version = android_version
        self.security_patch_level = security_patch_level
        self.clock = clock or ManualClock()
        self.queue = queue if queue is not None else OfflineQueue()
        self.device_id = "dev_" + jose.jwk_thumbprint(self.public_jwk)[:22]

    @classmethod
    def provision(
        cls,
        challenge: bytes,
        security_level: str = "STRONGBOX",
        boot_state: str = "VERIFIED",
        root: TestRootAuthority | None = None,
        clock: ManualClock | None = None,
        rng: random.Random | None = None,
        queue: OfflineQueue | None = None,
        android_version: int = 14,
        security_patch_level: str = "2026-02-01",
        cert_lifetime: int = 365 * 24 * 3600,
    ) -> SimDevice:
        clock = clock or ManualClock()
        root = root or TestRootAuthority(rng=rng, now=int(clock()))
        key = jose.generate_key(rng)
        ext = attestation_ext(challenge, security_level, boot_state, android_version, security_patch_level)
        now = int(clock())
        device_id = "dev_" + jose.jwk_thumbprint(jose.public_jwk(key.public_key()))[:22]
        chain = root.attest(key.public_key(), device_id, ext, now - 60, now + cert_lifetime)
        return cls(key, chain, security_level, boot_state, clock, rng, queue,
                   android_version, security_patch_level)

    @property
    def public_jwk(self) -> dict:
        return jose.public_jwk(self._key.public_key())

    def publisher_scope_id(self, publisher_domain: str) -> str:
        mac = hmac.new(self._scope_secret, publisher_domain.lower().encode("utf-8"), hashlib.sha256)
        return "ps_" + mac.hexdigest()[:24]

    def make_receipt(
        self,
        txn_id: str,
        content_hash: str,
        constraints: dict,
        publisher_domain: str,
        now: float | None = None,
    ) -> str:
        if not content_hash.startswith("sha256:"):
            content_hash = "sha256:" + content_hash
        rid = "rcpt_" + base64.b32encode(self._random_bytes(16)).decode("ascii").rstrip("=").lower()
        receipt = {
            "receipt_id": rid,
            "txn_id": txn_id,
            "publisher_scope_id": self.publisher_scope_id(publisher_domain),
            "timestamp": format_timestamp(self.clock() if now is None else now),
            "event_type": "content_consumed",
            "content_hash": content_hash,
            "license_constraints": {
                "license_type": constraints["license_type"],
                "training_allowed": constraints["training_allowed"],
                "storage_policy": constraints.get("storage_policy", "ephemeral"),
            },
            "device_attestation": {
                "key_id": self.device_id,
                "strongbox_backed": self.security_level == "STRONGBOX",
                "android_version": self.android_version,
                "security_patch_level": self.security_patch_level,
            },
        }
        return jose.jws_sign(canonical_encode(receipt), self._key, typ="aegon-receipt", kid=self.device_id)

    def enqueue(self, receipt_jws: str) -> str:
        rid = receipt_id_of(receipt_jws)
        self.queue.add(rid, receipt_jws)
        return rid

    def flush(
        self,
        client,
        connectivity: Callable[[float], bool] = lambda t: True,
        max_attempts: int = 50,
    ) -> FlushReport:
        """Drain the queue in batches of at most 100, backing off while offline."""
        report = FlushReport()
        queue = self.queue
        while True:
            batch = [(rid, jws) for rid, jws in queue.pending() if rid not in report.deferred][:MAX_BATCH]
            if not batch:
                break
            if queue.attempt and self.clock() < queue.next_attempt_time:
                self.clock.sleep(queue.next_attempt_time - self.clock())
            results = None
            if connectivity(self.clock()):
                try:
                    results = client.submit_receipts([jws for _, jws in batch])
                except httpx.TransportError:
                    results = None
                except BrokerError as exc:
                    if exc.status < 500:
                        raise
                    results = None
            if results is None:
                report.transport_failures += 1
                attempt = queue.attempt + 1
                if attempt > max_attempts:
                    report.gave_up = True
                    break
                report.base_delays.append(backoff_delay(attempt))
                delay = jittered_delay(attempt, self.rng)
                report.delays.append(delay)
                queue.set_retry(attempt, self.clock() + delay)
                continue

            if queue.attempt:
                queue.set_retry(0, 0.0)
            report.batches.append(len(batch))
            for (rid, _), result in zip(batch, results):
                status, reason = result.get("status"), result.get("reason")
                if status == "accepted":
                    report.accepted.append(rid)
                elif reason == "duplicate_receipt":
                    report.duplicates.append(rid)
                elif reason in RETRYABLE_REASONS:
                    report.deferred[rid] = reason
                    continue
                else:
                    report.rejected[rid] = reason
                queue.ack(rid)
        return report
