"""Broker content spot-checks and per-publisher health."""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from collections import deque
from collections.abc import Callable
from dataclasses import asdict, dataclass

from aegon.ledger import (
    CONTENT_HASH_REPORTED,
    PROVENANCE_EVENT,
    SPOT_CHECK_RESULT,
    Ledger,
)

logger = logging.getLogger(__name__)

DEFAULT_RATE = 0.05
ESCALATION_THRESHOLD = 3
VERDICTS = ("verified", "mismatch", "inconclusive")


def spot_check_select(txn_id: str, epoch_salt: bytes, rate: float = DEFAULT_RATE) -> bool:
    """Deterministic sampling: first 8 bytes of SHA-256(txn_id || salt) / 2**64 < rate."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    digest = hashlib.sha256(txn_id.encode("utf-8") + epoch_salt).digest()
    return int.from_bytes(digest[:8], "big") / 2**64 < rate


def epoch_salt(secret: bytes, now: float) -> bytes:
    """Salt rotating once per UTC day, derived from a broker secret."""
    day = int(now // 86400)
    return hashlib.sha256(secret + day.to_bytes(8, "big")).digest()[:16]


@dataclass
class SpotCheckResult:
    txn_id: str
    broker_hash: str | None
    publisher_hash: str | None
    platform_hash: str | None
    verdict: str
    checked_at: int
    publisher_domain: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def decide_verdict(broker_hash: str | None, publisher_hash: str | None, platform_hash: str | None) -> str:
    if broker_hash is None or publisher_hash is None:
        return "inconclusive"
    present = {h for h in (broker_hash, publisher_hash, platform_hash) if h is not None}
    return "verified" if len(present) == 1 else "mismatch"


@dataclass
class PublisherHealth:
    publisher_domain: str
    consecutive_mismatches: int = 0
    escalated: bool = False
    checks: int = 0

    def to_json(self) -> dict:
        return asdict(self)


class SpotChecker:
    def __init__(
        self,
        ledger: Ledger,
        content_fetcher: Callable[[str], bytes] | None = None,
        rate: float = DEFAULT_RATE,
        salt_secret: bytes = b"",
        dynamic_publishers: set[str] | None = None,
        threshold: int = ESCALATION_THRESHOLD,
        clock: Callable[[], float] = time.time,
    ):
        self.ledger = ledger
        self.content_fetcher = content_fetcher
        self.rate = rate
        self.salt_secret = salt_secret
        self.dynamic_publishers = set(dynamic_publishers or ())
        self.threshold = threshold
        self.clock = clock
        self.health: dict[str, PublisherHealth] = {}
        self.results: list[SpotCheckResult] = []
        self._pending: deque[str] = deque()
        self._lock = threading.Lock()
        for i in range(ledger.size):
            entry = ledger.entry(i)
            if entry.entry_type == SPOT_CHECK_RESULT:
                self._absorb(SpotCheckResult(**entry.payload_obj))

    def _absorb(self, result: SpotCheckResult) -> None:
        self.results.append(result)
        health = self.health.setdefault(result.publisher_domain, PublisherHealth(result.publisher_domain))
        health.checks += 1
        if result.verdict == "mismatch":
            health.consecutive_mismatches += 1
        elif result.verdict == "verified":
            health.consecutive_mismatches = 0
        if health.consecutive_mismatches >= self.threshold and not health.escalated:
            health.escalated = True
            logger.warning("publisher %s escalated after %d consecutive mismatches",
                           result.publisher_domain, health.consecutive_mismatches)

    def selected(self, txn_id: str, now: float | None = None) -> bool:
        claims = self.ledger.license_entry(txn_id).payload_obj["claims"]
        if claims["aud"] in self.dynamic_publishers:
            return False
        now = self.clock() if now is None else now
        return spot_check_select(txn_id, epoch_salt(self.salt_secret, now), self.rate)

    def enqueue(self, txn_id: str) -> None:
        with self._lock:
            self._pending.append(txn_id)

    def run_pending(self) -> list[SpotCheckResult]:
        done = []
        while True:
            with self._lock:
                if not self._pending:
                    return done
                txn_id = self._pending.popleft()
            done.append(self.run_spot_check(txn_id))

    def run_spot_check(self, txn_id: str, content_fetcher: Callable[[str], bytes] | None = None) -> SpotCheckResult:
        claims = self.ledger.license_entry(txn_id).payload_obj["claims"]
        fetcher = content_fetcher or self.content_fetcher
        broker_hash = None
        if fetcher is not None:
            try:
                broker_hash = hashlib.sha256(fetcher(claims["aegon_resource_url"])).hexdigest()
            except Exception as exc:  # noqa: BLE001 - any fetch failure is inconclusive
                logger.info("spot-check fetch failed for %s: %s", txn_id, exc)

        publisher_hash = platform_hash = None
        for entry in self.ledger.entries_for(txn_id):
            payload = entry.payload_obj
            if entry.entry_type == CONTENT_HASH_REPORTED and publisher_hash is None:
                publisher_hash = payload["content_sha256"]
            elif (entry.entry_type == PROVENANCE_EVENT and platform_hash is None
                  and payload["event_type"] == "content_fetched"):
                platform_hash = payload["content_fingerprint"]

        result = SpotCheckResult(
            txn_id=txn_id,
            broker_hash=broker_hash,
            publisher_hash=publisher_hash,
            platform_hash=platform_hash,
            verdict=decide_verdict(broker_hash, publisher_hash, platform_hash),
            checked_at=int(self.clock()),
            publisher_domain=claims["aud"],
        )
        with self._lock:
            self.ledger.record(SPOT_CHECK_RESULT, txn_id, result.to_json(), result.checked_at)
            self._absorb(result)
        return result
