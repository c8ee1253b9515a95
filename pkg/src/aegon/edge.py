"""Publisher-side gate: offline token validation, replay protection, hash reporting.

The hot path (``gate_request``) touches the broker only when the cached
JWKS has gone stale. Single-use ``jti`` values pass through a Bloom filter
whose positives are confirmed against an exact set, so the filter's false
positives never turn into false rejections.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from urllib.parse import urlsplit, urlunsplit

import httpx

from aegon.backoff import jittered_delay
from aegon.client import BrokerClient, BrokerError
from aegon.errors import AegonError
from aegon.tokens import SINGLE_USE_TTL, LicenseClaims, TokenRejected, validate_token

logger = logging.getLogger(__name__)

TXN_HEADER = "Aegon-Txn-Id"
DEFAULT_JWKS_TTL = 300.0
STALE_CAP = 24 * 3600.0
CLOCK_SKEW = 60.0
_DEFAULT_PORTS = {"http": 80, "https": 443}


def normalize_url(url: str) -> str:
    """Lowercase scheme and host, drop default ports and fragments, keep path/query bytes."""
    parts = urlsplit(url)
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    try:
        port = parts.port
    except ValueError:
        port = None
    netloc = host if port is None or _DEFAULT_PORTS.get(scheme) == port else f"{host}:{port}"
    if parts.username or parts.password:
        netloc = parts.netloc.rsplit("@", 1)[0] + "@" + netloc
    return urlunsplit((scheme, netloc, parts.path or "/", parts.query, ""))


class BloomFilter:
    """Bit-array Bloom filter with SHA-256 double hashing."""

    def __init__(self, capacity: int, fp_rate: float = 1e-4):
        if capacity < 1 or not 0 < fp_rate < 1:
            raise ValueError("capacity must be positive and 0 < fp_rate < 1")
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.num_bits = max(8, math.ceil(-capacity * math.log(fp_rate) / math.log(2) ** 2))
        self.num_hashes = max(1, round(self.num_bits / capacity * math.log(2)))
        self._bits = bytearray((self.num_bits + 7) // 8)
        self.count = 0

    def _positions(self, item: str):
        digest = hashlib.sha256(item.encode("utf-8")).digest()
        h1 = int.from_bytes(digest[:8], "little")
        h2 = int.from_bytes(digest[8:16], "little") | 1
        for i in range(self.num_hashes):
            yield (h1 + i * h2) % self.num_bits

    def add(self, item: str) -> None:
        for pos in self._positions(item):
            self._bits[pos >> 3] |= 1 << (pos & 7)
        self.count += 1

    def __contains__(self, item: str) -> bool:
        return all(self._bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(item))


class JtiRegistry:
    """Seen single-use ``jti`` values, kept until ``exp`` plus a skew margin."""

    def __init__(self, capacity: int = 100_000, fp_rate: float = 1e-4,
                 horizon: float = SINGLE_USE_TTL, skew: float = CLOCK_SKEW):
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.horizon = horizon
        self.skew = skew
        self.bloom = BloomFilter(capacity, fp_rate)
        self.exact: dict[str, float] = {}
        self.bloom_hits = 0
        self.false_positives = 0
        self._lock = threading.Lock()
        self._last_sweep = 0.0

    def _sweep(self, now: float) -> None:
        self.exact = {j: exp for j, exp in self.exact.items() if exp + self.skew > now}
        # Bloom bits cannot be cleared; rebuild from the surviving exact set.
        self.bloom = BloomFilter(max(self.capacity, len(self.exact)), self.fp_rate)
        for jti in self.exact:
            self.bloom.add(jti)
        self._last_sweep = now

    def check_and_insert(self, jti: str, exp: float, now: float) -> bool:
        """Atomically record ``jti``; False if it was already recorded (a replay)."""
        with self._lock:
            if now - self._last_sweep >= self.horizon:
                self._sweep(now)
            if jti in self.bloom:
                self.bloom_hits += 1
                if jti in self.exact:
                    return False
                self.false_positives += 1
            self.bloom.add(jti)
            self.exact[jti] = exp
            return True

    def __len__(self) -> int:
        return len(self.exact)


class JwksUnavailable(AegonError):
    code = "jwks_unavailable"


@dataclass
class JwksCache:
    """Single-flight JWKS cache with stale-if-error up to ``stale_cap`` seconds."""

    fetch: Callable[[], dict]
    ttl: float = DEFAULT_JWKS_TTL
    stale_cap: float = STALE_CAP
    retry_interval: float = 30.0
    document: dict | None = None
    fetched_at: float | None = None
    fetch_count: int = 0
    failure_count: int = 0
    _retry_after: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _fresh(self, now: float) -> bool:
        return self.document is not None and now - self.fetched_at < self.ttl

    def get(self, now: float) -> dict:
        if self._fresh(now):
            return self.document
        with self._lock:
            if self._fresh(now):
                return self.document
            if now >= self._retry_after:
                self.fetch_count += 1
                try:
                    doc = self.fetch()
                except Exception as exc:  # noqa: BLE001 - any fetch failure falls back to stale keys
                    self.failure_count += 1
                    self._retry_after = now + self.retry_interval
                    logger.warning("JWKS refresh failed: %s", exc)
                else:
                    if not isinstance(doc, dict) or not isinstance(doc.get("keys"), list):
                        self.failure_count += 1
                        logger.warning("JWKS refresh returned a malformed document")
                    else:
                        self.document, self.fetched_at = doc, now
                        return doc
            if self.document is not None and now - self.fetched_at <= self.stale_cap:
                return self.document
            raise JwksUnavailable("no usable JWKS")


def refresh_jwks(broker_jwks_url: str, http: httpx.Client | None = None,
                 ttl: float = DEFAULT_JWKS_TTL) -> JwksCache:
    """Cache bound to ``broker_jwks_url``; the first ``get`` performs the fetch."""
    client = http or httpx.Client(timeout=5.0)

    def fetch() -> dict:
        response = client.get(broker_jwks_url)
        response.raise_for_status()
        return response.json()

    return JwksCache(fetch=fetch, ttl=ttl)


@dataclass
class GateDecision:
    allowed: bool
    reason: str | None = None
    claims: LicenseClaims | None = None
    txn_id: str | None = None
    headers: dict[str, str] = field(default_factory=dict)


class EdgeValidator:
    def __init__(
        self,
        publisher_domain: str,
        jwks_cache: JwksCache,
        registry: JtiRegistry | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.publisher_domain = publisher_domain
        self.jwks_cache = jwks_cache
        self.registry = registry or JtiRegistry()
        self.clock = clock

    def gate_request(
        self,
        authorization_header: str | None,
        requested_url: str,
        publisher_domain: str | None = None,
        now: float | None = None,
    ) -> GateDecision:
        now = self.clock() if now is None else now
        domain = publisher_domain or self.publisher_domain
        if not authorization_header:
            return GateDecision(False, "missing_token")
        scheme, _, token = authorization_header.strip().partition(" ")
        if scheme.lower() != "bearer" or not token.strip():
            return GateDecision(False, "missing_token")
        try:
            jwks = self.jwks_cache.get(now)
        except JwksUnavailable:
            return GateDecision(False, "jwks_unavailable")
        try:
            claims = validate_token(token.strip(), jwks, domain, now)
        except TokenRejected as exc:
            return GateDecision(False, exc.reason)
        if normalize_url(claims.aegon_resource_url) != normalize_url(requested_url):
            return GateDecision(False, "resource_mismatch", claims=claims)
        if claims.aegon_license_type == "single_use":
            if not self.registry.check_and_insert(claims.jti, claims.exp, now):
                return GateDecision(False, "replayed", claims=claims)
        return GateDecision(True, None, claims, claims.jti, {TXN_HEADER: claims.jti})


def content_sha256(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


class ContentHashReporter:
    """Posts served-content hashes to the broker, retrying transport and 5xx failures."""

    def __init__(
        self,
        client: BrokerClient,
        publisher_domain: str,
        clock: Callable[[], float] = time.time,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        max_attempts: int = 8,
    ):
        self.client = client
        self.publisher_domain = publisher_domain
        self.clock = clock
        self.sleep = sleep
        self.rng = rng or random.Random()
        self.max_attempts = max_attempts
        self.delays: list[float] = []

    def report_content_hash(self, txn_id: str, content: bytes, now: float | None = None) -> dict:
        body = {
            "txn_id": txn_id,
            "content_sha256": content_sha256(content),
            "publisher_domain": self.publisher_domain,
            "observed_at": int(self.clock() if now is None else now),
        }
        attempt = 0
        while True:
            try:
                return self.client.report_content_hash(body)
            except BrokerError as exc:
                if exc.status < 500:
                    return {"status": exc.code, "message": str(exc), "txn_id": txn_id}
                failure = exc
            except httpx.TransportError as exc:
                failure = exc
            attempt += 1
            if attempt >= self.max_attempts:
                return {"status": "failed", "message": str(failure), "txn_id": txn_id}
            delay = jittered_delay(attempt, self.rng)
            self.delays.append(delay)
            self.sleep(delay)
