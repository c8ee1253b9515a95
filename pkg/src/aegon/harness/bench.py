"""Latency benchmark for the protocol's hot paths.

Methodology: everything runs in one process. Issuance goes over real
loopback HTTP to a uvicorn server on a background thread, so it includes
JSON, routing and a fsynced ledger append but not kernel networking between
hosts. The other cells call the library directly. Each cell has a warmup
phase and then at least ``samples`` timed calls.
"""

from __future__ import annotations

import logging
import os
import platform
import random
import statistics
import sys
import tempfile
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import httpx

from aegon import jose
from aegon.attestation import TestRootAuthority, verify_chain
from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.device import SimDevice
from aegon.edge import EdgeValidator, JtiRegistry, JwksCache
from aegon.harness.loopback import serve_loopback
from aegon.keys import BrokerKeySet
from aegon.ledger import Ledger, LedgerEntry, SthPolicy
from aegon.provenance import ProvenanceLog, fingerprint, sign_event
from aegon.tokens import TokenIssuer

logger = logging.getLogger(__name__)

TARGETS_MS = {
    "token_validation_warm": 10.0,
    "token_issuance_http": 50.0,
    "provenance_record": 5.0,
    "attestation_chain_verify": 20.0,
}
RECEIPT_SIZE_LIMIT = 4096
MIN_SAMPLES = 1000
RATE_TOLERANCE = 0.95  # an issuance cell counts only if the paced rate was actually sustained

PROFILES = {
    "quick": {"samples": 1000, "warmup": 100, "issuance_seconds": 10.0, "issuance_rate": 100.0},
    "full": {"samples": 3000, "warmup": 300, "issuance_seconds": 30.0, "issuance_rate": 100.0},
}


@dataclass
class BenchCell:
    operation: str
    samples: int
    p50_ms: float
    p95_ms: float
    p99_ms: float
    target_rate: float | None = None
    achieved_rate: float | None = None
    target_p95_ms: float | None = None

    @property
    def passed(self) -> bool | None:
        if self.target_p95_ms is None:
            return None
        sustained = self.target_rate is None or (self.achieved_rate or 0.0) >= RATE_TOLERANCE * self.target_rate
        return self.samples >= MIN_SAMPLES and sustained and self.p95_ms < self.target_p95_ms

    def to_json(self) -> dict:
        return {**asdict(self), "passed": self.passed}


@dataclass
class BenchReport:
    profile: str
    cells: list[BenchCell] = field(default_factory=list)
    receipt_size_bytes: int = 0
    environment: dict = field(default_factory=dict)

    def cell(self, operation: str) -> BenchCell:
        return next(c for c in self.cells if c.operation == operation)

    @property
    def receipt_size_passed(self) -> bool:
        return self.receipt_size_bytes < RECEIPT_SIZE_LIMIT

    @property
    def passed(self) -> bool:
        return self.receipt_size_passed and all(c.passed is not False for c in self.cells)

    def to_json(self) -> dict:
        return {
            "profile": self.profile,
            "passed": self.passed,
            "environment": self.environment,
            "receipt_size_bytes": self.receipt_size_bytes,
            "receipt_size_limit": RECEIPT_SIZE_LIMIT,
            "cells": [c.to_json() for c in self.cells],
        }


def percentiles(latencies_s: list[float]) -> tuple[float, float, float]:
    """P50/P95/P99 in milliseconds (inclusive quantile definition)."""
    cuts = statistics.quantiles([x * 1000.0 for x in latencies_s], n=100, method="inclusive")
    return cuts[49], cuts[94], cuts[98]


def _time_calls(fn: Callable[[int], object], samples: int, warmup: int) -> list[float]:
    for i in range(warmup):
        fn(i)
    out = []
    for i in range(warmup, warmup + samples):
        t0 = time.perf_counter()
        fn(i)
        out.append(time.perf_counter() - t0)
    return out


def _cell(operation: str, latencies: list[float], **kwargs) -> BenchCell:
    p50, p95, p99 = percentiles(latencies)
    return BenchCell(operation, len(latencies), round(p50, 4), round(p95, 4), round(p99, 4),
                     target_p95_ms=TARGETS_MS.get(operation), **kwargs)


# -- cells ------------------------------------------------------------------------------


def bench_validation(samples: int, warmup: int, rng: random.Random) -> BenchCell:
    keys = BrokerKeySet.generate(rng=rng)
    ledger = Ledger(keys=keys, fsync=False)
    issuer = TokenIssuer(keys, ledger, rng=rng, clock=lambda: 1_780_000_000)
    tokens = [
        issuer.issue_token({
            "platform_id": "bench", "publisher_domain": "news.example",
            "resource_url": f"https://news.example/a/{i}", "scope": "excerpt", "license_type": "single_use",
        }).token
        for i in range(samples + warmup)
    ]
    cache = JwksCache(fetch=keys.jwks)
    edge = EdgeValidator("news.example", cache, JtiRegistry(), clock=lambda: 1_780_000_010)
    cache.get(1_780_000_010)

    def gate(i: int) -> None:
        decision = edge.gate_request(f"Bearer {tokens[i]}", f"https://news.example/a/{i}")
        assert decision.allowed, decision.reason

    return _cell("token_validation_warm", _time_calls(gate, samples, warmup))


def bench_issuance(rate: float, seconds: float, warmup: int, rng: random.Random) -> BenchCell:
    """Paced POST /v1/licenses over loopback against a fsyncing broker."""
    with tempfile.TemporaryDirectory(prefix="aegon-bench-") as tmp:
        broker = Broker(tmp, keys=BrokerKeySet.generate(rng=rng), rng=rng,
                        sth_policy=SthPolicy(interval=60, max_appends=10**9), fsync=True)
        body = {"platform_id": "bench", "publisher_domain": "news.example",
                "resource_url": "https://news.example/a/1", "scope": "excerpt", "license_type": "session"}
        try:
            with serve_loopback(create_app(broker)) as base_url, \
                    httpx.Client(base_url=base_url, timeout=10.0) as http:
                for _ in range(warmup):
                    http.post("/v1/licenses", json=body).raise_for_status()
                latencies = []
                interval = 1.0 / rate
                total = int(rate * seconds)
                start = time.perf_counter()
                for i in range(total):
                    due = start + i * interval
                    pause = due - time.perf_counter()
                    if pause > 0:
                        time.sleep(pause)
                    t0 = time.perf_counter()
                    http.post("/v1/licenses", json=body).raise_for_status()
                    latencies.append(time.perf_counter() - t0)
                elapsed = time.perf_counter() - start
        finally:
            broker.close()
    return _cell("token_issuance_http", latencies, target_rate=rate,
                 achieved_rate=round(len(latencies) / elapsed, 2))


def bench_provenance(samples: int, warmup: int, rng: random.Random) -> BenchCell:
    """Broker-side event recording: signature check plus fsynced ledger append."""
    with tempfile.TemporaryDirectory(prefix="aegon-bench-") as tmp:
        keys = BrokerKeySet.generate(rng=rng)
        ledger = Ledger(tmp, keys=keys, sth_policy=SthPolicy(interval=60, max_appends=10**9), fsync=True)
        issuer = TokenIssuer(keys, ledger, rng=rng)
        platform_key = jose.generate_key(rng)
        log = ProvenanceLog(ledger, {"bench": platform_key.public_key()})
        txn = issuer.issue_token({
            "platform_id": "bench", "publisher_domain": "news.example",
            "resource_url": "https://news.example/a/1", "scope": "excerpt", "license_type": "session",
        }).txn_id
        now = int(time.time())
        events = [sign_event(platform_key, txn, "chunk_retrieved", fingerprint(str(i).encode()), now)
                  for i in range(samples + warmup)]
        latencies = _time_calls(lambda i: log.record_event(events[i]), samples, warmup)
        ledger.close()
    return _cell("provenance_record", latencies)


def bench_receipt_signing(samples: int, warmup: int, rng: random.Random) -> tuple[BenchCell, int]:
    device = SimDevice.provision(b"\x00" * 32, rng=rng)
    constraints = {"license_type": "session", "training_allowed": False}
    digest = "ab" * 32
    sizes = []

    def sign(i: int) -> None:
        sizes.append(len(device.make_receipt(f"txn_{i:026d}", digest, constraints, "news.example")))

    latencies = _time_calls(sign, samples, warmup)
    return _cell("receipt_signing", latencies), max(sizes)


def bench_chain_verify(samples: int, warmup: int, rng: random.Random) -> BenchCell:
    now = 1_780_000_000
    root = TestRootAuthority(rng=rng, now=now)
    device = SimDevice.provision(b"\x01" * 32, root=root, rng=rng)
    trust = [root.root_jwk]

    def verify(i: int) -> None:
        verify_chain(device.chain, trust, b"\x01" * 32, now)

    return _cell("attestation_chain_verify", _time_calls(verify, samples, warmup))


def bench_ledger_append(samples: int, warmup: int, rng: random.Random) -> BenchCell:
    with tempfile.TemporaryDirectory(prefix="aegon-bench-") as tmp:
        ledger = Ledger(tmp, keys=BrokerKeySet.generate(rng=rng),
                        sth_policy=SthPolicy(interval=60, max_appends=10**9), fsync=True)
        entries = [LedgerEntry.create(f"txn_{i:026d}", "license_issued", {"n": i}, 1_780_000_000)
                   for i in range(samples + warmup)]
        start = time.perf_counter()
        latencies = _time_calls(lambda i: ledger.append(entries[i]), samples, warmup)
        elapsed = time.perf_counter() - start
        ledger.close()
    return _cell("ledger_append", latencies, achieved_rate=round((samples + warmup) / elapsed, 1))


def run_bench(profile: str = "quick", seed: int = 0) -> BenchReport:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = PROFILES[profile]
    rng = random.Random(seed)
    n, warm = cfg["samples"], cfg["warmup"]
    report = BenchReport(profile, environment={
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "cpu_count": os.cpu_count(),
        "issuance_transport": "loopback HTTP, uvicorn in-process thread",
    })
    logger.info("bench %s: token validation", profile)
    report.cells.append(bench_validation(n, warm, rng))
    logger.info("bench %s: issuance at %.0f req/s for %.0f s", profile, cfg["issuance_rate"], cfg["issuance_seconds"])
    report.cells.append(bench_issuance(cfg["issuance_rate"], cfg["issuance_seconds"], warm, rng))
    logger.info("bench %s: provenance recording", profile)
    report.cells.append(bench_provenance(n, warm, rng))
    signing, size = bench_receipt_signing(n, warm, rng)
    report.cells.append(signing)
    report.receipt_size_bytes = size
    report.cells.append(bench_chain_verify(n, warm, rng))
    report.cells.append(bench_ledger_append(n, warm, rng))
    return report
