"""Built-in end-to-end scenarios: happy paths, attacks, and honest blind spots.

Each scenario scripts the actors in a fresh seeded ``World`` and returns the
outcome it observed. ``run_scenario`` compares that with the documented
expectation. Transcripts hold only seed-determined values (no paths, no wall
clock), so two runs with one seed produce byte-identical transcripts.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from collections.abc import Callable
from dataclasses import dataclass, field

from aegon import jose
from aegon.canonical import canonical_encode
from aegon.client import BrokerError
from aegon.edge import content_sha256
from aegon.harness.world import PUBLISHER_DOMAIN, World
from aegon.recordlog import HEADER, scan_records

logger = logging.getLogger(__name__)

HAPPY = "happy"
ADVERSARIAL = "adversarial"
UNDETECTABLE = "undetectable"

ARTICLE = "/articles/licensing-for-machines"
OTHER_ARTICLE = "/articles/harbor-report"


@dataclass
class ScenarioSpec:
    name: str
    kind: str
    expected: str
    script: Callable[[World], str]
    world_options: dict = field(default_factory=dict)


@dataclass
class ScenarioResult:
    name: str
    seed: int
    kind: str
    expected: str
    observed: str
    transcript: list[dict]

    @property
    def passed(self) -> bool:
        return self.observed == self.expected

    @property
    def transcript_digest(self) -> str:
        return hashlib.sha256(canonical_encode(self.transcript)).hexdigest()

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "kind": self.kind,
            "expected": self.expected,
            "observed": self.observed,
            "passed": self.passed,
            "transcript_sha256": self.transcript_digest,
            "transcript": self.transcript,
        }


class ScenarioError(LookupError):
    pass


SCENARIOS: dict[str, ScenarioSpec] = {}


def scenario(kind: str, expected: str, **world_options):
    def register(fn: Callable[[World], str]) -> Callable[[World], str]:
        SCENARIOS[fn.__name__] = ScenarioSpec(fn.__name__, kind, expected, fn, world_options)
        return fn
    return register


def _denial(world: World, path: str, token: str) -> str:
    response = world.fetch(path, token)
    return "allowed" if response.is_success else f"denied:{response.json()['error']}"


def _audit(world: World, verdict) -> str:
    world.note("auditor", exit_code=verdict.exit_code, message=verdict.message)
    return verdict.message


# -- happy paths -----------------------------------------------------------------


def _web_flow(world: World) -> tuple[list[str], str, bytes]:
    """License, gated fetch, publisher hash, 5-stage provenance, auditor inclusion."""
    facts = []
    world.publisher.jwks_cache.get(world.clock())  # warm cache before traffic
    edge_calls_before = world.edge_client.calls

    doc = world.license(ARTICLE)
    txn_id = doc["txn_id"]
    response = world.fetch(ARTICLE, doc["token"])
    if response.status_code == 200 and response.headers.get("Aegon-Txn-Id") == txn_id:
        facts.append("served_with_txn_header")
    if world.edge_client.calls == edge_calls_before:
        facts.append("validated_offline")
    entries = world.platform.entries(txn_id)["entries"]
    if any(e["entry_type"] == "content_hash_reported"
           and e["payload"]["content_sha256"] == content_sha256(response.content) for e in entries):
        facts.append("publisher_hash_recorded")

    world.clock.advance(2)
    world.full_pipeline(txn_id, response.content)
    chain = world.platform.get(f"/v1/provenance/{txn_id}")
    world.note("chain", **chain)
    if chain["order_valid"] and all(chain["events_present"].values()) \
            and chain["fetch_hash_matches_publisher"] == "match":
        facts.append("chain_order_valid")

    world.publish_sth()
    verdict = world.auditor.cmd_verify_inclusion(txn_id)
    _audit(world, verdict)
    if verdict.ok:
        facts.append("auditor_inclusion_ok")
    return facts, txn_id, response.content


WEB_FACTS = ["served_with_txn_header", "validated_offline", "publisher_hash_recorded",
             "chain_order_valid", "auditor_inclusion_ok"]
MOBILE_FACTS = ["device_registered", *WEB_FACTS, "receipt_accepted", "receipt_committed"]


@scenario(HAPPY, ",".join(WEB_FACTS))
def happy_path_web(world: World) -> str:
    return ",".join(_web_flow(world)[0])


@scenario(HAPPY, ",".join(MOBILE_FACTS))
def happy_path_mobile(world: World) -> str:
    facts = []
    # Phase 1: attestation-backed registration.
    device = world.provision_device()
    record = world.register(device)
    world.note("device_registered", device_id=record["device_id"], security_level=record["security_level"])
    if record["device_id"] == device.device_id:
        facts.append("device_registered")
    # Phase 2: licensed content retrieval through the edge.
    web_facts, txn_id, content = _web_flow(world)
    facts += web_facts
    # Phase 3: compliance receipt, queued and flushed.
    world.clock.advance(30)
    receipt = device.make_receipt(txn_id, content_sha256(content),
                                  {"license_type": "single_use", "training_allowed": False},
                                  PUBLISHER_DOMAIN)
    world.note("receipt_size", bytes=len(receipt))
    device.enqueue(receipt)
    report = device.flush(world.platform)
    world.note("flush", batches=report.batches, accepted=len(report.accepted))
    if len(report.accepted) == 1:
        facts.append("receipt_accepted")
    world.publish_sth()
    entries = world.platform.entries(txn_id)["entries"]
    if any(e["entry_type"] == "receipt_accepted" for e in entries):
        facts.append("receipt_committed")
    return ",".join(facts)


# -- attacks -----------------------------------------------------------------------


@scenario(ADVERSARIAL, "allowed;denied:replayed")
def replay_single_use(world: World) -> str:
    doc = world.license(ARTICLE)
    first = _denial(world, ARTICLE, doc["token"])
    world.clock.advance(5)
    return f"{first};{_denial(world, ARTICLE, doc['token'])}"


@scenario(ADVERSARIAL, "denied:bad_signature")
def forged_token_signature(world: World) -> str:
    doc = world.license(ARTICLE)
    real = jose.jws_decode(doc["token"])
    claims = real.json_payload()
    claims["aegon_license_type"] = "time_bound_cache"
    claims["exp"] = claims["iat"] + 86400
    attacker = jose.generate_key(world.rng)
    forged = jose.jws_sign(canonical_encode(claims), attacker, typ="JWT", kid=real.header["kid"])
    return _denial(world, ARTICLE, forged)


@scenario(ADVERSARIAL, "denied:expired")
def expired_token(world: World) -> str:
    doc = world.license(ARTICLE)
    world.clock.advance(301)
    return _denial(world, ARTICLE, doc["token"])


@scenario(ADVERSARIAL, "denied:wrong_audience")
def wrong_audience(world: World) -> str:
    doc = world.license(ARTICLE, domain="rival-news.example")
    return _denial(world, ARTICLE, doc["token"])


@scenario(ADVERSARIAL, "denied:resource_mismatch")
def resource_mismatch(world: World) -> str:
    doc = world.license(ARTICLE)
    return _denial(world, OTHER_ARTICLE, doc["token"])


def _registration(world: World, **device_options) -> str:
    device = world.provision_device(**device_options)
    try:
        world.register(device)
    except BrokerError as exc:
        world.note("registration_rejected", status=exc.status, reason=exc.code)
        return f"rejected:{exc.code}"
    return "registered"


@scenario(ADVERSARIAL, "rejected:unlocked_bootloader")
def unlocked_bootloader(world: World) -> str:
    return _registration(world, boot_state="UNVERIFIED")


@scenario(ADVERSARIAL, "rejected:software_level")
def software_attestation(world: World) -> str:
    return _registration(world, security_level="SOFTWARE")


def _licensed_receipt(world: World):
    device = world.provision_device()
    world.register(device)
    doc = world.license(ARTICLE)
    response = world.fetch(ARTICLE, doc["token"])
    receipt = device.make_receipt(doc["txn_id"], content_sha256(response.content),
                                  {"license_type": "single_use", "training_allowed": False},
                                  PUBLISHER_DOMAIN)
    return device, receipt


def _submit(world: World, receipt: str) -> str:
    result = world.platform.submit_receipts([receipt])[0]
    world.note("receipt_result", status=result["status"], reason=result.get("reason"))
    return result["status"] if result["status"] == "accepted" else f"rejected:{result['reason']}"


@scenario(ADVERSARIAL, "accepted;rejected:duplicate_receipt")
def duplicate_receipt(world: World) -> str:
    _, receipt = _licensed_receipt(world)
    first = _submit(world, receipt)
    world.clock.advance(60)
    return f"{first};{_submit(world, receipt)}"


@scenario(ADVERSARIAL, "rejected:stale_receipt")
def stale_receipt_8d(world: World) -> str:
    _, receipt = _licensed_receipt(world)
    world.clock.advance(8 * 86400)
    return _submit(world, receipt)


@scenario(ADVERSARIAL, "mismatch,mismatch,mismatch;escalated", spot_check_rate=1.0)
def content_hash_mismatch(world: World) -> str:
    # The site shows the broker's auditor a sanitized page.
    for path, body in world.publisher.articles.items():
        world.publisher.divergent[path] = body.replace(b"</p>", b" (corrected)</p>")
    for path in list(world.publisher.articles)[:3]:
        doc = world.license(path)
        world.fetch(path, doc["token"])
        world.clock.advance(10)
    world.broker.tick()
    checks = world.platform.get("/v1/admin/spot-checks")
    health = {h["publisher_domain"]: h for h in world.platform.get("/v1/admin/publisher-health")}
    world.note("spot_checks", verdicts=[c["verdict"] for c in checks])
    world.note("publisher_health", **health.get(PUBLISHER_DOMAIN, {}))
    escalated = "escalated" if health.get(PUBLISHER_DOMAIN, {}).get("escalated") else "not_escalated"
    return ",".join(c["verdict"] for c in checks) + ";" + escalated


@scenario(ADVERSARIAL, "order_valid=False")
def provenance_out_of_order(world: World) -> str:
    doc = world.license(ARTICLE, license_type="session")
    content = world.fetch(ARTICLE, doc["token"]).content
    world.provenance(doc["txn_id"], "content_chunked", content[:40])
    world.clock.advance(1)
    world.provenance(doc["txn_id"], "content_fetched", content)
    chain = world.platform.get(f"/v1/provenance/{doc['txn_id']}")
    world.note("chain", **chain)
    return f"order_valid={chain['order_valid']}"


@scenario(ADVERSARIAL, "skew_flagged=True")
def backdated_provenance_timestamp(world: World) -> str:
    doc = world.license(ARTICLE, license_type="session")
    content = world.fetch(ARTICLE, doc["token"]).content
    world.clock.advance(120)
    world.provenance(doc["txn_id"], "content_fetched", content, client_timestamp=int(world.clock()) - 3600)
    chain = world.platform.get(f"/v1/provenance/{doc['txn_id']}")
    world.note("chain", **chain)
    return f"skew_flagged={bool(chain['timestamp_flags'])}"


def truncate_ledger(data_dir, keep: int) -> None:
    """Cut the ledger file back to its first ``keep`` records (operator rollback)."""
    path = data_dir / "ledger.aegl"
    data = path.read_bytes()
    payloads, _ = scan_records(data)
    end = len(HEADER) + sum(len(p) + 8 for p in payloads[:keep])
    with open(path, "r+b") as fh:
        fh.truncate(end)
        fh.flush()
        os.fsync(fh.fileno())


@scenario(ADVERSARIAL, "ROLLBACK;INCONSISTENT", persistent=True)
def ledger_rollback_detected_by_auditor(world: World) -> str:
    for path in list(world.publisher.articles) * 2:
        world.license(path, license_type="session")
    world.publish_sth()
    _audit(world, world.auditor.cmd_consistency())

    keep = world.broker.ledger.size - 3
    world.stop_broker()
    truncate_ledger(world.data_dir, keep)
    world.start_broker()
    world.note("broker_restarted", tree_size=world.broker.ledger.size)

    world.publish_sth()
    shrunk = _audit(world, world.auditor.cmd_consistency())
    for path in list(world.publisher.articles) * 2:
        world.license(path, license_type="session")
    world.publish_sth()
    regrown = _audit(world, world.auditor.cmd_consistency())
    return f"{shrunk.split(':')[0]};{regrown.split(':')[0]}"


# -- documented blind spots ----------------------------------------------------------


def _alerts(world: World, txn_ids: list[str]) -> list[str]:
    """Everything the broker and an auditor could flag about these transactions."""
    alerts = []
    for txn_id in txn_ids:
        chain = world.platform.get(f"/v1/provenance/{txn_id}")
        if not chain["order_valid"]:
            alerts.append(f"{txn_id}:order")
        if chain["timestamp_flags"]:
            alerts.append(f"{txn_id}:skew")
        if chain["fetch_hash_matches_publisher"] == "mismatch":
            alerts.append(f"{txn_id}:fetch_hash")
    world.broker.tick()
    alerts += [f"spot:{c['txn_id']}" for c in world.platform.get("/v1/admin/spot-checks")
               if c["verdict"] == "mismatch"]
    alerts += [f"rejected:{r['reason']}" for r in world.broker.provenance.rejections]
    world.publish_sth()
    verdict = world.auditor.cmd_consistency()
    if not verdict.ok:
        alerts.append("auditor")
    world.note("alerts", alerts=alerts)
    return alerts


@scenario(UNDETECTABLE, "no_alert", spot_check_rate=1.0)
def parallel_pipeline(world: World) -> str:
    """A compliant logged pipeline runs while a copy feeds an unlogged one."""
    doc = world.license(ARTICLE, license_type="session")
    content = world.fetch(ARTICLE, doc["token"]).content
    world.full_pipeline(doc["txn_id"], content)
    shadow_corpus = [content]  # never reported anywhere
    world.note("shadow_copy", bytes=sum(map(len, shadow_corpus)))
    return "no_alert" if not _alerts(world, [doc["txn_id"]]) else "alert"


@scenario(UNDETECTABLE, "no_alert", spot_check_rate=1.0)
def omitted_provenance_events(world: World) -> str:
    """The platform logs only the fetch and the citation, skipping the middle stages."""
    doc = world.license(ARTICLE, license_type="session")
    content = world.fetch(ARTICLE, doc["token"]).content
    world.provenance(doc["txn_id"], "content_fetched", content)
    world.clock.advance(3)
    world.provenance(doc["txn_id"], "content_cited", b"cite:" + content[:16])
    return "no_alert" if not _alerts(world, [doc["txn_id"]]) else "alert"


# -- runner ---------------------------------------------------------------------------


def scenario_names(kind: str | None = None) -> list[str]:
    return [n for n, s in SCENARIOS.items() if kind is None or s.kind == kind]


def run_scenario(name: str, seed: int = 0) -> ScenarioResult:
    try:
        spec = SCENARIOS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None
    with World(seed=seed, **spec.world_options) as world:
        world.note("scenario", name=name, seed=seed)
        observed = spec.script(world)
        world.note("outcome", observed=observed)
        transcript = json.loads(json.dumps(world.transcript))
    result = ScenarioResult(name, seed, spec.kind, spec.expected, observed, transcript)
    logger.info("scenario %s seed=%d: %s", name, seed, "pass" if result.passed else "FAIL")
    return result
