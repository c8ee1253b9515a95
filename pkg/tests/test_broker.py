import concurrent.futures
import random

import httpx
import pytest
from click.testing import CliRunner
from conftest import T0, license_request

from aegon import jose
from aegon.attestation import TestRootAuthority
from aegon.broker.app import create_app
from aegon.broker.cli import main as broker_main
from aegon.broker.core import Broker
from aegon.client import BrokerClient, BrokerError
from aegon.clock import ManualClock
from aegon.device import SimDevice
from aegon.edge import content_sha256
from aegon.harness.inproc import TestClient
from aegon.harness.loopback import serve_loopback
from aegon.ledger import (
    InclusionProof,
    LedgerEntry,
    SignedTreeHead,
    SthPolicy,
    entry_leaf_hash,
    verify_inclusion,
    verify_sth,
)
from aegon.provenance import fingerprint, sign_event

ARTICLE = b"<article>full flow</article>"


class Deployment:
    def __init__(self, data_dir=None, admin_token=None, seed=0):
        self.rng = random.Random(seed)
        self.clock = ManualClock(T0)
        self.root = TestRootAuthority(rng=self.rng, now=T0)
        self.broker = Broker(data_dir, clock=self.clock, rng=self.rng, trust_roots=[self.root.root_jwk],
                             spot_check_rate=1.0, content_fetcher=lambda url: ARTICLE, fsync=False,
                             sth_policy=SthPolicy(interval=60, max_appends=10**6))
        self.app = create_app(self.broker, admin_token=admin_token)
        self.http = TestClient(self.app, base_url="http://broker.test")
        self.client = BrokerClient(self.http)
        self.platform_key = jose.generate_key(self.rng)

    def close(self):
        self.broker.close()


@pytest.fixture
def dep():
    d = Deployment()
    yield d
    d.close()


def full_broker_flow(client: BrokerClient, rng, root, clock, platform_key) -> dict:
    """Every step of the licensing flow, each asserted to succeed. Returns what was created."""
    client.register_platform("platform-alpha", jose.public_jwk(platform_key.public_key()))
    lic = client.request_license(**license_request(license_type="session"))
    ack = client.report_content_hash({"txn_id": lic["txn_id"], "content_sha256": content_sha256(ARTICLE),
                                      "publisher_domain": "news.example", "observed_at": T0})
    assert ack["status"] == "recorded"
    prov = client.post_provenance(sign_event(platform_key, lic["txn_id"], "content_fetched",
                                             fingerprint(ARTICLE), int(clock())))
    challenge = client.device_challenge()["challenge"]
    device = SimDevice.provision(jose.b64url_decode(challenge), root=root, clock=clock, rng=rng)
    assert client.register_device(device.chain, challenge)["status"] == "active"
    receipt = device.make_receipt(lic["txn_id"], content_sha256(ARTICLE),
                                  {"license_type": "session", "training_allowed": False}, "news.example")
    [result] = client.submit_receipts([receipt])
    assert result["status"] == "accepted", result
    return {"license": lic, "hash": ack, "provenance": prov, "receipt": result, "device": device}


def test_fresh_broker_has_empty_sth(dep):
    sth = dep.client.sth()
    assert sth["tree_size"] == 0
    assert sth["root_hash"] == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert verify_sth(SignedTreeHead.from_json(sth), dep.client.jwks())


def test_full_broker_flow_over_loopback():
    dep = Deployment()
    try:
        with serve_loopback(dep.app) as base_url, httpx.Client(base_url=base_url, timeout=10) as http:
            client = BrokerClient(http)
            made = full_broker_flow(client, dep.rng, dep.root, dep.clock, dep.platform_key)
            sth = client.publish_sth()
            proof = client.proof(txn_id=made["license"]["txn_id"])
            assert proof["tree_size"] == sth["tree_size"]
    finally:
        dep.close()


def test_every_mutation_is_provable_against_next_sth(dep):
    made = full_broker_flow(dep.client, dep.rng, dep.root, dep.clock, dep.platform_key)
    sth = SignedTreeHead.from_json(dep.client.publish_sth())
    jwks = dep.client.jwks()
    leaves = [made["license"]["leaf_index"], made["hash"]["leaf_index"], made["provenance"]["leaf_index"],
              made["receipt"]["leaf_index"]]
    assert len(set(leaves)) == 4
    for leaf in leaves:
        entry = LedgerEntry.from_leaf_bytes(
            jose.b64url_decode(dep.client.get(f"/v1/leaves/{leaf}")["leaf_b64"]), leaf)
        proof = InclusionProof.from_json(dep.client.proof(leaf_index=leaf))
        assert verify_inclusion(proof, entry_leaf_hash(entry), sth, jwks)


def test_proof_unknown_txn_404(dep):
    r = dep.http.get("/v1/proof", params={"txn_id": "txn_missing"})
    assert r.status_code == 404
    assert r.json()["error_code"] == "not_found"


def test_proof_not_yet_committed(dep):
    lic = dep.client.request_license(**license_request())
    r = dep.http.get("/v1/proof", params={"txn_id": lic["txn_id"]})
    assert (r.status_code, r.json()["error_code"]) == (409, "not_committed")
    dep.client.publish_sth()
    assert dep.client.proof(txn_id=lic["txn_id"])["leaf_index"] == lic["leaf_index"]


@pytest.mark.parametrize("method,path,body,status,code", [
    ("post", "/v1/licenses", {"platform_id": "p"}, 400, "validation_error"),
    ("post", "/v1/licenses", [1, 2], 400, "validation_error"),
    ("post", "/v1/content-hash", {"txn_id": "txn_x", "content_sha256": "ab" * 32,
                                  "publisher_domain": "news.example", "observed_at": T0}, 404, "not_found"),
    ("post", "/v1/content-hash", {"txn_id": "txn_x"}, 400, "validation_error"),
    ("post", "/v1/receipts", ["x"] * 101, 400, "validation_error"),
    ("post", "/v1/devices", {"chain": [], "challenge": "AAAA"}, 409, "replay"),
    ("get", "/v1/consistency?old=5&new=1", None, 400, "out_of_range"),
    ("get", "/v1/proof", None, 400, "validation_error"),
    ("get", "/v1/entries/txn_missing", None, 404, "not_found"),
    ("get", "/v1/provenance/txn_missing", None, 404, "not_found"),
    ("post", "/v1/devices/dev_missing/revoke", None, 404, "not_found"),
])
def test_error_mapping(dep, method, path, body, status, code):
    r = dep.http.request(method.upper(), path, json=body)
    assert r.status_code == status, r.text
    doc = r.json()
    assert set(doc) == {"error_code", "message"}
    assert doc["error_code"] == code


def test_provenance_bad_signature_is_422(dep):
    dep.client.register_platform("platform-alpha", jose.public_jwk(dep.platform_key.public_key()))
    lic = dep.client.request_license(**license_request())
    event = sign_event(jose.generate_key(dep.rng), lic["txn_id"], "content_fetched", fingerprint(b"x"), T0)
    r = dep.http.post("/v1/provenance", json=event)
    assert (r.status_code, r.json()["error_code"]) == (422, "bad_signature")


def test_admin_token_required_when_configured():
    dep = Deployment(admin_token="s3cret")
    try:
        for method, path in [("POST", "/v1/admin/sth"), ("GET", "/v1/admin/spot-checks"),
                             ("GET", "/v1/admin/publisher-health"), ("POST", "/v1/devices/dev_x/revoke")]:
            r = dep.http.request(method, path)
            assert (r.status_code, r.json()["error_code"]) == (401, "unauthorized")
        ok = dep.http.post("/v1/admin/sth", headers={"Authorization": "Bearer s3cret"})
        assert ok.status_code == 200
    finally:
        dep.close()


def test_admin_endpoints_are_read_only(dep):
    full_broker_flow(dep.client, dep.rng, dep.root, dep.clock, dep.platform_key)
    dep.broker.tick()
    size = dep.broker.ledger.size
    checks = dep.client.get("/v1/admin/spot-checks")
    health = dep.client.get("/v1/admin/publisher-health")
    assert [c["verdict"] for c in checks] == ["verified"]
    assert health == [{"publisher_domain": "news.example", "consecutive_mismatches": 0,
                       "escalated": False, "checks": 1}]
    assert dep.broker.ledger.size == size


def test_provenance_chain_endpoint(dep):
    made = full_broker_flow(dep.client, dep.rng, dep.root, dep.clock, dep.platform_key)
    status = dep.client.get(f"/v1/provenance/{made['license']['txn_id']}")
    assert status["first_event_is_fetch"] and status["fetch_hash_matches_publisher"] == "match"


def test_revoked_device_receipts_rejected_over_http(dep):
    made = full_broker_flow(dep.client, dep.rng, dep.root, dep.clock, dep.platform_key)
    device = made["device"]
    assert dep.client.revoke_device(device.device_id)["status"] == "revoked"
    receipt = device.make_receipt(made["license"]["txn_id"], content_sha256(ARTICLE),
                                  {"license_type": "session", "training_allowed": False}, "news.example")
    assert dep.client.submit_receipts([receipt])[0]["reason"] == "revoked_device"


def test_restart_preserves_state(tmp_path):
    dep = Deployment(tmp_path)
    made = full_broker_flow(dep.client, dep.rng, dep.root, dep.clock, dep.platform_key)
    sth = dep.client.publish_sth()
    dep.close()

    again = Broker(tmp_path, clock=ManualClock(T0 + 10), trust_roots=[dep.root.root_jwk], fsync=False)
    client = BrokerClient(TestClient(create_app(again), base_url="http://broker.test"))
    try:
        assert client.sth() == sth
        assert client.proof(txn_id=made["license"]["txn_id"])["tree_size"] == sth["tree_size"]
        device = made["device"]
        assert again.registry.get(device.device_id).status == "active"
        # Platform registration and receipt dedup both survive the restart.
        event = sign_event(dep.platform_key, made["license"]["txn_id"], "content_cited", fingerprint(b"c"), T0)
        assert client.post_provenance(event)["status"] == "recorded"
        receipt_jws = again.ledger.entry(made["receipt"]["leaf_index"]).payload_obj["receipt_jws"]
        assert client.submit_receipts([receipt_jws])[0]["reason"] == "duplicate_receipt"
    finally:
        again.close()


def test_concurrent_issuance_over_loopback():
    dep = Deployment()
    try:
        with serve_loopback(dep.app) as base_url:
            def issue(_):
                with httpx.Client(base_url=base_url, timeout=10) as http:
                    return BrokerClient(http).request_license(**license_request())["leaf_index"]

            with concurrent.futures.ThreadPoolExecutor(8) as pool:
                leaves = list(pool.map(issue, range(40)))
        assert sorted(leaves) == list(range(40))
    finally:
        dep.close()


def test_client_surfaces_error_documents(dep):
    with pytest.raises(BrokerError) as info:
        dep.client.entries("txn_missing")
    assert (info.value.status, info.value.code) == (404, "not_found")


def test_broker_cli_help():
    result = CliRunner().invoke(broker_main, ["--help"])
    assert result.exit_code == 0
    for flag in ("--listen", "--data-dir", "--sth-interval", "--spot-check-rate", "--skew-threshold",
                 "--trust-roots", "--key-store", "--admin-token"):
        assert flag in result.output
