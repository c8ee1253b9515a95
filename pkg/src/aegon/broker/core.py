"""The broker: one object wiring ledger, tokens, provenance, devices and spot-checks.

Every method takes and returns JSON-shaped values so the HTTP layer stays a
thin mapping. All ledger mutation funnels through ``Ledger.append``.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from collections.abc import Callable, Iterable
from pathlib import Path

from aegon import jose
from aegon.attestation import ChallengeStore, DeviceRegistry, ReceiptVerifier
from aegon.broker.spotcheck import DEFAULT_RATE, SpotChecker
from aegon.errors import NotFoundError, OutOfRangeError, ValidationError
from aegon.keys import BrokerKeySet
from aegon.ledger import CONTENT_HASH_REPORTED, Ledger, SthPolicy
from aegon.provenance import ProvenanceLog
from aegon.tokens import TokenIssuer

logger = logging.getLogger(__name__)


class NotCommittedError(OutOfRangeError):
    code = "not_committed"


class Broker:
    def __init__(
        self,
        data_dir: str | Path | None = None,
        keys: BrokerKeySet | None = None,
        clock: Callable[[], float] = time.time,
        rng: random.Random | None = None,
        trust_roots: Iterable = (),
        spot_check_rate: float = DEFAULT_RATE,
        skew_threshold: int = 300,
        content_fetcher: Callable[[str], bytes] | None = None,
        dynamic_publishers: Iterable[str] = (),
        issuer: str = "broker.aegon.ai",
        sth_policy: SthPolicy | None = None,
        fsync: bool = True,
        platforms: dict[str, dict] | None = None,
    ):
        self.clock = clock
        self.data_dir = Path(data_dir) if data_dir is not None else None
        if keys is None:
            if self.data_dir is not None:
                keys = BrokerKeySet.load_or_generate(self.data_dir / "keys.json", now=clock())
            else:
                keys = BrokerKeySet.generate(now=clock(), rng=rng)
        self.keys = keys
        random_bytes = jose.random_bytes_from(rng)
        self.ledger = Ledger(self.data_dir, keys=keys, clock=clock, sth_policy=sth_policy, fsync=fsync)
        self.issuer = TokenIssuer(keys, self.ledger, issuer=issuer, rng=rng, clock=clock)
        self.provenance = ProvenanceLog(self.ledger, clock=clock, skew_threshold=skew_threshold)
        self.challenges = ChallengeStore(random_bytes=random_bytes)
        self.registry = DeviceRegistry(
            trust_roots,
            self.challenges,
            path=self.data_dir / "devices.json" if self.data_dir is not None else None,
        )
        self.receipts = ReceiptVerifier(self.ledger, self.registry, clock=clock)
        salt_secret = random_bytes(32)
        self.spot = SpotChecker(
            self.ledger,
            content_fetcher=content_fetcher,
            rate=spot_check_rate,
            salt_secret=salt_secret,
            dynamic_publishers=set(dynamic_publishers),
            clock=clock,
        )
        self._hash_lock = threading.Lock()
        self._platforms: dict[str, dict] = {}
        for platform_id, jwk in self._load_platforms().items():
            self.register_platform(platform_id, jwk, persist=False)
        for platform_id, jwk in (platforms or {}).items():
            self.register_platform(platform_id, jwk)
        if self.ledger.latest_sth() is None:
            self.ledger.publish_sth()

    # -- platforms ---------------------------------------------------------

    def _platforms_path(self) -> Path | None:
        return self.data_dir / "platforms.json" if self.data_dir is not None else None

    def _load_platforms(self) -> dict[str, dict]:
        path = self._platforms_path()
        if path is None or not path.exists():
            return {}
        return json.loads(path.read_text())

    def register_platform(self, platform_id: str, public_jwk: dict, persist: bool = True) -> dict:
        if not isinstance(platform_id, str) or not platform_id:
            raise ValidationError("platform_id must be a non-empty string")
        try:
            key = jose.jwk_to_public_key(public_jwk)
        except jose.JwsError as exc:
            raise ValidationError(str(exc)) from None
        self.provenance.register_platform(platform_id, key)
        self._platforms[platform_id] = jose.public_jwk(key)
        path = self._platforms_path()
        if persist and path is not None:
            path.write_text(json.dumps(self._platforms))
        return {"platform_id": platform_id, "registered": True}

    # -- licensing ---------------------------------------------------------

    def issue_license(self, body: dict) -> dict:
        issued = self.issuer.issue_token(body)
        return {
            "token": issued.token,
            "txn_id": issued.txn_id,
            "expires_at": issued.claims.exp,
            "leaf_index": issued.leaf_index,
        }

    def report_content_hash(self, body: dict) -> dict:
        if not isinstance(body, dict):
            raise ValidationError("body must be an object")
        txn_id = body.get("txn_id")
        digest = body.get("content_sha256")
        domain = body.get("publisher_domain")
        observed_at = body.get("observed_at")
        if not isinstance(txn_id, str) or not isinstance(domain, str):
            raise ValidationError("txn_id and publisher_domain are required strings")
        if not (isinstance(digest, str) and len(digest) == 64
                and all(c in "0123456789abcdef" for c in digest)):
            raise ValidationError("content_sha256 must be 64 lowercase hex chars")
        if not isinstance(observed_at, int) or isinstance(observed_at, bool):
            raise ValidationError("observed_at must be integer seconds")
        claims = self.ledger.license_entry(txn_id).payload_obj["claims"]
        if claims["aud"] != domain:
            raise ValidationError(f"txn {txn_id} is not licensed for {domain}", code="domain_mismatch")
        with self._hash_lock:
            for entry in self.ledger.entries_for(txn_id):
                if entry.entry_type == CONTENT_HASH_REPORTED and entry.payload_obj["content_sha256"] == digest:
                    return {"status": "duplicate", "txn_id": txn_id, "leaf_index": entry.leaf_index}
            entry = self.ledger.record(
                CONTENT_HASH_REPORTED,
                txn_id,
                {"content_sha256": digest, "publisher_domain": domain, "observed_at": observed_at},
            )
        if self.spot.selected(txn_id):
            self.spot.enqueue(txn_id)
        return {"status": "recorded", "txn_id": txn_id, "leaf_index": entry.leaf_index}

    def record_provenance(self, body: dict) -> dict:
        entry = self.provenance.record_event(body)
        payload = entry.payload_obj
        return {
            "status": "recorded",
            "txn_id": entry.txn_id,
            "leaf_index": entry.leaf_index,
            "server_receipt_timestamp": payload["server_receipt_timestamp"],
            "skew_flag": payload.get("skew_flag"),
        }

    def provenance_chain(self, txn_id: str) -> dict:
        self.ledger.license_entry(txn_id)
        return self.provenance.validate_chain(txn_id).to_json()

    # -- devices and receipts ---------------------------------------------

    def device_challenge(self) -> dict:
        challenge, expires = self.challenges.issue(self.clock())
        return {"challenge": jose.b64url_encode(challenge), "expires_at": int(expires)}

    def register_device(self, body: dict) -> dict:
        if not isinstance(body, dict) or not isinstance(body.get("chain"), list):
            raise ValidationError("body needs a chain list and a challenge")
        try:
            challenge = jose.b64url_decode(body.get("challenge"))
        except jose.JwsError as exc:
            raise ValidationError(f"bad challenge: {exc}") from None
        return self.registry.register_device(body["chain"], challenge, self.clock()).to_json()

    def revoke_device(self, device_id: str) -> dict:
        return self.registry.revoke_device(device_id).to_json()

    def submit_receipts(self, receipts: list) -> list[dict]:
        return [r.to_json() for r in self.receipts.verify_batch(receipts)]

    # -- transparency --------------------------------------------------------

    def jwks(self) -> dict:
        return self.keys.jwks()

    def sth(self) -> dict:
        sth = self.ledger.latest_sth() or self.ledger.publish_sth()
        return sth.to_json()

    def publish_sth(self) -> dict:
        return self.ledger.publish_sth().to_json()

    def sth_history(self) -> list[dict]:
        return [s.to_json() for s in self.ledger.sth_history()]

    def proof(self, txn_id: str | None = None, tree_size: int | None = None,
              leaf_index: int | None = None) -> dict:
        if (txn_id is None) == (leaf_index is None):
            raise ValidationError("give exactly one of txn_id or leaf_index")
        target = txn_id if txn_id is not None else leaf_index
        if txn_id is not None:
            index = self.ledger.license_entry(txn_id).leaf_index
        else:
            index = leaf_index
        if tree_size is None:
            latest = self.ledger.latest_sth()
            tree_size = latest.tree_size if latest is not None else self.ledger.size
            if index >= tree_size:
                raise NotCommittedError(f"leaf {index} is not yet covered by a published STH")
        return self.ledger.inclusion_proof(target, tree_size).to_json()

    def consistency(self, old: int, new: int) -> dict:
        return self.ledger.consistency_proof(old, new).to_json()

    def entries(self, txn_id: str) -> dict:
        entries = self.ledger.entries_for(txn_id)
        if not entries:
            raise NotFoundError(f"unknown txn_id {txn_id}")
        return {"txn_id": txn_id, "entries": [e.to_json() for e in entries]}

    def entry_at(self, leaf_index: int) -> dict:
        return self.ledger.entry(leaf_index).to_json()

    # -- admin ---------------------------------------------------------------

    def spot_checks(self) -> list[dict]:
        return [r.to_json() for r in self.spot.results]

    def publisher_health(self) -> list[dict]:
        return [h.to_json() for h in self.spot.health.values()]

    def tick(self) -> None:
        """Periodic work: STH cadence and queued spot-checks."""
        self.ledger.maybe_publish()
        self.spot.run_pending()

    def close(self) -> None:
        self.ledger.close()
