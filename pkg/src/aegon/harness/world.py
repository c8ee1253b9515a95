"""A complete in-process deployment: broker, toy publisher, platform, devices, auditor.

Every actor shares one ``ManualClock`` and draws randomness from one seeded
``random.Random``, so a world built from the same seed replays identically.
"""

from __future__ import annotations

import logging
import random
import tempfile
from pathlib import Path

from aegon import jose
from aegon.attestation import TestRootAuthority
from aegon.auditor import Auditor, AuditorState
from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.client import BrokerClient
from aegon.clock import ManualClock
from aegon.device import SimDevice
from aegon.harness.inproc import TestClient
from aegon.harness.publisher import ToyPublisher
from aegon.keys import BrokerKeySet
from aegon.ledger import SthPolicy
from aegon.provenance import fingerprint, sign_event

logger = logging.getLogger(__name__)

PUBLISHER_DOMAIN = "news.example"
PLATFORM_ID = "platform-alpha"
START_TIME = 1_780_000_000.0


class World:
    def __init__(
        self,
        seed: int = 0,
        spot_check_rate: float = 0.05,
        persistent: bool = False,
        skew_threshold: int = 300,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = ManualClock(START_TIME)
        self._tmp = tempfile.TemporaryDirectory(prefix="aegon-world-")
        self.workdir = Path(self._tmp.name)
        self.data_dir = self.workdir / "broker" if persistent else None
        self.transcript: list[dict] = []
        self._challenges: dict[str, str] = {}

        self.root = TestRootAuthority(rng=self.rng, now=int(self.clock()))
        self.keys = BrokerKeySet.generate(now=self.clock(), rng=self.rng)
        self._broker_kwargs = dict(
            keys=self.keys,
            clock=self.clock,
            rng=self.rng,
            trust_roots=[self.root.root_jwk],
            spot_check_rate=spot_check_rate,
            skew_threshold=skew_threshold,
            content_fetcher=lambda url: self.publisher.broker_fetch(url),
            sth_policy=SthPolicy(interval=60, max_appends=1000),
            fsync=False,
        )
        self.start_broker()

        # Separate clients so the edge validator's broker traffic is countable.
        self.edge_client = BrokerClient(self.broker_http)
        self.publisher = ToyPublisher(
            PUBLISHER_DOMAIN,
            report_client=BrokerClient(self.broker_http),
            jwks_fetch=self.edge_client.jwks,
            clock=self.clock,
            sleep=self.clock.sleep,
            rng=self.rng,
        )
        self.platform_key = jose.generate_key(self.rng)
        self.platform.register_platform(PLATFORM_ID, jose.public_jwk(self.platform_key.public_key()))
        self.auditor_state = AuditorState(self.workdir / "auditor")
        self.auditor = Auditor(BrokerClient(self.broker_http), self.auditor_state)

    # -- lifecycle ---------------------------------------------------------

    def start_broker(self) -> None:
        self.broker = Broker(self.data_dir, **self._broker_kwargs)
        self.broker_http = TestClient(create_app(self.broker), base_url="http://broker.test")
        self.platform = BrokerClient(self.broker_http)
        if hasattr(self, "auditor"):
            self.auditor.client = BrokerClient(self.broker_http)
            self.edge_client.http = self.broker_http
            self.publisher.reporter.client = BrokerClient(self.broker_http)

    def stop_broker(self) -> None:
        self.broker.close()

    def close(self) -> None:
        self.broker.close()
        self.auditor_state.close()
        self._tmp.cleanup()

    def __enter__(self) -> World:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- transcript ----------------------------------------------------------

    def note(self, event: str, **fields) -> None:
        self.transcript.append({"t": int(self.clock() - START_TIME), "event": event, **fields})

    # -- platform actor --------------------------------------------------------

    def license(self, path: str, license_type: str = "single_use", domain: str = PUBLISHER_DOMAIN,
                scope: str = "full_article_html", **extra) -> dict:
        doc = self.platform.request_license(
            platform_id=PLATFORM_ID,
            publisher_domain=domain,
            resource_url=f"https://{domain}{path}",
            scope=scope,
            license_type=license_type,
            **extra,
        )
        self.note("license_issued", txn_id=doc["txn_id"], leaf_index=doc["leaf_index"], path=path)
        return doc

    def fetch(self, path: str, token: str | None):
        headers = {"Authorization": f"Bearer {token}"} if token is not None else {}
        response = self.publisher.http.get(path, headers=headers)
        self.note(
            "publisher_response",
            path=path,
            status=response.status_code,
            txn_header=response.headers.get("Aegon-Txn-Id"),
            error=None if response.is_success else response.json().get("error"),
        )
        return response

    def provenance(self, txn_id: str, event_type: str, artifact: bytes, client_timestamp: int | None = None,
                   stage_detail: dict | None = None) -> dict:
        ts = int(self.clock()) if client_timestamp is None else client_timestamp
        event = sign_event(self.platform_key, txn_id, event_type, fingerprint(artifact), ts, stage_detail)
        result = self.platform.post_provenance(event)
        self.note("provenance_recorded", event_type=event_type, leaf_index=result["leaf_index"],
                  skew_flag=result.get("skew_flag"))
        return result

    def full_pipeline(self, txn_id: str, content: bytes) -> None:
        """The five pipeline stages, each a tick apart."""
        chunk = content[: len(content) // 2]
        self.provenance(txn_id, "content_fetched", content)
        for stage, artifact in (("content_chunked", chunk), ("chunk_embedded", b"vec:" + chunk),
                                ("chunk_retrieved", chunk), ("content_cited", b"cite:" + content[:16])):
            self.clock.advance(1)
            self.provenance(txn_id, stage, artifact)

    # -- devices -------------------------------------------------------------

    def provision_device(self, security_level: str = "STRONGBOX", boot_state: str = "VERIFIED") -> SimDevice:
        challenge = self.platform.device_challenge()["challenge"]
        device = SimDevice.provision(
            jose.b64url_decode(challenge),
            security_level=security_level,
            boot_state=boot_state,
            root=self.root,
            clock=self.clock,
            rng=self.rng,
        )
        self._challenges[device.device_id] = challenge
        return device

    def register(self, device: SimDevice) -> dict:
        return self.platform.register_device(device.chain, self._challenges[device.device_id])

    # -- auditor -------------------------------------------------------------

    def publish_sth(self) -> dict:
        sth = self.platform.publish_sth()
        self.note("sth_published", tree_size=sth["tree_size"], root_hash=sth["root_hash"])
        return sth
