"""An attested phone consumes licensed content offline and reports it later.

Run: python3 demos/mobile_receipts.py

The device registers with an attestation chain, queues compliance receipts
while offline, then drains them in batches once connectivity returns.
"""

import logging

from aegon.edge import content_sha256
from aegon.harness.scenarios import ARTICLE
from aegon.harness.world import PUBLISHER_DOMAIN, World

log = logging.getLogger("demo.mobile")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    with World(seed=2) as world:
        device = world.provision_device()
        record = world.register(device)
        log.info("registered %s at security level %s", record["device_id"], record["security_level"])

        doc = world.license(ARTICLE, license_type="session")
        body = world.fetch(ARTICLE, doc["token"]).content
        constraints = {"license_type": "session", "training_allowed": False}
        for _ in range(230):
            device.enqueue(device.make_receipt(doc["txn_id"], content_sha256(body), constraints, PUBLISHER_DOMAIN))
        log.info("queued %d receipts while offline", len(device.queue))

        start = world.clock()
        report = device.flush(world.platform, connectivity=lambda t: t >= start + 90)
        log.info("backoff before jitter: %s", report.base_delays)
        log.info("actual waits: %s", [round(d, 2) for d in report.delays])
        log.info("uploaded in batches %s, %d accepted", report.batches, len(report.accepted))

        world.publish_sth()
        entries = world.platform.entries(doc["txn_id"])["entries"]
        log.info("ledger entries for the transaction: %d receipts committed",
                 sum(e["entry_type"] == "receipt_accepted" for e in entries))


if __name__ == "__main__":
    main()
