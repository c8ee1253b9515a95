"""A crawler licenses an article, fetches it, and leaves a provable trail.

Run: python3 demos/web_licensing.py

Everything happens in one process on a simulated clock: the broker, a toy
publisher behind the edge validator, and the licensing platform.
"""

import logging

from aegon.harness.scenarios import ARTICLE
from aegon.harness.world import World

log = logging.getLogger("demo.web")


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    with World(seed=1) as world:
        # The publisher's edge caches the broker JWKS once; after that it never calls home.
        world.publisher.jwks_cache.get(world.clock())
        calls = world.edge_client.calls

        doc = world.license(ARTICLE)
        log.info("licensed %s as %s (leaf %d)", ARTICLE, doc["txn_id"], doc["leaf_index"])

        response = world.fetch(ARTICLE, doc["token"])
        log.info("publisher answered %d with Aegon-Txn-Id=%s", response.status_code,
                 response.headers.get("Aegon-Txn-Id"))
        log.info("edge validator broker calls during the fetch: %d", world.edge_client.calls - calls)

        replay = world.fetch(ARTICLE, doc["token"])
        log.info("replaying the single-use token: %d %s", replay.status_code, replay.json()["error"])

        world.clock.advance(2)
        world.full_pipeline(doc["txn_id"], response.content)
        chain = world.platform.get(f"/v1/provenance/{doc['txn_id']}")
        log.info("provenance stages: %s", ", ".join(k for k, v in chain["events_present"].items() if v))
        log.info("order valid: %s, fetch hash vs publisher: %s",
                 chain["order_valid"], chain["fetch_hash_matches_publisher"])

        world.publish_sth()
        verdict = world.auditor.cmd_verify_inclusion(doc["txn_id"])
        log.info("auditor: %s", verdict.message)


if __name__ == "__main__":
    main()
