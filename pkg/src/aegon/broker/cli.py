"""``aegon-broker``: run the broker over HTTP.

Every flag can also come from an ``AEGON_*`` environment variable.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path

import click
import httpx
import uvicorn

from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.keys import BrokerKeySet
from aegon.ledger import SthPolicy


def _load_trust_roots(path: str | None) -> list[dict]:
    if not path:
        return []
    doc = json.loads(Path(path).read_text())
    return doc["keys"] if isinstance(doc, dict) else doc


def _http_fetcher(url: str) -> bytes:
    response = httpx.get(url, headers={"User-Agent": "aegon-spot-check"}, timeout=10.0)
    response.raise_for_status()
    return response.content


class Ticker(threading.Thread):
    """Background loop for STH cadence and spot-checks; never blocks request handling."""

    def __init__(self, broker: Broker, period: float = 1.0):
        super().__init__(daemon=True, name="aegon-ticker")
        self.broker = broker
        self.period = period
        self.stopped = threading.Event()

    def run(self) -> None:
        while not self.stopped.wait(self.period):
            try:
                self.broker.tick()
            except Exception:
                logging.getLogger(__name__).exception("broker tick failed")


@click.command()
@click.option("--listen", default="127.0.0.1:8700", envvar="AEGON_LISTEN", show_default=True)
@click.option("--data-dir", default="./aegon-data", envvar="AEGON_DATA_DIR", show_default=True)
@click.option("--sth-interval", default=60.0, envvar="AEGON_STH_INTERVAL", show_default=True)
@click.option("--sth-max-appends", default=1000, envvar="AEGON_STH_MAX_APPENDS", show_default=True)
@click.option("--spot-check-rate", default=0.05, envvar="AEGON_SPOT_CHECK_RATE", show_default=True)
@click.option("--skew-threshold", default=300, envvar="AEGON_SKEW_THRESHOLD", show_default=True)
@click.option("--trust-roots", default=None, envvar="AEGON_TRUST_ROOTS",
              help="JSON file holding attestation root JWKs")
@click.option("--key-store", default=None, envvar="AEGON_KEY_STORE",
              help="key store path (default: <data-dir>/keys.json)")
@click.option("--platforms", default=None, envvar="AEGON_PLATFORMS",
              help="JSON file mapping platform_id to public JWK")
@click.option("--admin-token", default=None, envvar="AEGON_ADMIN_TOKEN")
@click.option("--dynamic-publisher", multiple=True, help="publisher domains exempt from spot-checks")
def main(listen, data_dir, sth_interval, sth_max_appends, spot_check_rate, skew_threshold,
         trust_roots, key_store, platforms, admin_token, dynamic_publisher):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    host, _, port = listen.rpartition(":")
    data = Path(data_dir)
    data.mkdir(parents=True, exist_ok=True)
    keys = BrokerKeySet.load_or_generate(key_store or data / "keys.json")
    platform_map = json.loads(Path(platforms).read_text()) if platforms else None
    broker = Broker(
        data_dir=data,
        keys=keys,
        trust_roots=_load_trust_roots(trust_roots),
        spot_check_rate=spot_check_rate,
        skew_threshold=skew_threshold,
        content_fetcher=_http_fetcher,
        dynamic_publishers=dynamic_publisher,
        sth_policy=SthPolicy(interval=sth_interval, max_appends=sth_max_appends),
        platforms=platform_map,
    )
    ticker = Ticker(broker)
    ticker.start()
    app = create_app(broker, admin_token=admin_token)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    finally:
        ticker.stopped.set()
        broker.close()


