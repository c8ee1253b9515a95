"""Audit a broker over real HTTP, then catch it rolling back its log.

Run: python3 demos/live_audit.py

Starts a broker on a loopback port, issues some licenses, and drives the
``aegon-audit`` commands against it. The broker is then restarted from a
truncated ledger; the auditor's stored tree heads expose the rollback.
"""

import logging
import tempfile
from pathlib import Path

import httpx
from click.testing import CliRunner

from aegon.auditor import cli
from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.harness.loopback import serve_loopback
from aegon.harness.scenarios import truncate_ledger

log = logging.getLogger("demo.audit")


def license_some(http: httpx.Client, n: int) -> list[str]:
    body = {"platform_id": "demo", "publisher_domain": "news.example",
            "resource_url": "https://news.example/articles/a", "scope": "excerpt", "license_type": "session"}
    return [http.post("/v1/licenses", json=body).raise_for_status().json()["txn_id"] for _ in range(n)]


def audit(url: str, state: Path, *args: str) -> str:
    result = CliRunner().invoke(cli, ["--broker", url, "--state-dir", str(state), *args])
    return f"exit {result.exit_code}: {result.output.strip()}"


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    with tempfile.TemporaryDirectory() as tmp:
        data, state = Path(tmp) / "broker", Path(tmp) / "auditor"
        broker = Broker(data, fsync=False)
        with serve_loopback(create_app(broker)) as url, httpx.Client(base_url=url) as http:
            log.info("broker listening on %s", url)
            txns = license_some(http, 6)
            http.post("/v1/admin/sth").raise_for_status()
            log.info("aegon-audit sth -> %s", audit(url, state, "sth"))
            log.info("aegon-audit verify-inclusion -> %s", audit(url, state, "verify-inclusion", txns[2]))
            license_some(http, 4)
            http.post("/v1/admin/sth").raise_for_status()
            log.info("aegon-audit consistency -> %s", audit(url, state, "consistency"))
        broker.close()

        # The operator quietly drops the last entries and restarts.
        truncate_ledger(data, keep=5)
        broker = Broker(data, fsync=False)
        with serve_loopback(create_app(broker)) as url:
            httpx.post(url + "/v1/admin/sth").raise_for_status()
            log.info("after truncation, aegon-audit consistency -> %s", audit(url, state, "consistency"))
        broker.close()


if __name__ == "__main__":
    main()
