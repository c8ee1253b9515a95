import json
import random
from pathlib import Path

import httpx
import pytest
from click.testing import CliRunner
from conftest import T0, license_request

from aegon import jose
from aegon.auditor import (
    EXIT_FAIL,
    EXIT_NOT_FOUND,
    EXIT_OK,
    EXIT_TRANSPORT,
    Auditor,
    AuditorState,
    cli,
)
from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.client import BrokerClient
from aegon.clock import ManualClock
from aegon.harness.inproc import TestClient
from aegon.harness.scenarios import truncate_ledger
from aegon.keys import STH_SIGNING, TOKEN_SIGNING
from aegon.ledger import SthPolicy

BASE = "http://broker.test"


class Proxy:
    """httpx transport in front of a broker app; ``mutators`` rewrite JSON bodies by path."""

    def __init__(self, upstream: httpx.Client):
        self.upstream = upstream
        self.mutators: dict[str, callable] = {}
        self.offline = False
        self.log: list[tuple[str, str, int, bytes]] = []

    def handler(self, request: httpx.Request) -> httpx.Response:
        if self.offline:
            raise httpx.ConnectError("connection refused", request=request)
        path = request.url.path
        query = request.url.query.decode()
        upstream = self.upstream.request(request.method, path + (f"?{query}" if query else ""))
        content = upstream.content
        if path in self.mutators and upstream.status_code == 200:
            content = json.dumps(self.mutators[path](upstream.json())).encode()
        self.log.append((request.method, str(request.url), upstream.status_code, content))
        return httpx.Response(upstream.status_code, content=content,
                              headers={"content-type": "application/json"})

    def client(self) -> httpx.Client:
        return httpx.Client(transport=httpx.MockTransport(self.handler), base_url=BASE)


class Env:
    def __init__(self, data_dir=None, seed=0):
        self.data_dir = data_dir
        self.clock = ManualClock(T0)
        self.rng = random.Random(seed)
        self.start()

    def start(self):
        self.broker = Broker(self.data_dir, clock=self.clock, rng=self.rng, fsync=False,
                             sth_policy=SthPolicy(interval=60, max_appends=10**6))
        self.proxy = Proxy(TestClient(create_app(self.broker), base_url=BASE))

    def restart(self):
        self.broker.close()
        self.start()

    def grow(self, n=3) -> list[str]:
        txns = [self.broker.issue_license(license_request())["txn_id"] for _ in range(n)]
        self.clock.advance(1)
        self.broker.publish_sth()
        return txns


@pytest.fixture
def env():
    e = Env()
    yield e
    e.broker.close()


def run(env, state_dir, *args, http=None):
    result = CliRunner().invoke(cli, ["--state-dir", str(state_dir), *args],
                                obj={"http": http or env.proxy.client(), "sleep": lambda s: None})
    return result.exit_code, result.output.strip()


def test_sth_stores_history(env, tmp_path):
    env.grow()
    code, out = run(env, tmp_path, "sth")
    assert code == EXIT_OK and out.startswith("STH OK tree_size 3 ")
    state = AuditorState(tmp_path)
    assert [s.tree_size for s in state.history()] == [3]
    lines = (tmp_path / "verification.log").read_text().splitlines()
    assert json.loads(lines[-1])["ok"] is True


def test_sth_signed_by_wrong_key(env, tmp_path):
    env.grow()
    token_key = env.broker.keys.active(TOKEN_SIGNING)

    def resign(doc):
        message = json.dumps({"root_hash": doc["root_hash"], "timestamp": doc["timestamp"],
                              "tree_size": doc["tree_size"]}, separators=(",", ":"), sort_keys=True)
        sig = jose.sign_es256(token_key.private_key, message.encode())
        return {**doc, "signature": jose.b64url_encode(sig), "key_id": token_key.kid}

    env.proxy.mutators["/v1/sth"] = resign
    code, out = run(env, tmp_path, "sth")
    assert (code, out) == (EXIT_FAIL, "bad STH signature")
    assert AuditorState(tmp_path).history() == []


def test_equivocation_across_runs(env, tmp_path):
    env.grow()
    assert run(env, tmp_path, "sth")[0] == EXIT_OK
    sth_key = env.broker.keys.active(STH_SIGNING)

    def fork(doc):
        # A malicious broker holding the real key presents a different tree of the same size.
        root = "ab" * 32
        message = json.dumps({"root_hash": root, "timestamp": doc["timestamp"] + 1,
                              "tree_size": doc["tree_size"]}, separators=(",", ":"), sort_keys=True)
        sig = jose.sign_es256(sth_key.private_key, message.encode())
        return {**doc, "root_hash": root, "timestamp": doc["timestamp"] + 1, "signature": jose.b64url_encode(sig)}

    env.proxy.mutators["/v1/sth"] = fork
    code, out = run(env, tmp_path, "sth")
    assert code == EXIT_FAIL and out == "equivocation: two roots for tree_size 3"
    code, out = run(env, tmp_path, "--json", "sth")
    doc = json.loads(out)
    assert doc["ok"] is False and len(set(doc["root_hashes"])) == 2


def test_verify_inclusion(env, tmp_path):
    txns = env.grow(5)
    code, out = run(env, tmp_path, "verify-inclusion", txns[3])
    assert (code, out) == (EXIT_OK, "INCLUDED at index 3, tree_size 5")


def test_inclusion_json_output(env, tmp_path):
    txns = env.grow(2)
    code, out = run(env, tmp_path, "--json", "verify-inclusion", txns[0])
    assert json.loads(out) == {"ok": True, "exit_code": 0, "message": "INCLUDED at index 0, tree_size 2",
                               "leaf_index": 0, "tree_size": 2, "txn_id": txns[0]}


def test_fabricated_txn_not_found(env, tmp_path):
    env.grow()
    code, out = run(env, tmp_path, "verify-inclusion", "txn_fabricated")
    assert code == EXIT_NOT_FOUND and out.startswith("NOT FOUND")


def test_not_yet_committed(env, tmp_path):
    env.grow(2)
    late = env.broker.issue_license(license_request())["txn_id"]
    code, out = run(env, tmp_path, "verify-inclusion", late)
    assert code == EXIT_FAIL and out.startswith("NOT YET COMMITTED")


@pytest.mark.parametrize("doctor", [
    lambda d: {**d, "audit_path": [("00" * 32)] + d["audit_path"][1:]},
    lambda d: {**d, "audit_path": d["audit_path"][:-1]},
    lambda d: {**d, "leaf_index": d["leaf_index"] ^ 1},
])
def test_doctored_proof(env, tmp_path, doctor):
    txns = env.grow(6)
    env.proxy.mutators["/v1/proof"] = doctor
    code, out = run(env, tmp_path, "verify-inclusion", txns[2])
    assert code == EXIT_FAIL and out.startswith("INVALID PROOF")


def test_doctored_entry_bytes_detected(env, tmp_path):
    txns = env.grow(4)

    def swap(doc):
        other = env.broker.entries(txns[1])["entries"][0]
        return {**doc, "entries": [{**doc["entries"][0], "leaf_b64": other["leaf_b64"]}]}

    env.proxy.mutators[f"/v1/entries/{txns[0]}"] = swap
    code, out = run(env, tmp_path, "verify-inclusion", txns[0])
    assert code == EXIT_FAIL and out.startswith("INVALID ENTRY")


def test_transport_error(env, tmp_path):
    env.proxy.offline = True
    code, out = run(env, tmp_path, "sth")
    assert code == EXIT_TRANSPORT and out.startswith("TRANSPORT ERROR")


def test_consistency_from_empty_then_growth(env, tmp_path):
    assert run(env, tmp_path, "consistency") == (EXIT_OK, "CONSISTENT 0 -> 0")
    env.grow(4)
    assert run(env, tmp_path, "consistency") == (EXIT_OK, "CONSISTENT 0 -> 4")
    env.grow(3)
    assert run(env, tmp_path, "consistency") == (EXIT_OK, "CONSISTENT 4 -> 7")


def test_doctored_consistency_proof(env, tmp_path):
    env.grow(4)
    run(env, tmp_path, "consistency")
    env.grow(3)
    env.proxy.mutators["/v1/consistency"] = lambda d: {**d, "path": ["11" * 32] + d["path"][1:]}
    code, out = run(env, tmp_path, "consistency")
    assert code == EXIT_FAIL and out.startswith("INCONSISTENT: tree 4 is not a prefix of 7")


def test_watch_honest_growth_has_no_alerts(env, tmp_path):
    class Growing(Proxy):
        def handler(self, request):
            if request.url.path == "/v1/sth":
                env.grow(2)
            return super().handler(request)

    proxy = Growing(env.proxy.upstream)
    code, out = run(env, tmp_path, "watch", "--interval", "0", "--cycles", "10", http=proxy.client())
    lines = out.splitlines()
    assert code == EXIT_OK
    assert len(lines) == 11 and not any(line.startswith("ALERT") for line in lines)
    assert lines[-1] == "watch finished: 10 cycles, 0 alerts"
    assert lines[0] == "CONSISTENT 0 -> 2" and lines[9] == "CONSISTENT 18 -> 20"


def test_watch_detects_rollback_after_truncated_restart(tmp_path):
    env = Env(tmp_path / "broker")
    state = tmp_path / "audit"
    try:
        env.grow(6)
        assert run(env, state, "consistency")[0] == EXIT_OK
        keep = env.broker.ledger.size - 3
        env.broker.close()
        truncate_ledger(env.data_dir, keep)
        env.start()
        env.broker.publish_sth()
        code, out = run(env, state, "watch", "--interval", "0", "--cycles", "1")
        assert code == EXIT_FAIL
        assert out.splitlines()[0] == "ALERT ROLLBACK: tree_size went from 6 to 3"
        # After regrowth past the old size the fork is still visible.
        env.grow(5)
        code, out = run(env, state, "consistency")
        assert code == EXIT_FAIL and out.startswith("INCONSISTENT")
    finally:
        env.broker.close()


def test_stored_sths_never_replaced(env, tmp_path):
    env.grow(2)
    run(env, tmp_path, "sth")
    run(env, tmp_path, "sth")
    env.grow(1)
    run(env, tmp_path, "sth")
    assert [s.tree_size for s in AuditorState(tmp_path).history()] == [2, 3]


def test_replaying_recorded_fixtures_reproduces_output(env, tmp_path):
    txns = env.grow(4)
    script = [["sth"], ["verify-inclusion", txns[1]], ["consistency"], ["verify-inclusion", "txn_nope"],
              ["--json", "verify-inclusion", txns[3]]]
    first = [run(env, tmp_path / "live", *args) for args in script]
    recorded = list(env.proxy.log)

    replay = iter(recorded)

    def handler(request):
        method, url, status, content = next(replay)
        assert (method, url) == (request.method, str(request.url))
        return httpx.Response(status, content=content, headers={"content-type": "application/json"})

    http = httpx.Client(transport=httpx.MockTransport(handler), base_url=BASE)
    env.broker.close()
    second = [run(env, tmp_path / "replay", *args, http=http) for args in script]
    assert second == first
    assert Path(tmp_path / "live" / "verification.log").read_text() == \
        Path(tmp_path / "replay" / "verification.log").read_text()


def test_library_api_without_cli(env, tmp_path):
    txns = env.grow(3)
    auditor = Auditor(BrokerClient(env.proxy.client()), AuditorState(tmp_path))
    assert auditor.cmd_verify_inclusion(txns[2]).details == {"leaf_index": 2, "tree_size": 3, "txn_id": txns[2]}
    auditor.state.close()


def test_console_script_entry_point():
    from importlib.metadata import entry_points

    scripts = {ep.name: ep.value for ep in entry_points(group="console_scripts")}
    assert scripts.get("aegon-audit") == "aegon.auditor:main"
