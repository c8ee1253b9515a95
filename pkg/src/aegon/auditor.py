"""Independent auditor: fetch STHs and proofs, verify everything locally.

The auditor never trusts a verdict computed by the broker. Leaf hashes are
recomputed from raw entry bytes and every proof goes through the pure
verifiers in ``aegon.ledger``. Accepted STHs are kept in an append-only
local history used to detect equivocation and rollback.

Exit codes: 0 ok, 1 verification failure, 2 not found, 3 transport error.
"""

from __future__ import annotations

import json
import sys
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import click
import httpx

from aegon import jose
from aegon.canonical import canonical_decode, canonical_encode
from aegon.client import BrokerClient, BrokerError
from aegon.errors import AegonError
from aegon.ledger import (
    LICENSE_ISSUED,
    ConsistencyProof,
    InclusionProof,
    LedgerEntry,
    SignedTreeHead,
    verify_consistency,
    verify_inclusion,
    verify_sth,
)
from aegon.merkle import leaf_hash
from aegon.recordlog import RecordLog

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NOT_FOUND = 2
EXIT_TRANSPORT = 3


@dataclass
class Verdict:
    exit_code: int
    message: str
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.exit_code == EXIT_OK

    def to_json(self) -> dict:
        return {"ok": self.ok, "exit_code": self.exit_code, "message": self.message, **self.details}


class AuditFailure(Exception):
    def __init__(self, exit_code: int, message: str, **details):
        super().__init__(message)
        self.verdict = Verdict(exit_code, message, details)


class AuditorState:
    """STH history (record-log file) plus a plain-text verification log."""

    def __init__(self, state_dir: str | Path):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._log = RecordLog(self.state_dir / "sth_history.aegl")
        self._history = [SignedTreeHead.from_json(canonical_decode(r)) for r in self._log.records()]
        self.log_path = self.state_dir / "verification.log"

    def history(self) -> list[SignedTreeHead]:
        return list(self._history)

    def largest(self) -> SignedTreeHead | None:
        return max(self._history, key=lambda s: (s.tree_size, s.timestamp), default=None)

    def equivocating_with(self, sth: SignedTreeHead) -> SignedTreeHead | None:
        for old in self._history:
            if old.tree_size == sth.tree_size and old.root_hash != sth.root_hash:
                return old
        return None

    def store(self, sth: SignedTreeHead) -> bool:
        if sth in self._history:
            return False
        self._log.append(canonical_encode(sth.to_json()))
        self._history.append(sth)
        return True

    def log(self, verdict: Verdict) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(verdict.to_json(), sort_keys=True) + "\n")

    def close(self) -> None:
        self._log.close()


class Auditor:
    def __init__(self, client: BrokerClient, state: AuditorState):
        self.client = client
        self.state = state

    def _call(self, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except httpx.TransportError as exc:
            raise AuditFailure(EXIT_TRANSPORT, f"TRANSPORT ERROR: {exc}") from None
        except BrokerError as exc:
            if exc.status == 404:
                raise AuditFailure(EXIT_NOT_FOUND, f"NOT FOUND: {exc}") from None
            raise AuditFailure(EXIT_FAIL, f"BROKER ERROR {exc.status} {exc.code}: {exc}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise AuditFailure(EXIT_FAIL, f"MALFORMED RESPONSE: {exc}") from None

    def fetch_sth(self) -> tuple[SignedTreeHead, dict]:
        """Fetch, signature-check and equivocation-check the broker's current STH."""
        jwks = self._call(self.client.jwks)
        try:
            sth = SignedTreeHead.from_json(self._call(self.client.sth))
        except AegonError as exc:
            raise AuditFailure(EXIT_FAIL, f"bad STH: {exc}") from None
        if not verify_sth(sth, jwks):
            raise AuditFailure(EXIT_FAIL, "bad STH signature", tree_size=sth.tree_size)
        other = self.state.equivocating_with(sth)
        if other is not None:
            raise AuditFailure(
                EXIT_FAIL,
                f"equivocation: two roots for tree_size {sth.tree_size}",
                tree_size=sth.tree_size,
                root_hashes=[other.root_hash.hex(), sth.root_hash.hex()],
            )
        return sth, jwks

    def _run(self, fn: Callable[[], Verdict]) -> Verdict:
        try:
            verdict = fn()
        except AuditFailure as exc:
            verdict = exc.verdict
        self.state.log(verdict)
        return verdict

    def cmd_sth(self) -> Verdict:
        def go() -> Verdict:
            sth, _ = self.fetch_sth()
            self.state.store(sth)
            return Verdict(EXIT_OK, f"STH OK tree_size {sth.tree_size} root {sth.root_hash.hex()}",
                           {"sth": sth.to_json()})
        return self._run(go)

    def cmd_verify_inclusion(self, txn_id: str) -> Verdict:
        def go() -> Verdict:
            sth, jwks = self.fetch_sth()
            self.state.store(sth)
            doc = self._call(self.client.entries, txn_id)
            licensed = [e for e in doc["entries"] if e.get("entry_type") == LICENSE_ISSUED]
            if not licensed:
                raise AuditFailure(EXIT_NOT_FOUND, f"NOT FOUND: no license_issued entry for {txn_id}")
            raw = jose.b64url_decode(licensed[0]["leaf_b64"])
            entry = LedgerEntry.from_leaf_bytes(raw)
            if entry.txn_id != txn_id or entry.entry_type != LICENSE_ISSUED:
                raise AuditFailure(EXIT_FAIL, "INVALID ENTRY: bytes do not describe this transaction")
            index = licensed[0]["leaf_index"]
            if index >= sth.tree_size:
                raise AuditFailure(EXIT_FAIL, f"NOT YET COMMITTED: leaf {index} beyond tree_size {sth.tree_size}")
            proof = InclusionProof.from_json(
                self._call(self.client.proof, txn_id=txn_id, tree_size=sth.tree_size)
            )
            if proof.leaf_index != index:
                raise AuditFailure(EXIT_FAIL, "INVALID PROOF: proof is for a different leaf")
            try:
                ok = verify_inclusion(proof, leaf_hash(raw), sth, jwks)
            except AegonError:
                ok = False
            if not ok:
                raise AuditFailure(EXIT_FAIL, "INVALID PROOF", leaf_index=index, tree_size=sth.tree_size)
            return Verdict(EXIT_OK, f"INCLUDED at index {index}, tree_size {sth.tree_size}",
                           {"leaf_index": index, "tree_size": sth.tree_size, "txn_id": txn_id})
        return self._run(go)

    def _check_growth(self) -> Verdict:
        new, jwks = self.fetch_sth()
        old = self.state.largest()
        if old is not None and new.tree_size < old.tree_size:
            raise AuditFailure(EXIT_FAIL, f"ROLLBACK: tree_size went from {old.tree_size} to {new.tree_size}",
                               old_size=old.tree_size, new_size=new.tree_size)
        if old is not None:
            proof = ConsistencyProof.from_json(self._call(self.client.consistency, old.tree_size, new.tree_size))
            try:
                ok = verify_consistency(proof, old, new, jwks)
            except AegonError:
                ok = False
            if not ok:
                raise AuditFailure(EXIT_FAIL, f"INCONSISTENT: tree {old.tree_size} is not a prefix of {new.tree_size}",
                                   old_size=old.tree_size, new_size=new.tree_size)
        self.state.store(new)
        old_size = old.tree_size if old is not None else 0
        return Verdict(EXIT_OK, f"CONSISTENT {old_size} -> {new.tree_size}",
                       {"old_size": old_size, "new_size": new.tree_size})

    def cmd_consistency(self) -> Verdict:
        return self._run(self._check_growth)

    def cmd_watch(
        self,
        interval: float = 60.0,
        cycles: int | None = None,
        sleep: Callable[[float], None] = time.sleep,
        emit: Callable[[Verdict], None] = lambda v: None,
    ) -> Verdict:
        alerts = 0
        n = 0
        try:
            while cycles is None or n < cycles:
                if n:
                    sleep(interval)
                verdict = self._run(self._check_growth)
                if not verdict.ok:
                    alerts += 1
                    verdict = Verdict(verdict.exit_code, "ALERT " + verdict.message, verdict.details)
                emit(verdict)
                n += 1
        except KeyboardInterrupt:
            pass
        code = EXIT_FAIL if alerts else EXIT_OK
        return Verdict(code, f"watch finished: {n} cycles, {alerts} alerts", {"cycles": n, "alerts": alerts})


# -- command line --------------------------------------------------------------


def _emit(verdict: Verdict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(verdict.to_json(), sort_keys=True))
    else:
        click.echo(verdict.message)


def _auditor(ctx: click.Context) -> Auditor:
    obj = ctx.obj
    if "auditor" not in obj:
        http = obj.get("http") or httpx.Client(base_url=obj["broker"], timeout=10.0)
        obj["auditor"] = Auditor(BrokerClient(http), AuditorState(obj["state_dir"]))
    return obj["auditor"]


@click.group()
@click.option("--broker", default="http://127.0.0.1:8700", envvar="AEGON_BROKER", show_default=True)
@click.option("--state-dir", default="./aegon-audit", envvar="AEGON_AUDIT_STATE", show_default=True)
@click.option("--json", "as_json", is_flag=True, help="machine-readable output")
@click.pass_context
def cli(ctx: click.Context, broker: str, state_dir: str, as_json: bool) -> None:
    """Verify an Aegon broker's transparency log."""
    ctx.ensure_object(dict)
    ctx.obj.update(broker=broker, state_dir=state_dir, as_json=as_json)


@cli.command()
@click.pass_context
def sth(ctx: click.Context) -> None:
    """Fetch, verify and store the current STH."""
    verdict = _auditor(ctx).cmd_sth()
    _emit(verdict, ctx.obj["as_json"])
    ctx.exit(verdict.exit_code)


@cli.command("verify-inclusion")
@click.argument("txn_id")
@click.pass_context
def verify_inclusion_cmd(ctx: click.Context, txn_id: str) -> None:
    """Verify that TXN_ID's license entry is committed under the current STH."""
    verdict = _auditor(ctx).cmd_verify_inclusion(txn_id)
    _emit(verdict, ctx.obj["as_json"])
    ctx.exit(verdict.exit_code)


@cli.command()
@click.pass_context
def consistency(ctx: click.Context) -> None:
    """Check the current STH extends the largest stored STH."""
    verdict = _auditor(ctx).cmd_consistency()
    _emit(verdict, ctx.obj["as_json"])
    ctx.exit(verdict.exit_code)


@cli.command()
@click.option("--interval", default=60.0, show_default=True, help="seconds between checks")
@click.option("--cycles", default=None, type=int, help="stop after N checks (default: run forever)")
@click.pass_context
def watch(ctx: click.Context, interval: float, cycles: int | None) -> None:
    """Poll the broker and alert on any consistency failure."""
    as_json = ctx.obj["as_json"]
    sleep = ctx.obj.get("sleep", time.sleep)
    verdict = _auditor(ctx).cmd_watch(interval, cycles, sleep=sleep, emit=lambda v: _emit(v, as_json))
    _emit(verdict, as_json)
    ctx.exit(verdict.exit_code)


def main(argv: list[str] | None = None) -> None:
    cli.main(args=argv, prog_name="aegon-audit", obj={})


if __name__ == "__main__":
    main(sys.argv[1:])
