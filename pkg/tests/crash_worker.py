"""Child process for the crash-consistency check.

Usage: crash_worker.py DATA_DIR TOTAL STH_EVERY

Recovers the ledger in DATA_DIR and keeps appending the deterministic entry
for each next index until TOTAL. Reports progress on stdout so the parent can
pick its kill points: ``R size`` after recovery, ``A size`` after each
append, ``S sth-json`` after each durable STH, ``D`` when finished.
"""

import json
import sys
from pathlib import Path

from aegon.keys import BrokerKeySet
from aegon.ledger import LICENSE_ISSUED, Ledger, LedgerEntry, SthPolicy

T0 = 1_780_000_000


def entry(i: int) -> LedgerEntry:
    return LedgerEntry.create(f"txn_{i:08d}", LICENSE_ISSUED, {"n": i, "pad": "x" * (i % 37)}, T0 + i)


def main() -> None:
    data_dir, total, sth_every = Path(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
    keys = BrokerKeySet.load_or_generate(data_dir / "keys.json", now=T0)
    ledger = Ledger(data_dir, keys=keys, clock=lambda: T0, fsync=True,
                    sth_policy=SthPolicy(interval=10**9, max_appends=10**9))
    out = sys.stdout
    out.write(f"R {ledger.size}\n")
    out.flush()
    for i in range(ledger.size, total):
        ledger.append(entry(i))
        out.write(f"A {i + 1}\n")
        if (i + 1) % sth_every == 0:
            out.write("S " + json.dumps(ledger.publish_sth().to_json()) + "\n")
        out.flush()
    ledger.close()
    out.write("D\n")
    out.flush()


if __name__ == "__main__":
    main()
