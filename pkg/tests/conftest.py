import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aegon.clock import ManualClock
from aegon.keys import BrokerKeySet
from aegon.ledger import Ledger, SthPolicy

T0 = 1_780_000_000


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def clock():
    return ManualClock(T0)


@pytest.fixture
def keys(rng):
    return BrokerKeySet.generate(now=T0, rng=rng)


@pytest.fixture
def ledger(keys, clock):
    led = Ledger(keys=keys, clock=clock, sth_policy=SthPolicy(interval=60, max_appends=10**6), fsync=False)
    yield led
    led.close()


def license_request(**overrides):
    req = {
        "platform_id": "platform-alpha",
        "publisher_domain": "news.example",
        "resource_url": "https://news.example/articles/a",
        "scope": "full_article_html",
        "license_type": "single_use",
    }
    req.update(overrides)
    return req


# -- acceptance summary ---------------------------------------------------------
# Tests in test_acceptance.py tag themselves with record_property("acceptance", ...);
# the terminal summary then prints one PASS/FAIL line per criterion.

_acceptance: dict[str, dict] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    label = props.get("acceptance")
    if label is None:
        return
    row = _acceptance.setdefault(label, {"outcome": "passed", "duration": 0.0, "detail": ""})
    row["duration"] += report.duration
    if report.failed:
        row["outcome"] = "failed"
    elif report.skipped and row["outcome"] == "passed":
        row["outcome"] = "skipped"
    row["detail"] = props.get("acceptance_detail", row["detail"])


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    verdicts = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}
    for label in sorted(_acceptance, key=lambda s: int(s.split()[0])):
        row = _acceptance[label]
        line = f"{verdicts[row['outcome']]}  criterion {label}  ({row['duration']:.1f} s)"
        if row["detail"]:
            line += f"  {row['detail']}"
        terminalreporter.write_line(line)
