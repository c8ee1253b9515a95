"""Broker service: ledger, token issuance, provenance, receipts and spot-checks behind HTTP."""

from aegon.broker.app import create_app
from aegon.broker.core import Broker
from aegon.broker.spotcheck import SpotCheckResult, spot_check_select

__all__ = ["Broker", "SpotCheckResult", "create_app", "spot_check_select"]
