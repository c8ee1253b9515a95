"""Auditable AI content licensing.

Ledger-bound license tokens, an RFC 6962 Merkle audit log, signed
provenance events, attested compliance receipts and an independent auditor.
"""

from aegon.canonical import canonical_encode
from aegon.merkle import interior_hash, leaf_hash

__all__ = ["canonical_encode", "interior_hash", "leaf_hash"]
__version__ = "0.1.0"
