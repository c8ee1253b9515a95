"""License tokens: ES256 JWTs carrying the ``aegon_*`` claim set.

Issuance records a ``license_issued`` ledger entry before the token is
handed out, so every live token is committed to the Merkle log.
Validation needs only the token, a JWKS document, the expected audience
and the current time.
"""

from __future__ import annotations

import base64
import json
import random
import threading
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, fields
from urllib.parse import urlsplit

from aegon import jose
from aegon.canonical import canonical_encode
from aegon.errors import Rejected, ValidationError
from aegon.keys import TOKEN_SIGNING, BrokerKeySet, build_jwks, find_jwk
from aegon.ledger import LICENSE_ISSUED, Ledger, LedgerEntry

AEGON_VERSION = "1.0"
SUPPORTED_VERSIONS = frozenset({AEGON_VERSION})

SCOPES = frozenset(
    {"metadata_only", "excerpt", "full_article_html", "structured_json", "training_corpus"}
)
LICENSE_TYPES = frozenset({"single_use", "session", "time_bound_cache", "training_corpus"})

SINGLE_USE_TTL = 300
DEFAULT_TTLS = {
    "single_use": SINGLE_USE_TTL,
    "session": 3600,
    "time_bound_cache": 86400,
    "training_corpus": 86400,
}
MAX_TTL = max(DEFAULT_TTLS.values())

REASONS = (
    "bad_signature",
    "expired",
    "wrong_audience",
    "unknown_kid",
    "malformed",
    "unsupported_version",
    "invalid_claims",
)

# Claims handled as JSON types; value is the accepted python type.
_REQUIRED = {
    "iss": str,
    "sub": str,
    "aud": str,
    "exp": int,
    "iat": int,
    "jti": str,
    "aegon_version": str,
    "aegon_resource_url": str,
    "aegon_scope": str,
    "aegon_license_type": str,
    "aegon_training_allowed": bool,
    "aegon_attribution_required": bool,
}


class TokenRejected(Rejected):
    code = "token_rejected"


@dataclass(frozen=True)
class LicenseClaims:
    iss: str
    sub: str
    aud: str
    exp: int
    iat: int
    jti: str
    aegon_version: str
    aegon_resource_url: str
    aegon_scope: str
    aegon_license_type: str
    aegon_training_allowed: bool
    aegon_attribution_required: bool
    aegon_provenance_required: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> LicenseClaims:
        """Strict parse; raises TokenRejected('invalid_claims') on any schema problem."""
        if not isinstance(doc, dict):
            raise TokenRejected("invalid_claims", "claims must be a JSON object")
        for name, kind in _REQUIRED.items():
            value = doc.get(name)
            if kind is int:
                ok = isinstance(value, int) and not isinstance(value, bool)
            else:
                ok = isinstance(value, kind)
            if not ok:
                raise TokenRejected("invalid_claims", f"claim {name} missing or mistyped")
        prov = doc.get("aegon_provenance_required", False)
        if not isinstance(prov, bool):
            raise TokenRejected("invalid_claims", "aegon_provenance_required must be boolean")
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in doc.items() if k in known} | {"aegon_provenance_required": prov})


@dataclass(frozen=True)
class LicenseRequest:
    platform_id: str
    publisher_domain: str
    resource_url: str
    scope: str
    license_type: str
    training_allowed: bool = False
    attribution_required: bool = True
    provenance_required: bool = False
    ttl: int | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> LicenseRequest:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown request fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def new_txn_id(random_bytes: Callable[[int], bytes]) -> str:
    """``txn_`` + 128 random bits as 26 lowercase base32 characters."""
    return "txn_" + base64.b32encode(random_bytes(16)).decode("ascii").rstrip("=").lower()


def _validate_request(req: LicenseRequest) -> None:
    if req.scope not in SCOPES:
        raise ValidationError(f"invalid scope {req.scope!r}")
    if req.license_type not in LICENSE_TYPES:
        raise ValidationError(f"invalid license_type {req.license_type!r}")
    for name in ("platform_id", "publisher_domain", "resource_url"):
        if not isinstance(getattr(req, name), str) or not getattr(req, name):
            raise ValidationError(f"{name} must be a non-empty string")
    for name in ("training_allowed", "attribution_required", "provenance_required"):
        if not isinstance(getattr(req, name), bool):
            raise ValidationError(f"{name} must be boolean")
    parts = urlsplit(req.resource_url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ValidationError("resource_url must be an absolute http(s) URL")
    if req.ttl is not None and (not isinstance(req.ttl, int) or req.ttl <= 0):
        raise ValidationError("ttl must be a positive integer")


@dataclass(frozen=True)
class IssuedToken:
    token: str
    txn_id: str
    claims: LicenseClaims
    leaf_index: int


class TokenIssuer:
    """Signs license tokens and commits them to the ledger first."""

    def __init__(
        self,
        keys: BrokerKeySet,
        ledger: Ledger,
        issuer: str = "broker.aegon.ai",
        rng: random.Random | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.keys = keys
        self.ledger = ledger
        self.issuer = issuer
        self.clock = clock
        self._random_bytes = jose.random_bytes_from(rng)
        self._rng_lock = threading.Lock()

    def issue_token(self, request: LicenseRequest | dict, now: int | None = None) -> IssuedToken:
        req = LicenseRequest.from_dict(request) if isinstance(request, dict) else request
        _validate_request(req)
        now = int(self.clock()) if now is None else int(now)
        ttl = min(req.ttl or DEFAULT_TTLS[req.license_type], DEFAULT_TTLS[req.license_type])
        with self._rng_lock:
            txn_id = new_txn_id(self._random_bytes)
        claims = LicenseClaims(
            iss=self.issuer,
            sub=req.platform_id,
            aud=req.publisher_domain,
            exp=now + ttl,
            iat=now,
            jti=txn_id,
            aegon_version=AEGON_VERSION,
            aegon_resource_url=req.resource_url,
            aegon_scope=req.scope,
            aegon_license_type=req.license_type,
            aegon_training_allowed=req.training_allowed,
            aegon_attribution_required=req.attribution_required,
            aegon_provenance_required=req.provenance_required,
        )
        key = self.keys.active(TOKEN_SIGNING)
        # Raises on failure, in which case no token ever leaves this function.
        leaf_index = self.ledger.append(
            LedgerEntry.create(txn_id, LICENSE_ISSUED, {"claims": claims.to_dict(), "kid": key.kid}, now)
        )
        token = jose.jws_sign(canonical_encode(claims.to_dict()), key.private_key, typ="JWT", kid=key.kid)
        return IssuedToken(token=token, txn_id=txn_id, claims=claims, leaf_index=leaf_index)

    def jwks(self) -> dict:
        return build_jwks(self.keys)


def validate_token(token: str, jwks: dict, expected_aud: str, now: float) -> LicenseClaims:
    """Return the claims of a valid token or raise TokenRejected with a reason code.

    Checks run in a fixed order: structure, kid, signature, claim types,
    expiry, audience, version, enumerations and TTL bounds.
    """
    try:
        decoded = jose.jws_decode(token)
    except jose.JwsError as exc:
        raise TokenRejected("malformed", str(exc)) from None
    kid = decoded.header.get("kid")
    if decoded.header.get("typ", "JWT") != "JWT" or not isinstance(kid, str):
        raise TokenRejected("malformed", "header needs typ JWT and a string kid")
    jwk = find_jwk(jwks, kid, TOKEN_SIGNING)
    if jwk is None:
        raise TokenRejected("unknown_kid", f"kid {kid} not in JWKS")
    try:
        public_key = jose.jwk_to_public_key(jwk)
    except jose.JwsError:
        raise TokenRejected("unknown_kid", f"kid {kid} has an unusable JWK") from None
    if not jose.jws_verify(decoded, public_key):
        raise TokenRejected("bad_signature")
    try:
        payload = json.loads(decoded.payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise TokenRejected("malformed", "payload is not JSON") from None

    claims = LicenseClaims.from_dict(payload)
    if now >= claims.exp:
        raise TokenRejected("expired")
    if claims.aud != expected_aud:
        raise TokenRejected("wrong_audience", f"aud {claims.aud!r} != {expected_aud!r}")
    if claims.aegon_version not in SUPPORTED_VERSIONS:
        raise TokenRejected("unsupported_version", claims.aegon_version)
    if claims.aegon_scope not in SCOPES or claims.aegon_license_type not in LICENSE_TYPES:
        raise TokenRejected("invalid_claims", "scope or license_type outside the licensing model")
    if not claims.jti.startswith("txn_"):
        raise TokenRejected("invalid_claims", "jti is not a transaction id")
    if claims.exp <= claims.iat:
        raise TokenRejected("invalid_claims", "exp must follow iat")
    if claims.aegon_license_type == "single_use" and claims.exp - claims.iat > SINGLE_USE_TTL:
        raise TokenRejected("invalid_claims", "single_use token lives longer than 300 s")
    return claims
