"""Minimal ES256 JWS/JWK support on top of ``cryptography``.

Only what the protocol needs: compact serialization, P-256 keys, raw
64-byte r||s signatures as required by RFC 7518, RFC 7638 thumbprints.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import random
from collections.abc import Callable
from dataclasses import dataclass
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)

from aegon.canonical import canonical_encode
from aegon.errors import AegonError

_CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


class JwsError(AegonError):
    code = "malformed"


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    if not isinstance(text, str):
        raise JwsError("base64url value must be text")
    try:
        raw = text.encode("ascii")
    except UnicodeEncodeError as exc:
        raise JwsError("base64url value is not ASCII") from exc
    if b"=" in raw:
        raise JwsError("base64url padding not allowed")
    try:
        data = base64.urlsafe_b64decode(raw + b"=" * (-len(raw) % 4))
    except (ValueError, binascii.Error) as exc:
        raise JwsError(f"bad base64url: {exc}") from exc
    # Non-zero trailing bits would let two strings decode to the same bytes.
    if b64url_encode(data) != text:
        raise JwsError("non-canonical base64url")
    return data


def generate_key(rng: random.Random | None = None) -> ec.EllipticCurvePrivateKey:
    """Fresh P-256 key; a seeded ``rng`` makes it reproducible (test use only)."""
    if rng is None:
        return ec.generate_private_key(ec.SECP256R1())
    scalar = rng.randrange(1, _CURVE_ORDER)
    return ec.derive_private_key(scalar, ec.SECP256R1())


def sign_es256(key: ec.EllipticCurvePrivateKey, message: bytes) -> bytes:
    # RFC 6979 nonces: no RNG dependence at signing time, reproducible transcripts.
    der = key.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify_es256(public_key: ec.EllipticCurvePublicKey, message: bytes, signature: bytes) -> bool:
    if len(signature) != 64:
        return False
    r = int.from_bytes(signature[:32], "big")
    s = int.from_bytes(signature[32:], "big")
    try:
        public_key.verify(encode_dss_signature(r, s), message, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, ValueError):
        return False
    return True


def public_jwk(public_key: ec.EllipticCurvePublicKey, kid: str | None = None) -> dict:
    numbers = public_key.public_numbers()
    jwk = {
        "kty": "EC",
        "crv": "P-256",
        "x": b64url_encode(numbers.x.to_bytes(32, "big")),
        "y": b64url_encode(numbers.y.to_bytes(32, "big")),
    }
    if kid is not None:
        jwk["kid"] = kid
    return jwk


def jwk_to_public_key(jwk: dict) -> ec.EllipticCurvePublicKey:
    if not isinstance(jwk, dict) or jwk.get("kty") != "EC" or jwk.get("crv") != "P-256":
        raise JwsError("only EC P-256 JWKs are supported")
    try:
        x = int.from_bytes(b64url_decode(jwk["x"]), "big")
        y = int.from_bytes(b64url_decode(jwk["y"]), "big")
        return ec.EllipticCurvePublicNumbers(x, y, ec.SECP256R1()).public_key()
    except (KeyError, ValueError) as exc:
        raise JwsError(f"invalid EC JWK: {exc}") from exc


def jwk_thumbprint(jwk: dict) -> str:
    """RFC 7638 SHA-256 thumbprint, base64url."""
    members = {k: jwk[k] for k in ("crv", "kty", "x", "y")}
    digest = hashlib.sha256(json.dumps(members, sort_keys=True, separators=(",", ":")).encode())
    return b64url_encode(digest.digest())


def private_key_pem(key: ec.EllipticCurvePrivateKey) -> str:
    return key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    ).decode("ascii")


def load_private_key_pem(pem: str) -> ec.EllipticCurvePrivateKey:
    key = serialization.load_pem_private_key(pem.encode("ascii"), password=None)
    if not isinstance(key, ec.EllipticCurvePrivateKey):
        raise JwsError("not an EC private key")
    return key


@dataclass(frozen=True)
class DecodedJws:
    header: dict
    payload: bytes
    signing_input: bytes
    signature: bytes

    def json_payload(self) -> Any:
        try:
            return json.loads(self.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise JwsError(f"payload is not JSON: {exc}") from exc


def jws_sign(payload: bytes, key: ec.EllipticCurvePrivateKey, **header: Any) -> str:
    """Compact JWS with ``alg`` ES256; extra keyword args become header members."""
    hdr = {"alg": "ES256", **header}
    signing_input = b64url_encode(canonical_encode(hdr)) + "." + b64url_encode(payload)
    signature = sign_es256(key, signing_input.encode("ascii"))
    return signing_input + "." + b64url_encode(signature)


def jws_decode(token: str) -> DecodedJws:
    """Split and decode a compact JWS without checking the signature."""
    if not isinstance(token, str):
        raise JwsError("token must be a string")
    parts = token.split(".")
    if len(parts) != 3:
        raise JwsError("compact JWS needs exactly three segments")
    header_raw = b64url_decode(parts[0])
    try:
        header = json.loads(header_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise JwsError(f"header is not JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise JwsError("header must be a JSON object")
    if header.get("alg") != "ES256":
        raise JwsError(f"unsupported alg {header.get('alg')!r}")
    return DecodedJws(
        header=header,
        payload=b64url_decode(parts[1]),
        signing_input=(parts[0] + "." + parts[1]).encode("ascii"),
        signature=b64url_decode(parts[2]),
    )


def jws_verify(decoded: DecodedJws, public_key: ec.EllipticCurvePublicKey) -> bool:
    return verify_es256(public_key, decoded.signing_input, decoded.signature)


def random_bytes_from(rng: random.Random | None) -> Callable[[int], bytes]:
    """Byte source: ``secrets`` in production, a seeded Random in harness runs."""
    if rng is None:
        import secrets

        return secrets.token_bytes
    return rng.randbytes
