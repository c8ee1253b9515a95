"""Broker key store: token-signing and STH-signing P-256 keys with rotation."""

from __future__ import annotations

import json
import os
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric import ec

from aegon import jose
from aegon.errors import KeyUnavailableError, NotFoundError

TOKEN_SIGNING = "token_signing"
STH_SIGNING = "sth_signing"
PURPOSES = (TOKEN_SIGNING, STH_SIGNING)
_KID_PREFIX = {TOKEN_SIGNING: "tok", STH_SIGNING: "sth"}

# Non-standard JWK member telling verifiers which role a key plays.
PURPOSE_MEMBER = "aegon_key_purpose"


@dataclass
class ManagedKey:
    kid: str
    purpose: str
    private_key: ec.EllipticCurvePrivateKey
    status: str = "active"
    created_at: float = 0.0
    # Public half stays published until this time once retired.
    publish_until: float | None = None

    @property
    def public_key(self) -> ec.EllipticCurvePublicKey:
        return self.private_key.public_key()

    def public_jwk(self) -> dict:
        jwk = jose.public_jwk(self.public_key, self.kid)
        jwk.update({"use": "sig", "alg": "ES256", PURPOSE_MEMBER: self.purpose})
        return jwk


@dataclass
class BrokerKeySet:
    """Exactly one active key per purpose; retired keys linger for verification."""

    keys: list[ManagedKey] = field(default_factory=list)
    path: Path | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def generate(
        cls, now: float = 0.0, rng: random.Random | None = None, path: Path | None = None
    ) -> BrokerKeySet:
        keyset = cls(path=path)
        for purpose in PURPOSES:
            keyset._add(purpose, jose.generate_key(rng), now)
        keyset.save()
        return keyset

    @classmethod
    def load_or_generate(cls, path: str | Path, now: float = 0.0) -> BrokerKeySet:
        path = Path(path)
        if path.exists():
            return cls.load(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return cls.generate(now=now, path=path)

    def _add(self, purpose: str, private_key: ec.EllipticCurvePrivateKey, now: float) -> ManagedKey:
        jwk = jose.public_jwk(private_key.public_key())
        kid = f"{_KID_PREFIX[purpose]}-{jose.jwk_thumbprint(jwk)[:16]}"
        key = ManagedKey(kid=kid, purpose=purpose, private_key=private_key, created_at=now)
        self.keys.append(key)
        return key

    def active(self, purpose: str) -> ManagedKey:
        for key in self.keys:
            if key.purpose == purpose and key.status == "active":
                return key
        raise KeyUnavailableError(f"no active {purpose} key")

    def get(self, kid: str) -> ManagedKey:
        for key in self.keys:
            if key.kid == kid:
                return key
        raise NotFoundError(f"unknown kid {kid}")

    def rotate(
        self,
        purpose: str,
        now: float,
        retain_for: float,
        rng: random.Random | None = None,
    ) -> ManagedKey:
        """Retire the active key (published for ``retain_for`` more seconds) and activate a new one."""
        with self._lock:
            for key in self.keys:
                if key.purpose == purpose and key.status == "active":
                    key.status = "retired"
                    key.publish_until = now + retain_for
            new = self._add(purpose, jose.generate_key(rng), now)
            self.save()
            return new

    def prune(self, now: float) -> list[str]:
        """Drop retired keys whose tokens have all expired."""
        with self._lock:
            gone = [
                k.kid for k in self.keys
                if k.status == "retired" and k.publish_until is not None and k.publish_until <= now
            ]
            self.keys = [k for k in self.keys if k.kid not in gone]
            if gone:
                self.save()
            return gone

    def jwks(self) -> dict:
        with self._lock:
            return {"keys": [k.public_jwk() for k in self.keys]}

    def save(self) -> None:
        if self.path is None:
            return
        doc = [
            {
                "kid": k.kid,
                "purpose": k.purpose,
                "status": k.status,
                "created_at": k.created_at,
                "publish_until": k.publish_until,
                "private_pem": jose.private_key_pem(k.private_key),
            }
            for k in self.keys
        ]
        tmp = self.path.with_suffix(".tmp")
        # Private key material: owner-only from the moment the file exists.
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(json.dumps(doc, indent=1))
        tmp.replace(self.path)

    @classmethod
    def load(cls, path: str | Path) -> BrokerKeySet:
        path = Path(path)
        keys = [
            ManagedKey(
                kid=item["kid"],
                purpose=item["purpose"],
                private_key=jose.load_private_key_pem(item["private_pem"]),
                status=item["status"],
                created_at=item["created_at"],
                publish_until=item["publish_until"],
            )
            for item in json.loads(path.read_text())
        ]
        return cls(keys=keys, path=path)


def build_jwks(keys: BrokerKeySet) -> dict:
    """JWKS document with every published public key; never private material."""
    return keys.jwks()


def find_jwk(jwks: dict, kid: str, purpose: str | None = None) -> dict | None:
    for jwk in jwks.get("keys", []) if isinstance(jwks, dict) else []:
        if not isinstance(jwk, dict) or jwk.get("kid") != kid:
            continue
        if purpose is not None and jwk.get(PURPOSE_MEMBER, purpose) != purpose:
            continue
        return jwk
    return None
