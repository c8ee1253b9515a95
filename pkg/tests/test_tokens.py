import json
import random
import threading

import jwt
import pytest
from conftest import T0, license_request
from hypothesis import given, settings
from hypothesis import strategies as st

from aegon import jose
from aegon.canonical import canonical_encode
from aegon.errors import ValidationError
from aegon.keys import TOKEN_SIGNING, BrokerKeySet
from aegon.ledger import LICENSE_ISSUED, Ledger, entry_leaf_hash, verify_inclusion
from aegon.tokens import LicenseClaims, TokenIssuer, TokenRejected, validate_token

AUD = "news.example"


@pytest.fixture
def issuer(keys, ledger, rng, clock):
    return TokenIssuer(keys, ledger, rng=rng, clock=clock)


def reason(token, jwks, aud=AUD, now=T0 + 1):
    with pytest.raises(TokenRejected) as info:
        validate_token(token, jwks, aud, now)
    return info.value.reason


def resign(token, key, mutate=None, header=None):
    decoded = jose.jws_decode(token)
    claims = decoded.json_payload()
    if mutate:
        mutate(claims)
    hdr = {k: v for k, v in decoded.header.items() if k != "alg"}
    hdr.update(header or {})
    return jose.jws_sign(canonical_encode(claims), key, **hdr)


def test_issue_shape(issuer, keys):
    issued = issuer.issue_token(license_request(
        publisher_domain="publisher.com", resource_url="https://publisher.com/a/1",
        license_type="session", training_allowed=False))
    claims = jose.jws_decode(issued.token).json_payload()
    assert claims["aud"] == "publisher.com"
    assert claims["aegon_scope"] == "full_article_html"
    assert claims["aegon_training_allowed"] is False
    assert claims["aegon_version"] == "1.0"
    assert claims["jti"] == issued.txn_id
    assert claims["exp"] - claims["iat"] == 3600
    assert not any("hash" in k for k in claims)
    header = jose.jws_decode(issued.token).header
    assert header == {"alg": "ES256", "typ": "JWT", "kid": keys.active(TOKEN_SIGNING).kid}


def test_txn_id_format_and_uniqueness(issuer):
    ids = {issuer.issue_token(license_request()).txn_id for _ in range(50)}
    assert len(ids) == 50
    for t in ids:
        assert t.startswith("txn_") and len(t) == 30
        assert set(t[4:]) <= set("abcdefghijklmnopqrstuvwxyz234567")


@pytest.mark.parametrize("license_type,ttl", [("single_use", 300), ("session", 3600),
                                              ("time_bound_cache", 86400), ("training_corpus", 86400)])
def test_ttls(issuer, license_type, ttl):
    claims = issuer.issue_token(license_request(license_type=license_type), now=T0).claims
    assert claims.exp == T0 + ttl


def test_requested_ttl_is_capped(issuer):
    assert issuer.issue_token(license_request(ttl=10_000), now=T0).claims.exp == T0 + 300
    assert issuer.issue_token(license_request(ttl=60), now=T0).claims.exp == T0 + 60


@pytest.mark.parametrize("bad", [
    {"scope": "everything"}, {"license_type": "forever"}, {"resource_url": "ftp://x/y"},
    {"resource_url": "/relative"}, {"platform_id": ""}, {"training_allowed": "no"}, {"ttl": -5},
    {"surprise": 1},
])
def test_invalid_requests(issuer, ledger, bad):
    with pytest.raises(ValidationError):
        issuer.issue_token(license_request(**bad))
    assert ledger.size == 0


def test_ledger_append_precedes_token(issuer, ledger, keys):
    issued = issuer.issue_token(license_request())
    entry = ledger.license_entry(issued.txn_id)
    assert entry.leaf_index == issued.leaf_index
    assert entry.payload_obj["claims"] == issued.claims.to_dict()
    sth = ledger.publish_sth()
    proof = ledger.inclusion_proof(issued.txn_id, sth.tree_size)
    assert verify_inclusion(proof, entry_leaf_hash(entry), sth, keys.jwks())


def test_failed_append_returns_no_token(keys, rng):
    class Broken(Ledger):
        def append(self, entry):
            raise OSError("disk full")

    issuer = TokenIssuer(keys, Broken(), rng=rng)
    with pytest.raises(OSError):
        issuer.issue_token(license_request())


def test_round_trip(issuer, keys):
    issued = issuer.issue_token(license_request(), now=T0)
    claims = validate_token(issued.token, keys.jwks(), AUD, T0 + 1)
    assert claims == issued.claims


def test_expiry_boundary(issuer, keys):
    token = issuer.issue_token(license_request(), now=T0).token
    validate_token(token, keys.jwks(), AUD, T0 + 299)
    assert reason(token, keys.jwks(), now=T0 + 300) == "expired"
    assert reason(token, keys.jwks(), now=T0 + 301) == "expired"


def test_rejection_reasons(issuer, keys, rng):
    jwks = keys.jwks()
    token = issuer.issue_token(license_request(), now=T0).token
    key = keys.active(TOKEN_SIGNING).private_key
    assert reason(token, jwks, aud="other.example") == "wrong_audience"
    assert reason("not.a.token", jwks) == "malformed"
    assert reason(token, {"keys": []}) == "unknown_kid"
    assert reason(resign(token, key, header={"kid": "tok-nope"}), jwks) == "unknown_kid"
    sth_kid = next(k["kid"] for k in jwks["keys"] if k["kid"].startswith("sth-"))
    assert reason(resign(token, keys.get(sth_kid).private_key, header={"kid": sth_kid}), jwks) == "unknown_kid"
    assert reason(resign(token, jose.generate_key(rng)), jwks) == "bad_signature"
    assert reason(resign(token, key, lambda c: c.update(aegon_version="2.0")), jwks) == "unsupported_version"
    assert reason(resign(token, key, lambda c: c.update(aegon_scope="all")), jwks) == "invalid_claims"
    assert reason(resign(token, key, lambda c: c.pop("jti")), jwks) == "invalid_claims"
    assert reason(resign(token, key, lambda c: c.update(exp=str(c["exp"]))), jwks) == "invalid_claims"
    assert reason(resign(token, key, lambda c: c.update(exp=c["iat"] + 301)), jwks) == "invalid_claims"
    assert reason(resign(token, key, header={"typ": "other"}), jwks) == "malformed"


def test_check_order_signature_before_claims(issuer, keys, rng):
    """A forged token with broken claims reports the forgery, not the claims."""
    token = issuer.issue_token(license_request(), now=T0).token
    forged = resign(token, jose.generate_key(rng), lambda c: c.update(aegon_scope="all"))
    assert reason(forged, keys.jwks()) == "bad_signature"
    expired_wrong_aud = issuer.issue_token(license_request(publisher_domain="x.example"), now=T0).token
    assert reason(expired_wrong_aud, keys.jwks(), now=T0 + 400) == "expired"


CLAIM_CHANGES = {
    "iss": "evil", "sub": "someone", "aud": "x.example", "exp": 1, "iat": 2, "jti": "txn_other",
    "aegon_version": "1.1", "aegon_resource_url": "https://news.example/other", "aegon_scope": "excerpt",
    "aegon_license_type": "session", "aegon_training_allowed": True, "aegon_attribution_required": False,
    "aegon_provenance_required": True,
}


@pytest.mark.parametrize("field", sorted(CLAIM_CHANGES))
def test_claim_tamper_with_original_signature_fails(issuer, keys, field):
    token = issuer.issue_token(license_request(), now=T0).token
    h, p, s = token.split(".")
    claims = json.loads(jose.b64url_decode(p))
    claims[field] = CLAIM_CHANGES[field]
    tampered = f"{h}.{jose.b64url_encode(canonical_encode(claims))}.{s}"
    assert reason(tampered, keys.jwks()) == "bad_signature"


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 63), st.integers(0, 7))
def test_signature_byte_flip(pos, bit):
    keys = BrokerKeySet.generate(rng=random.Random(0))
    issuer = TokenIssuer(keys, Ledger(), rng=random.Random(1))
    token = issuer.issue_token(license_request(), now=T0).token
    h, p, s = token.split(".")
    sig = bytearray(jose.b64url_decode(s))
    sig[pos] ^= 1 << bit
    assert reason(f"{h}.{p}.{jose.b64url_encode(bytes(sig))}", keys.jwks()) == "bad_signature"


def test_rotation_keeps_old_tokens_valid(issuer, keys):
    old = issuer.issue_token(license_request(license_type="session"), now=T0).token
    keys.rotate(TOKEN_SIGNING, now=T0, retain_for=86400, rng=random.Random(2))
    new = issuer.issue_token(license_request(license_type="session"), now=T0).token
    jwks = keys.jwks()
    assert len([k for k in jwks["keys"] if k["aegon_key_purpose"] == TOKEN_SIGNING]) == 2
    validate_token(old, jwks, AUD, T0 + 10)
    validate_token(new, jwks, AUD, T0 + 10)
    assert jose.jws_decode(old).header["kid"] != jose.jws_decode(new).header["kid"]


def test_independent_jwks_consumer_accepts_tokens(issuer, keys):
    """pyjwt's JWKS parser and verifier accept both the document and the tokens."""
    issued = issuer.issue_token(license_request(), now=T0)
    jwk_set = jwt.PyJWKSet.from_dict(keys.jwks())
    kid = jose.jws_decode(issued.token).header["kid"]
    key = next(k for k in jwk_set.keys if k.key_id == kid)
    claims = jwt.decode(issued.token, key.key, algorithms=["ES256"], audience=AUD,
                        options={"verify_exp": False, "verify_iat": False})
    assert claims == issued.claims.to_dict()


def test_claims_from_dict_is_strict():
    good = {"iss": "b", "sub": "p", "aud": "a", "exp": 2, "iat": 1, "jti": "txn_x", "aegon_version": "1.0",
            "aegon_resource_url": "https://a/x", "aegon_scope": "excerpt", "aegon_license_type": "session",
            "aegon_training_allowed": False, "aegon_attribution_required": True}
    assert LicenseClaims.from_dict(good).aegon_provenance_required is False
    for bad in ({**good, "exp": True}, {**good, "aegon_training_allowed": 0}, {**good, "aegon_provenance_required": "y"}):
        with pytest.raises(TokenRejected):
            LicenseClaims.from_dict(bad)


def test_concurrent_issuance_distinct(issuer, ledger):
    out = []
    threads = [threading.Thread(target=lambda: out.extend(
        issuer.issue_token(license_request()).txn_id for _ in range(20))) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(out)) == 80
    assert ledger.size == 80
    assert all(ledger.entry(i).entry_type == LICENSE_ISSUED for i in range(80))
