import random

import jwt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aegon import jose
from aegon.canonical import canonical_encode


@pytest.fixture
def key():
    return jose.generate_key(random.Random(7))


@given(st.binary(max_size=64))
def test_b64url_round_trip(data):
    text = jose.b64url_encode(data)
    assert "=" not in text
    assert jose.b64url_decode(text) == data


@pytest.mark.parametrize("text", ["YQ==", "YR", "a+b/", "Y", "€"])
def test_b64url_rejects_padding_and_non_canonical(text):
    with pytest.raises(jose.JwsError):
        jose.b64url_decode(text)


def test_seeded_keys_are_reproducible():
    a = jose.public_jwk(jose.generate_key(random.Random(1)).public_key())
    b = jose.public_jwk(jose.generate_key(random.Random(1)).public_key())
    assert a == b


def test_signing_is_deterministic(key):
    assert jose.jws_sign(b"{}", key, typ="x") == jose.jws_sign(b"{}", key, typ="x")


def test_sign_verify_and_tamper(key):
    token = jose.jws_sign(b'{"a":1}', key, kid="k1")
    decoded = jose.jws_decode(token)
    assert decoded.header == {"alg": "ES256", "kid": "k1"}
    assert jose.jws_verify(decoded, key.public_key())
    h, p, s = token.split(".")
    other = jose.b64url_encode(b'{"a":2}')
    assert not jose.jws_verify(jose.jws_decode(f"{h}.{other}.{s}"), key.public_key())
    stranger = jose.generate_key(random.Random(8))
    assert not jose.jws_verify(decoded, stranger.public_key())


@pytest.mark.parametrize("token", ["a.b", "a.b.c.d", 5])
def test_decode_rejects_bad_shapes(token):
    with pytest.raises(jose.JwsError):
        jose.jws_decode(token)


def test_decode_rejects_other_algorithms(key):
    hdr = jose.b64url_encode(canonical_encode({"alg": "none"}))
    with pytest.raises(jose.JwsError):
        jose.jws_decode(f"{hdr}.{jose.b64url_encode(b'{}')}.")


def test_wrong_signature_length_fails(key):
    assert not jose.verify_es256(key.public_key(), b"m", b"\x00" * 63)


def test_jwk_round_trip_and_thumbprint(key):
    jwk = jose.public_jwk(key.public_key(), kid="k")
    assert jose.jwk_to_public_key(jwk).public_numbers() == key.public_key().public_numbers()
    # Thumbprint ignores non-required members.
    assert jose.jwk_thumbprint(jwk) == jose.jwk_thumbprint({k: jwk[k] for k in ("kty", "crv", "x", "y")})
    assert len(jose.jwk_thumbprint(jwk)) == 43


def test_pem_round_trip(key):
    loaded = jose.load_private_key_pem(jose.private_key_pem(key))
    assert loaded.private_numbers() == key.private_numbers()


def test_interoperates_with_pyjwt(key):
    """An independent JOSE implementation accepts our tokens and we accept its."""
    jwk = jose.public_jwk(key.public_key(), kid="k1")
    ours = jose.jws_sign(canonical_encode({"sub": "x"}), key, typ="JWT", kid="k1")
    assert jwt.decode(ours, jwt.PyJWK(jwk).key, algorithms=["ES256"]) == {"sub": "x"}
    theirs = jwt.encode({"sub": "y"}, key, algorithm="ES256", headers={"kid": "k1"})
    decoded = jose.jws_decode(theirs)
    assert jose.jws_verify(decoded, key.public_key())
    assert decoded.json_payload() == {"sub": "y"}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 85), st.integers(0, 7))
def test_single_bit_flip_in_signature_segment_fails(pos, bit):
    key = jose.generate_key(random.Random(3))
    token = jose.jws_sign(b"{}", key)
    h, p, s = token.split(".")
    sig = bytearray(jose.b64url_decode(s))
    sig[pos % 64] ^= 1 << bit
    tampered = f"{h}.{p}.{jose.b64url_encode(bytes(sig))}"
    assert not jose.jws_verify(jose.jws_decode(tampered), key.public_key())
