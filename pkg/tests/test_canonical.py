import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from aegon.canonical import canonical_decode, canonical_encode
from aegon.errors import EncodingError

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**63), 2**63) | st.text(max_size=10),
    lambda children: st.lists(children, max_size=4) | st.dictionaries(st.text(max_size=6), children, max_size=4),
    max_leaves=20,
)


def test_known_encoding():
    assert canonical_encode({"b": 1, "a": [True, None, "é"]}) == '{"a":[true,null,"é"],"b":1}'.encode()


@given(json_values)
def test_round_trip(value):
    data = canonical_encode(value)
    assert canonical_decode(data) == value
    assert canonical_encode(canonical_decode(data)) == data


@given(st.dictionaries(st.text(max_size=5), st.integers(), max_size=6))
def test_key_order_does_not_matter(d):
    reordered = dict(reversed(list(d.items())))
    assert canonical_encode(d) == canonical_encode(reordered)


@pytest.mark.parametrize("bad", [1.5, {"x": 0.1}, {1: "a"}, b"bytes", {"s": {1, 2}}, "\ud800"])
def test_rejects_unstable_values(bad):
    with pytest.raises(EncodingError):
        canonical_encode(bad)


@pytest.mark.parametrize("text", ['{"b":1,"a":2}', '{"a": 1}', '[1, 2]', '"\\u00e9"', "not json"])
def test_decode_rejects_non_canonical(text):
    with pytest.raises(EncodingError):
        canonical_decode(text.encode())


def test_decode_matches_json():
    doc = {"z": [1, {"y": None}], "a": "ü"}
    assert canonical_decode(canonical_encode(doc)) == json.loads(json.dumps(doc))
