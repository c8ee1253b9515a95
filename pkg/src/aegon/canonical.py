"""Deterministic JSON encoding used for every signed or hashed structure.

Keys are sorted, separators carry no whitespace, text is UTF-8 and only
strings, integers, booleans, null, lists and string-keyed objects are
allowed. Floats are refused because their textual form is not stable.
"""

from __future__ import annotations

import json
from typing import Any

from aegon.errors import EncodingError


def _check(value: Any, path: str) -> None:
    if value is None or isinstance(value, (bool, int, str)):
        if isinstance(value, str):
            try:
                value.encode("utf-8")
            except UnicodeEncodeError as exc:
                raise EncodingError(f"{path}: not valid UTF-8 text") from exc
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise EncodingError(f"{path}: object key {key!r} is not a string")
            _check(key, path)
            _check(item, f"{path}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    raise EncodingError(f"{path}: {type(value).__name__} is not encodable")


def canonical_encode(record: Any) -> bytes:
    """Encode ``record`` to its canonical byte string."""
    _check(record, "$")
    text = json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return text.encode("utf-8")


def canonical_decode(data: bytes) -> Any:
    """Parse canonical bytes, rejecting anything that would not re-encode identically."""
    try:
        value = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(f"not canonical JSON: {exc}") from exc
    if canonical_encode(value) != data:
        raise EncodingError("bytes are valid JSON but not in canonical form")
    return value
