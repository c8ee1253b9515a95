"""Append-only record file with per-record CRC32.

Layout (little-endian)::

    b"AEGL" | version (1 byte) | record*
    record = u32 length | payload | u32 crc32(payload)

A crash can only leave a torn final record; it is truncated away on open.
A checksum failure anywhere before the tail means the file was altered and
is reported as corruption instead of silently dropped.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
import zlib
from collections.abc import Iterator
from pathlib import Path

from aegon.errors import CorruptLogError

logger = logging.getLogger(__name__)

MAGIC = b"AEGL"
VERSION = 1
HEADER = MAGIC + bytes([VERSION])
_U32 = struct.Struct("<I")


def encode_record(payload: bytes) -> bytes:
    return _U32.pack(len(payload)) + payload + _U32.pack(zlib.crc32(payload) & 0xFFFFFFFF)


def scan_records(data: bytes) -> tuple[list[bytes], int]:
    """Parse a whole file image.

    Returns the intact payloads and the byte offset where valid data ends.
    Raises CorruptLogError for a bad header or a checksum failure that is
    followed by further data.
    """
    if len(data) < len(HEADER):
        if HEADER.startswith(data):
            return [], 0
        raise CorruptLogError("bad record-log header")
    if data[:4] != MAGIC:
        raise CorruptLogError("bad magic bytes")
    if data[4] != VERSION:
        raise CorruptLogError(f"unsupported record-log version {data[4]}")

    payloads: list[bytes] = []
    pos = len(HEADER)
    end = len(data)
    while pos < end:
        if end - pos < 4:
            break
        (length,) = _U32.unpack_from(data, pos)
        rec_end = pos + 4 + length + 4
        if rec_end > end:
            break
        payload = data[pos + 4 : pos + 4 + length]
        (crc,) = _U32.unpack_from(data, pos + 4 + length)
        if zlib.crc32(payload) & 0xFFFFFFFF != crc:
            if rec_end == end:
                break
            raise CorruptLogError(f"checksum mismatch in record at byte {pos}")
        payloads.append(payload)
        pos = rec_end
    return payloads, pos


class RecordLog:
    """A single append-only file of length-prefixed, checksummed records."""

    def __init__(self, path: str | os.PathLike, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)

        data = self.path.read_bytes() if self.path.exists() else b""
        self._records, valid_end = scan_records(data)
        if valid_end == 0:
            with open(self.path, "wb") as fh:
                fh.write(HEADER)
                fh.flush()
                os.fsync(fh.fileno())
        elif valid_end < len(data):
            logger.warning(
                "truncating torn tail of %s: %d bytes after offset %d",
                self.path, len(data) - valid_end, valid_end,
            )
            with open(self.path, "r+b") as fh:
                fh.truncate(valid_end)
                os.fsync(fh.fileno())
        self._fh = open(self.path, "ab")

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[bytes]:
        return iter(list(self._records))

    def records(self) -> list[bytes]:
        return list(self._records)

    def append(self, payload: bytes) -> int:
        """Persist one record; returns its ordinal. Durable on return."""
        frame = encode_record(payload)
        with self._lock:
            self._fh.write(frame)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
            self._records.append(payload)
            return len(self._records) - 1

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self) -> RecordLog:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
