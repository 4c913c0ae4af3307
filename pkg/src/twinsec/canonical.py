"""Canonical serialization and digest helpers.

Two encodings are used across the platform:

* canonical JSON -- sorted keys, no whitespace, UTF-8, NaN/inf rejected.
  Used for domain-object payloads, digests, and everything that crosses
  the API boundary.
* a binary field codec -- length-prefixed fields in declared order,
  integers big-endian, IEEE-754 doubles -- used for ledger blocks so the
  chain file is bit-exact and reproducible across implementations.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE

HASH_ALGORITHMS = ("sha256", "sha3_256")


def canonical_json(obj: Any) -> bytes:
    """Serialize to canonical JSON bytes (sorted keys, compact, finite floats)."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def digest(data: bytes, algorithm: str = "sha256") -> bytes:
    """256-bit digest of raw bytes under the configured algorithm."""
    if algorithm not in HASH_ALGORITHMS:
        raise ValueError(f"unsupported hash algorithm: {algorithm}")
    return hashlib.new(algorithm, data).digest()


def digest_json(obj: Any, algorithm: str = "sha256") -> bytes:
    return digest(canonical_json(obj), algorithm)


def hexdigest_json(obj: Any, algorithm: str = "sha256") -> str:
    return digest_json(obj, algorithm).hex()


class FieldWriter:
    """Accumulates length-prefixed binary fields in call order."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> None:
        self._parts.append(struct.pack(">B", value))

    def u32(self, value: int) -> None:
        self._parts.append(struct.pack(">I", value))

    def u64(self, value: int) -> None:
        self._parts.append(struct.pack(">Q", value))

    def f64(self, value: float) -> None:
        self._parts.append(struct.pack(">d", value))

    def raw(self, data: bytes) -> None:
        self._parts.append(data)

    def bytes_field(self, data: bytes) -> None:
        self.u32(len(data))
        self._parts.append(data)

    def str_field(self, text: str) -> None:
        self.bytes_field(text.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class FieldReader:
    """Reads fields written by FieldWriter; raises ChainFormatError on underrun."""

    def __init__(self, data: bytes, offset: int = 0) -> None:
        self._data = data
        self._pos = offset

    def _take(self, n: int) -> bytes:
        from .errors import ChainFormatError

        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise ChainFormatError(
                f"truncated field at offset {self._pos}: need {n} bytes"
            )
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def bytes_field(self) -> bytes:
        return self._take(self.u32())

    def str_field(self) -> str:
        from .errors import ChainFormatError

        data = self.bytes_field()
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChainFormatError(f"invalid UTF-8 in string field: {exc}") from exc

    @property
    def offset(self) -> int:
        return self._pos

    def exhausted(self) -> bool:
        return self._pos == len(self._data)
