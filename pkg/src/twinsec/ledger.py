"""Tamper-evident, permissioned, append-only hash chain.

Stores the slow-moving data of the platform: rules, provenance records,
specification snapshots, and incident records. Real-time sensor streams
are deliberately not chained; incident entries may anchor a digest of a
trace segment instead.

Design notes:

* single-authority chain, no consensus: the contract is tamper evidence
  plus permissioning, so a signed hash chain with a pluggable key
  registry stands in; the module boundary allows a networked backend
  later.
* canonical block body: length-prefixed fields in declared order,
  integers big-endian, IEEE-754 doubles -- bit-exact across runs so
  hashes and chain files are reproducible.
* hash and signature algorithms are configuration-selected; defaults are
  SHA-256 and Ed25519. Test vectors live in tests/vectors/.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import FieldReader, FieldWriter, ZERO_DIGEST, digest
from .clock import SystemClock
from .errors import ChainFormatError, EmptyBatch, Unauthorized

CHAIN_MAGIC = b"TTSC"
CHAIN_VERSION = 1

SIGNATURE_ALGORITHMS = ("ed25519",)


class EntryKind(str, Enum):
    RULE = "RuleEntry"
    PROVENANCE = "ProvenanceEntry"
    SPEC = "SpecEntry"
    INCIDENT = "IncidentEntry"


# entry kind -> roles allowed to write it (role names from the rules module)
WRITER_ROLES: dict[EntryKind, frozenset[str]] = {
    EntryKind.RULE: frozenset({"SecurityAnalyst", "System"}),
    EntryKind.PROVENANCE: frozenset({"SecurityAnalyst", "System"}),
    EntryKind.SPEC: frozenset({"SecurityAnalyst", "System"}),
    EntryKind.INCIDENT: frozenset({"SecurityAnalyst", "System"}),
}


@dataclass(frozen=True)
class Entry:
    kind: EntryKind
    payload: bytes
    payload_digest: bytes

    @classmethod
    def make(cls, kind: EntryKind, payload: bytes, hash_algorithm: str = "sha256") -> "Entry":
        return cls(kind=kind, payload=payload, payload_digest=digest(payload, hash_algorithm))

    def payload_obj(self) -> Any:
        return json.loads(self.payload.decode("utf-8"))


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    timestamp: float
    entries: tuple[Entry, ...]
    author: str
    signature: bytes
    hash: bytes

    def body_bytes(self) -> bytes:
        return encode_block_body(self.index, self.prev_hash, self.timestamp, self.entries, self.author)


@dataclass(frozen=True)
class BlockRef:
    index: int
    hash: bytes


@dataclass(frozen=True)
class ChainStatus:
    intact: bool
    broken_index: int | None = None
    reason: str | None = None

    def to_obj(self) -> dict:
        return {"intact": self.intact, "broken_index": self.broken_index, "reason": self.reason}


def encode_block_body(
    index: int, prev_hash: bytes, timestamp: float, entries: Sequence[Entry], author: str
) -> bytes:
    w = FieldWriter()
    w.u64(index)
    w.bytes_field(prev_hash)
    w.f64(timestamp)
    w.u32(len(entries))
    for entry in entries:
        w.str_field(entry.kind.value)
        w.bytes_field(entry.payload)
        w.bytes_field(entry.payload_digest)
    w.str_field(author)
    return w.getvalue()


def encode_block(block: Block) -> bytes:
    w = FieldWriter()
    w.bytes_field(block.body_bytes())
    w.bytes_field(block.signature)
    w.bytes_field(block.hash)
    return w.getvalue()


def decode_block(reader: FieldReader) -> Block:
    body = reader.bytes_field()
    signature = reader.bytes_field()
    block_hash = reader.bytes_field()
    br = FieldReader(body)
    index = br.u64()
    prev_hash = br.bytes_field()
    timestamp = br.f64()
    count = br.u32()
    entries = []
    for _ in range(count):
        kind_text = br.str_field()
        payload = br.bytes_field()
        payload_digest = br.bytes_field()
        try:
            kind = EntryKind(kind_text)
        except ValueError as exc:
            raise ChainFormatError(f"unknown entry kind {kind_text!r}") from exc
        entries.append(Entry(kind=kind, payload=payload, payload_digest=payload_digest))
    author = br.str_field()
    if not br.exhausted():
        raise ChainFormatError(f"trailing bytes in block body at offset {br.offset}")
    return Block(
        index=index,
        prev_hash=prev_hash,
        timestamp=timestamp,
        entries=tuple(entries),
        author=author,
        signature=signature,
        hash=block_hash,
    )


class KeyRegistry:
    """Maps entity ids to Ed25519 keypairs.

    Keys are derived deterministically from a master seed so demos and
    tests reproduce byte-identical chains; a production deployment would
    load real keys instead.
    """

    def __init__(self, seed: str = "twinsec-dev") -> None:
        self._seed = seed
        self._private: dict[str, Ed25519PrivateKey] = {}
        self._public: dict[str, Ed25519PublicKey] = {}

    def register(self, entity_id: str) -> None:
        if entity_id in self._private:
            return
        material = hashlib.sha256(f"{self._seed}:{entity_id}".encode("utf-8")).digest()
        key = Ed25519PrivateKey.from_private_bytes(material)
        self._private[entity_id] = key
        self._public[entity_id] = key.public_key()

    def sign(self, entity_id: str, data: bytes) -> bytes:
        self.register(entity_id)
        return self._private[entity_id].sign(data)

    def verify(self, entity_id: str, signature: bytes, data: bytes) -> bool:
        self.register(entity_id)
        try:
            self._public[entity_id].verify(signature, data)
            return True
        except InvalidSignature:
            return False


@dataclass(frozen=True)
class QueryFilter:
    kind: EntryKind | None = None
    rule_id: str | None = None
    asset_id: str | None = None
    time_range: tuple[float, float] | None = None


def _payload_mentions_asset(obj: Any, asset_id: str) -> bool:
    if isinstance(obj, dict):
        for key in ("asset_id", "asset_ids", "association", "actor_ids"):
            value = obj.get(key)
            if value == asset_id:
                return True
            if isinstance(value, (list, tuple)) and asset_id in value:
                return True
        payload = obj.get("payload")
        if payload is not None and _payload_mentions_asset(payload, asset_id):
            return True
    return False


class Ledger:
    """In-process single-authority chain with a serialized appender."""

    def __init__(
        self,
        keys: KeyRegistry | None = None,
        clock: Any = None,
        hash_algorithm: str = "sha256",
        signature_algorithm: str = "ed25519",
    ) -> None:
        if signature_algorithm not in SIGNATURE_ALGORITHMS:
            raise ValueError(f"unsupported signature algorithm: {signature_algorithm}")
        self.keys = keys or KeyRegistry()
        self.clock = clock or SystemClock()
        self.hash_algorithm = hash_algorithm
        self.signature_algorithm = signature_algorithm
        self._blocks: list[Block] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._blocks)

    @property
    def blocks(self) -> tuple[Block, ...]:
        return tuple(self._blocks)

    def head(self) -> Block | None:
        return self._blocks[-1] if self._blocks else None

    def entry_count(self) -> int:
        return sum(len(b.entries) for b in self._blocks)

    def make_entry(self, kind: EntryKind, payload_obj: Any) -> Entry:
        from .canonical import canonical_json

        return Entry.make(kind, canonical_json(payload_obj), self.hash_algorithm)

    def append(self, entries: Sequence[Entry], author) -> BlockRef:
        """Append one block holding ``entries``, signed by ``author``.

        ``author`` is a rules.Principal; it must hold a writer role for
        every entry kind in the batch.
        """
        if not entries:
            raise EmptyBatch("append requires at least one entry")
        roles = {getattr(r, "value", r) for r in author.roles}
        for entry in entries:
            allowed = WRITER_ROLES[entry.kind]
            if not (roles & allowed):
                raise Unauthorized(
                    f"{author.entity_id} (roles {sorted(roles)}) may not write {entry.kind.value}"
                )
        with self._lock:
            prev = self._blocks[-1].hash if self._blocks else ZERO_DIGEST
            index = len(self._blocks)
            prev_time = self._blocks[-1].timestamp if self._blocks else None
            timestamp = float(self.clock.now())
            if prev_time is not None and timestamp < prev_time:
                timestamp = prev_time
            body = encode_block_body(index, prev, timestamp, entries, author.entity_id)
            block = Block(
                index=index,
                prev_hash=prev,
                timestamp=timestamp,
                entries=tuple(entries),
                author=author.entity_id,
                signature=self.keys.sign(author.entity_id, body),
                hash=digest(body, self.hash_algorithm),
            )
            self._blocks.append(block)
            return BlockRef(index=index, hash=block.hash)

    def get_block(self, index: int) -> Block:
        return self._blocks[index]

    def verify_chain(self) -> ChainStatus:
        prev_hash = ZERO_DIGEST
        prev_time: float | None = None
        for i, block in enumerate(self._blocks):
            if block.index != i:
                return ChainStatus(False, i, f"index mismatch: stored {block.index}, expected {i}")
            if block.prev_hash != prev_hash:
                return ChainStatus(False, i, "linkage mismatch: prev_hash does not match prior block")
            if prev_time is not None and block.timestamp < prev_time:
                return ChainStatus(False, i, "timestamp decreased along the chain")
            if not block.entries:
                return ChainStatus(False, i, "empty entry list")
            for j, entry in enumerate(block.entries):
                if digest(entry.payload, self.hash_algorithm) != entry.payload_digest:
                    return ChainStatus(False, i, f"payload_digest mismatch at entry {j}")
            body = block.body_bytes()
            if digest(body, self.hash_algorithm) != block.hash:
                return ChainStatus(False, i, "block hash does not match canonical body")
            if not self.keys.verify(block.author, block.signature, body):
                return ChainStatus(False, i, f"signature verification failed for {block.author}")
            prev_hash = block.hash
            prev_time = block.timestamp
        return ChainStatus(True)

    def query(self, flt: QueryFilter | None = None, **kwargs) -> list[tuple[int, Entry]]:
        """Return all matching entries in chain order."""
        flt = flt or QueryFilter(**kwargs)
        out: list[tuple[int, Entry]] = []
        for block in self._blocks:
            if flt.time_range is not None:
                lo, hi = flt.time_range
                if not (lo <= block.timestamp <= hi):
                    continue
            for entry in block.entries:
                if flt.kind is not None and entry.kind is not flt.kind:
                    continue
                if flt.rule_id is not None or flt.asset_id is not None:
                    try:
                        obj = entry.payload_obj()
                    except (ValueError, UnicodeDecodeError):
                        continue
                    if flt.rule_id is not None and (
                        not isinstance(obj, dict) or obj.get("rule_id") != flt.rule_id
                    ):
                        continue
                    if flt.asset_id is not None and not _payload_mentions_asset(obj, flt.asset_id):
                        continue
                out.append((block.index, entry))
        return out

    # --- chain file format -------------------------------------------------

    def export_bytes(self) -> bytes:
        w = FieldWriter()
        w.raw(CHAIN_MAGIC)
        w.u8(CHAIN_VERSION)
        w.u32(len(self._blocks))
        for block in self._blocks:
            w.raw(encode_block(block))
        return w.getvalue()

    def export_file(self, path: str | Path) -> None:
        Path(path).write_bytes(self.export_bytes())

    def load_bytes(self, data: bytes) -> None:
        reader = FieldReader(data)
        if reader.raw(4) != CHAIN_MAGIC:
            raise ChainFormatError("bad magic header")
        version = reader.u8()
        if version != CHAIN_VERSION:
            raise ChainFormatError(f"unsupported chain format version {version}")
        count = reader.u32()
        blocks = [decode_block(reader) for _ in range(count)]
        if not reader.exhausted():
            raise ChainFormatError(f"trailing bytes after last block at offset {reader.offset}")
        with self._lock:
            self._blocks = blocks

    def load_file(self, path: str | Path) -> None:
        self.load_bytes(Path(path).read_bytes())
