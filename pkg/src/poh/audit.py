"""Append-only hash-chained audit log.

Each entry hashes ``prev_hash || canonical entry bytes``; the first entry
chains from 32 zero bytes. On disk the log is one JSON object per line with
hex-encoded hashes::

    {"seq":0,"type":"attach","subject":"...","verdict":"ok","ts":1700000000.0,"ref":"","prev_hash":"00..","entry_hash":"ab.."}

A flat chain detects in-place edits and reordering but not tail
truncation; detecting truncation needs an externally held checkpoint
(``AuditLog.head``).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

GENESIS = bytes(32)

_ENTRY_FIELDS = ("seq", "type", "subject", "verdict", "ts", "ref")


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    type: str
    subject: str
    verdict: str
    ts: float
    ref: str
    prev_hash: bytes
    entry_hash: bytes

    def body(self) -> dict:
        return {k: getattr(self, k) for k in _ENTRY_FIELDS}

    def to_line(self) -> str:
        d = self.body()
        d["prev_hash"] = self.prev_hash.hex()
        d["entry_hash"] = self.entry_hash.hex()
        return json.dumps(d, separators=(",", ":"), ensure_ascii=True)


def canonical_entry_bytes(body: dict) -> bytes:
    return json.dumps(
        {k: body[k] for k in _ENTRY_FIELDS}, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def chain_hash(prev_hash: bytes, body: dict) -> bytes:
    return hashlib.sha256(prev_hash + canonical_entry_bytes(body)).digest()


class AuditLog:
    """Thread-safe appender. Optionally mirrors each entry to a file sink.

    With a sink every append is written and flushed before ``append``
    returns, so an interrupted process leaves a verifiable prefix. An
    existing sink file is resumed: its entries are checked and new entries
    extend its chain.

    Raises:
        ValueError: the existing sink file does not verify.
    """

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self._entries: list[AuditEntry] = []
        self._lock = threading.Lock()
        self._sink: IO[str] | None = None
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size:
                check = verify_audit_file(self.path)
                if not check.ok:
                    raise ValueError(f"existing audit log {self.path} is broken at entry {check.broken_at}")
                self._entries = load_audit_file(self.path)
            self._sink = open(self.path, "a", encoding="ascii")

    def append(self, type: str, subject: str = "", verdict: str = "", ts: float = 0.0, ref: str = "") -> AuditEntry:
        with self._lock:
            seq = len(self._entries)
            prev = self._entries[-1].entry_hash if self._entries else GENESIS
            body = {"seq": seq, "type": type, "subject": subject, "verdict": verdict, "ts": float(ts), "ref": ref}
            entry = AuditEntry(prev_hash=prev, entry_hash=chain_hash(prev, body), **body)
            self._entries.append(entry)
            if self._sink is not None:
                self._sink.write(entry.to_line() + "\n")
                self._sink.flush()
            return entry

    @property
    def head(self) -> bytes:
        with self._lock:
            return self._entries[-1].entry_hash if self._entries else GENESIS

    def entries(self) -> list[AuditEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[AuditEntry]:
        return iter(self.entries())

    def flush(self) -> None:
        with self._lock:
            if self._sink is not None:
                self._sink.flush()
                os.fsync(self._sink.fileno())

    def close(self) -> None:
        with self._lock:
            if self._sink is not None:
                self._sink.flush()
                self._sink.close()
                self._sink = None

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for e in self.entries():
                fh.write(e.to_line() + "\n")


@dataclass(frozen=True)
class AuditCheck:
    ok: bool
    broken_at: int | None
    count: int
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_audit_log(log: AuditLog | Iterable[AuditEntry]) -> AuditCheck:
    """Recompute the chain end to end; report the first index that fails."""
    prev = GENESIS
    n = 0
    for i, e in enumerate(log):
        n += 1
        if e.seq != i:
            return AuditCheck(False, i, n, "sequence number out of order")
        if e.prev_hash != prev:
            return AuditCheck(False, i, n, "prev_hash does not match preceding entry")
        if chain_hash(prev, e.body()) != e.entry_hash:
            return AuditCheck(False, i, n, "entry_hash mismatch")
        prev = e.entry_hash
    return AuditCheck(True, None, n)


def _parse_line(line: str) -> AuditEntry:
    d = json.loads(line)
    if not isinstance(d, dict) or set(d) != set(_ENTRY_FIELDS) | {"prev_hash", "entry_hash"}:
        raise ValueError("unexpected field set")
    types = {"seq": int, "type": str, "subject": str, "verdict": str, "ts": float, "ref": str}
    for k, t in types.items():
        if not isinstance(d[k], t) or isinstance(d[k], bool):
            raise ValueError(f"bad type for {k}")
    prev, cur = bytes.fromhex(d["prev_hash"]), bytes.fromhex(d["entry_hash"])
    if len(prev) != 32 or len(cur) != 32:
        raise ValueError("bad hash length")
    entry = AuditEntry(
        seq=d["seq"], type=d["type"], subject=d["subject"], verdict=d["verdict"],
        ts=d["ts"], ref=d["ref"], prev_hash=prev, entry_hash=cur,
    )
    # byte-exact: any edit that parses to an equal value is still caught
    if entry.to_line() != line:
        raise ValueError("line is not in canonical form")
    return entry


def verify_audit_file(path: str | os.PathLike) -> AuditCheck:
    """Verify a line-delimited audit file; unparsable lines count as breaks."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        return AuditCheck(True, None, 0)
    lines = raw.split(b"\n")
    if lines[-1] == b"":
        lines.pop()
    entries: list[AuditEntry] = []
    for i, bl in enumerate(lines):
        try:
            entries.append(_parse_line(bl.decode("ascii")))
        except (ValueError, UnicodeDecodeError) as exc:
            prefix = verify_audit_log(entries)
            if not prefix.ok:
                return AuditCheck(False, prefix.broken_at, len(lines), prefix.reason)
            return AuditCheck(False, i, len(lines), f"unparsable line: {exc}")
    check = verify_audit_log(entries)
    return AuditCheck(check.ok, check.broken_at, len(lines), check.reason)


def load_audit_file(path: str | os.PathLike) -> list[AuditEntry]:
    with open(path, encoding="ascii") as fh:
        return [_parse_line(line.rstrip("\n")) for line in fh if line.strip()]
