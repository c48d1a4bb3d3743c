"""Simulated Telco identity plane.

Subscribers are provisioned with a 32-byte root key bound to one device
identifier. ``authenticate_attach`` plays the role of a collapsed AKA run:
the registry draws an authentication nonce and derives the session key from
the root key, the nonce and the serving network id. Root keys never leave the
registry except through an explicitly secret snapshot.
"""

from __future__ import annotations

import enum
import os
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .audit import AuditLog
from .errors import (
    DeviceMismatch,
    DuplicateSubscriber,
    InvalidStatusTransition,
    SnapshotError,
    SubscriberRevoked,
    SubscriberSuspended,
    UnknownSubscriber,
)

KDF_LABEL = b"poh/seaf/v1"
KEY_LEN = 32
NONCE_LEN = 16
SESSION_ID_LEN = 16
DEFAULT_SESSION_LIFETIME = 3600.0

SNAPSHOT_MAGIC = "#poh-registry v1"


class SubscriberStatus(str, enum.Enum):
    ACTIVE = "Active"
    SUSPENDED = "Suspended"
    REVOKED = "Revoked"


_STATUS_ORDER = {SubscriberStatus.ACTIVE: 0, SubscriberStatus.SUSPENDED: 1, SubscriberStatus.REVOKED: 2}


@dataclass(frozen=True)
class SubscriberRecord:
    """Public view of a provisioned subscriber. The root key is not a field."""

    subscriber_id: str
    device_id: str
    provisioned_at: float
    status: SubscriberStatus = SubscriberStatus.ACTIVE


@dataclass(frozen=True)
class SessionContext:
    session_id: bytes
    subscriber_id: str
    session_key: bytes = field(repr=False)
    established_at: float
    expires_at: float
    auth_nonce: bytes
    network_id: str = ""

    def __post_init__(self) -> None:
        if not self.expires_at > self.established_at:
            raise ValueError("expires_at must be after established_at")

    @property
    def session_id_hex(self) -> str:
        return self.session_id.hex()

    def is_expired(self, now: float) -> bool:
        return now >= self.expires_at


def derive_session_key(root_key: bytes, auth_nonce: bytes, network_id: str | bytes) -> bytes:
    """HKDF-SHA256: root key as input keying material, the nonce as salt,
    ``label || 0x00 || network_id`` as info."""
    if isinstance(network_id, str):
        network_id = network_id.encode("utf-8")
    if not root_key or not auth_nonce or not network_id:
        raise ValueError("root_key, auth_nonce and network_id must be non-empty")
    hkdf = HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=auth_nonce, info=KDF_LABEL + b"\x00" + network_id)
    return hkdf.derive(root_key)


def _system_randbytes(n: int) -> bytes:
    return os.urandom(n)


class SubscriberRegistry:
    """In-memory subscriber store with optional snapshot files.

    Args:
        audit_log: receives an ``attach`` entry per successful attach.
        randbytes: entropy source for nonces and session ids; pass a seeded
            ``random.Random(...).randbytes`` for reproducible simulations.
        session_lifetime: default session lifetime in seconds.
    """

    def __init__(
        self,
        audit_log: AuditLog | None = None,
        randbytes: Callable[[int], bytes] | None = None,
        session_lifetime: float = DEFAULT_SESSION_LIFETIME,
    ) -> None:
        self.audit_log = audit_log
        self._randbytes = randbytes or _system_randbytes
        self.session_lifetime = session_lifetime
        self._records: dict[str, SubscriberRecord] = {}
        self._keys: dict[str, bytes] = {}
        self._sessions: dict[bytes, SessionContext] = {}
        self._lock = threading.RLock()

    # provisioning --------------------------------------------------------

    def provision_subscriber(
        self, subscriber_id: str, device_id: str, rng_seed: int | None = None, now: float = 0.0
    ) -> SubscriberRecord:
        if rng_seed is None:
            root_key = os.urandom(KEY_LEN)
        else:
            root_key = random.Random(rng_seed).randbytes(KEY_LEN)
        with self._lock:
            if subscriber_id in self._records:
                raise DuplicateSubscriber(subscriber_id)
            rec = SubscriberRecord(subscriber_id, device_id, float(now))
            self._records[subscriber_id] = rec
            self._keys[subscriber_id] = root_key
            return rec

    def get(self, subscriber_id: str) -> SubscriberRecord:
        with self._lock:
            try:
                return self._records[subscriber_id]
            except KeyError:
                raise UnknownSubscriber(subscriber_id) from None

    def __contains__(self, subscriber_id: str) -> bool:
        return subscriber_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def set_status(self, subscriber_id: str, status: SubscriberStatus) -> SubscriberRecord:
        status = SubscriberStatus(status)
        with self._lock:
            rec = self.get(subscriber_id)
            if _STATUS_ORDER[status] < _STATUS_ORDER[rec.status]:
                raise InvalidStatusTransition(f"{rec.status.value} -> {status.value}")
            new = SubscriberRecord(rec.subscriber_id, rec.device_id, rec.provisioned_at, status)
            self._records[subscriber_id] = new
            return new

    def suspend(self, subscriber_id: str) -> SubscriberRecord:
        return self.set_status(subscriber_id, SubscriberStatus.SUSPENDED)

    def revoke(self, subscriber_id: str) -> SubscriberRecord:
        return self.set_status(subscriber_id, SubscriberStatus.REVOKED)

    # attach --------------------------------------------------------------

    def authenticate_attach(
        self,
        subscriber_id: str,
        device_id: str,
        network_id: str,
        now: float,
        lifetime: float | None = None,
    ) -> SessionContext:
        lifetime = self.session_lifetime if lifetime is None else lifetime
        with self._lock:
            rec = self.get(subscriber_id)
            if rec.status is SubscriberStatus.REVOKED:
                raise SubscriberRevoked(subscriber_id)
            if rec.status is SubscriberStatus.SUSPENDED:
                raise SubscriberSuspended(subscriber_id)
            if device_id != rec.device_id:
                raise DeviceMismatch(f"{subscriber_id} is bound to another device")
            nonce = self._randbytes(NONCE_LEN)
            session_id = self._randbytes(SESSION_ID_LEN)
            while session_id in self._sessions:
                session_id = self._randbytes(SESSION_ID_LEN)
            ctx = SessionContext(
                session_id=session_id,
                subscriber_id=subscriber_id,
                session_key=derive_session_key(self._keys[subscriber_id], nonce, network_id),
                established_at=float(now),
                expires_at=float(now) + lifetime,
                auth_nonce=nonce,
                network_id=network_id,
            )
            self._sessions[session_id] = ctx
        if self.audit_log is not None:
            self.audit_log.append("attach", session_id.hex(), "ok", now, subscriber_id)
        return ctx

    def session(self, session_id: bytes | str) -> SessionContext | None:
        if isinstance(session_id, str):
            try:
                session_id = bytes.fromhex(session_id)
            except ValueError:
                return None
        return self._sessions.get(session_id)

    def recompute_session_key(self, session_id: bytes) -> bytes:
        """Registry-side re-derivation; third parties cannot do this."""
        ctx = self._sessions[session_id]
        return derive_session_key(self._keys[ctx.subscriber_id], ctx.auth_nonce, ctx.network_id)

    def _root_key(self, subscriber_id: str) -> bytes:
        # test hook only
        return self._keys[subscriber_id]

    # snapshots -----------------------------------------------------------

    def save_snapshot(self, path: str | os.PathLike, secret: bool = False) -> None:
        """Write one tab-separated line per subscriber.

        Columns: subscriber_id, device_id, provisioned_at, status, root_key.
        The root_key column is hex in secret snapshots (file mode 0600) and
        ``-`` otherwise.
        """
        path = Path(path)
        with self._lock:
            lines = [f"{SNAPSHOT_MAGIC} secret={int(secret)}"]
            for sid in sorted(self._records):
                rec = self._records[sid]
                key = self._keys[sid].hex() if secret else "-"
                for v in (rec.subscriber_id, rec.device_id):
                    if "\t" in v or "\n" in v:
                        raise SnapshotError(f"identifier contains a separator: {v!r}")
                lines.append("\t".join([rec.subscriber_id, rec.device_id, repr(rec.provisioned_at), rec.status.value, key]))
        data = ("\n".join(lines) + "\n").encode("utf-8")
        flags = os.O_WRONLY | os.O_CREAT | os.O_TRUNC
        fd = os.open(path, flags, 0o600 if secret else 0o644)
        try:
            if secret:
                os.fchmod(fd, 0o600)
            os.write(fd, data)
        finally:
            os.close(fd)

    @classmethod
    def load_snapshot(cls, path: str | os.PathLike, **kwargs) -> "SubscriberRegistry":
        """Restore a registry from a secret snapshot."""
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith(SNAPSHOT_MAGIC):
            raise SnapshotError("missing snapshot header")
        if text[0] != f"{SNAPSHOT_MAGIC} secret=1":
            raise SnapshotError("only secret snapshots carry root keys and can be restored")
        reg = cls(**kwargs)
        for lineno, line in enumerate(text[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 5:
                raise SnapshotError(f"line {lineno}: expected 5 fields, got {len(parts)}")
            sid, dev, at, status, key = parts
            try:
                root = bytes.fromhex(key)
                rec = SubscriberRecord(sid, dev, float(at), SubscriberStatus(status))
            except ValueError as exc:
                raise SnapshotError(f"line {lineno}: {exc}") from exc
            if len(root) != KEY_LEN:
                raise SnapshotError(f"line {lineno}: root key must be {KEY_LEN} bytes")
            if sid in reg._records:
                raise SnapshotError(f"line {lineno}: duplicate subscriber {sid}")
            reg._records[sid] = rec
            reg._keys[sid] = root
        return reg
