"""Simulated Layer-3 data plane.

Packets expose only metadata: the flow tuple, sequence number, send time,
payload length and an optional extension-header slot. Payload content is an
opaque handle that nothing in this package reads.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, NamedTuple

from .clock import VirtualClock
from .errors import AlreadyEncapsulated, DecodeError, HeaderOccupied, NotEncapsulated
from .keys import IssuerKeyPair, PublicKey
from .tokens import (
    ProvenanceToken,
    TokenMode,
    TOKEN_VERSION,
    decode_token,
    encode_token,
    signing_message,
)


class FlowId(NamedTuple):
    src: str
    dst: str
    src_port: int
    dst_port: int
    proto: str = "tcp"

    def key(self) -> str:
        return f"{self.src}:{self.src_port}>{self.dst}:{self.dst_port}/{self.proto}"


@dataclass(frozen=True)
class SimPacket:
    flow_id: FlowId
    seq: int
    sent_at: float
    payload_len: int
    ext_header: bytes | None = None
    encapsulation: tuple[str, ...] = ()
    poh_tag: int | None = None
    # opaque payload handle, never dereferenced by this package
    payload: object = field(default=None, repr=False, compare=False)

    @property
    def tunnel_id(self) -> str | None:
        return self.encapsulation[-1] if self.encapsulation else None


class Absent:
    """Marker: the packet carries no extension header."""

    def __repr__(self) -> str:
        return "ABSENT"


class Corrupt:
    """Marker: header bytes fail structural decoding."""

    def __init__(self, reason: str = "") -> None:
        self.reason = reason

    def __repr__(self) -> str:
        return f"CORRUPT({self.reason})"


ABSENT = Absent()


def inject_token(packet: SimPacket, token: ProvenanceToken | bytes) -> SimPacket:
    if packet.ext_header is not None:
        raise HeaderOccupied(f"{packet.flow_id.key()}#{packet.seq}")
    wire = token if isinstance(token, bytes) else encode_token(token)
    return replace(packet, ext_header=bytes(wire))


def extract_token(packet: SimPacket) -> bytes | Absent | Corrupt:
    if packet.ext_header is None:
        return ABSENT
    try:
        decode_token(packet.ext_header)
    except DecodeError as exc:
        return Corrupt(str(exc))
    return packet.ext_header


def strip_token(packet: SimPacket) -> SimPacket:
    return replace(packet, ext_header=None)


def encapsulate(packet: SimPacket, tunnel_id: str) -> SimPacket:
    if packet.encapsulation:
        raise AlreadyEncapsulated(packet.tunnel_id)
    return replace(packet, encapsulation=(tunnel_id,))


def decapsulate(packet: SimPacket) -> SimPacket:
    if not packet.encapsulation:
        raise NotEncapsulated(packet.flow_id.key())
    return replace(packet, encapsulation=packet.encapsulation[:-1])


# hops ----------------------------------------------------------------------


class Behavior(str, enum.Enum):
    HONEST = "Honest"
    STRIP = "Strip"
    TAMPER_SIGNATURE = "TamperSignature"
    TAMPER_TIMESTAMP = "TamperTimestamp"
    REPLAY_RECORDER = "ReplayRecorder"
    INJECTOR = "Injector"


TIMESTAMP_SHIFT = 3600


@dataclass
class HopNode:
    """One forwarding hop.

    ``latency`` is either a fixed delay in seconds or a ``(lo, hi)`` pair for a
    uniform random delay. Adversarial behaviour only applies while the hop's
    local time is inside ``[active_from, active_until)``.

    An Injector forges tokens with ``forge_key``; with ``impersonate`` set it
    claims that (Telco) public key's issuer and key id, otherwise its own.
    """

    node_id: str
    behavior: Behavior = Behavior.HONEST
    latency: float | tuple[float, float] = 0.0
    active_from: float = float("-inf")
    active_until: float = float("inf")
    forge_key: IssuerKeyPair | None = None
    impersonate: PublicKey | None = None
    captured: list[tuple[float, bytes]] = field(default_factory=list, repr=False)
    forged: list[bytes] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self.behavior = Behavior(self.behavior)

    def delay(self, rng: random.Random) -> float:
        if isinstance(self.latency, tuple):
            lo, hi = self.latency
            return rng.uniform(lo, hi)
        return float(self.latency)

    def active(self, t: float) -> bool:
        return self.active_from <= t < self.active_until

    def apply(self, packet: SimPacket, t: float) -> SimPacket:
        if self.behavior is Behavior.HONEST or not self.active(t):
            return packet
        hdr = packet.ext_header
        if self.behavior is Behavior.STRIP:
            return strip_token(packet)
        if self.behavior is Behavior.REPLAY_RECORDER:
            if hdr is not None:
                self.captured.append((t, hdr))
            return packet
        if self.behavior is Behavior.INJECTOR:
            return replace(packet, ext_header=encode_token(self._forge(t)))
        if hdr is None:
            return packet
        if self.behavior is Behavior.TAMPER_SIGNATURE:
            return replace(packet, ext_header=flip_signature_bit(hdr))
        if self.behavior is Behavior.TAMPER_TIMESTAMP:
            return replace(packet, ext_header=shift_issued_at(hdr, TIMESTAMP_SHIFT))
        raise AssertionError(self.behavior)

    def _forge(self, t: float) -> ProvenanceToken:
        if self.forge_key is None:
            self.forge_key = IssuerKeyPair.generate("adversary", seed=self.node_id.encode())
        claimed = self.impersonate or self.forge_key.public
        issued = int(t)
        body = ProvenanceToken(
            TOKEN_VERSION,
            claimed.issuer_id,
            claimed.key_id,
            hashlib.sha256(b"forged" + self.node_id.encode()).digest(),
            hashlib.sha256(f"{self.node_id}/{len(self.forged)}".encode()).digest()[:16],
            issued,
            issued + 60,
            TokenMode.PLAIN,
        )
        token = replace(body, signature=self.forge_key.sign(signing_message(body)))
        self.forged.append(token.session_nonce)
        return token


def flip_signature_bit(wire: bytes, bit: int = 0) -> bytes:
    """Flip one bit inside the signature field; non-token bytes pass through."""
    try:
        tok = decode_token(wire)
    except DecodeError:
        return wire
    sig_start = len(wire) - len(tok.signature)
    if not tok.signature:
        return wire
    out = bytearray(wire)
    out[sig_start + (bit // 8) % len(tok.signature)] ^= 1 << (bit % 8)
    return bytes(out)


def shift_issued_at(wire: bytes, seconds: int) -> bytes:
    """Re-encode the token with ``issued_at`` moved, keeping the old signature."""
    try:
        tok = decode_token(wire)
    except DecodeError:
        return wire
    return encode_token(replace(tok, issued_at=tok.issued_at + seconds))


def header_state(packet: SimPacket) -> str:
    if packet.ext_header is None:
        return "absent"
    return hashlib.sha256(packet.ext_header).hexdigest()[:16]


@dataclass(frozen=True)
class HopTrace:
    hop: int
    node_id: str
    at: float
    header: str


@dataclass(frozen=True)
class Delivery:
    packet: SimPacket
    trace: tuple[HopTrace, ...]
    arrived_at: float


def forward_path(
    packet: SimPacket,
    path: list[HopNode],
    clock: VirtualClock | Callable[[], float] | float,
    rng: random.Random | None = None,
) -> Delivery:
    """Push a packet through ``path`` in order.

    The departure time is read from ``clock`` (not advanced); each hop adds its
    latency. The trace records the header state after every hop.
    """
    if not path:
        raise ValueError("path must contain at least one hop")
    rng = rng or random.Random(0)
    t = float(clock) if isinstance(clock, (int, float)) else float(clock())
    trace = []
    for i, node in enumerate(path):
        t += node.delay(rng)
        packet = node.apply(packet, t)
        trace.append(HopTrace(i, node.node_id, t, header_state(packet)))
    return Delivery(packet, tuple(trace), t)


def honest_path(n: int, latency: float | tuple[float, float] = 0.0005) -> list[HopNode]:
    return [HopNode(f"hop{i}", Behavior.HONEST, latency) for i in range(n)]


# trace export --------------------------------------------------------------


def trace_records(packet: SimPacket, delivery: Delivery) -> list[dict]:
    return [
        {
            "flow_id": list(packet.flow_id),
            "seq": packet.seq,
            "hop": h.hop,
            "node": h.node_id,
            "header": h.header,
            "tag": delivery.packet.poh_tag,
        }
        for h in delivery.trace
    ]


def write_trace(path: str | os.PathLike, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
