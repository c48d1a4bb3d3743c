"""Identity-bound session attestations over an abstract handshake transcript.

An attestation binds ``H(session_key || transcript_digest)`` to a session id
and a fresh challenge nonce, and is signed by the issuer. Rotation at a
resumption boundary supersedes the predecessor; a superseded attestation
verifies as Expired from then on.

Wire layout mirrors provenance tokens with version byte 2::

    u8 version | u16 len session_id | 32 binding | u32 resumption_count |
    u64 issued_at | u64 expires_at | 16 challenge_nonce |
    u16 len issuer_id | u16 len key_id | u16 len signature
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass, replace
from typing import Callable

from .encoding import Reader, Writer, dhash
from .errors import BadResumptionCount, DecodeError, SessionExpired, StaleAttestation
from .identity import SessionContext
from .keys import ED25519, IssuerKeyPair, KeyRing, PublicKey, as_keyring
from .tokens import ReplayCache, Verdict

ATTESTATION_VERSION = 2
SIG_LABEL = b"poh/session-attestation/v1"
BIND_LABEL = b"poh/bind/v1"
TRANSCRIPT_LABEL = b"poh/transcript/v1"
DEFAULT_ATTESTATION_LIFETIME = 300


@dataclass(frozen=True)
class HandshakeTranscript:
    client_hello_digest: bytes
    negotiated_params_digest: bytes
    resumption_count: int = 0

    def __post_init__(self) -> None:
        if len(self.client_hello_digest) != 32 or len(self.negotiated_params_digest) != 32:
            raise ValueError("transcript digests must be 32 bytes")
        if self.resumption_count < 0:
            raise ValueError("resumption_count must be >= 0")

    def digest(self) -> bytes:
        return dhash(TRANSCRIPT_LABEL, self.client_hello_digest, self.negotiated_params_digest,
                     struct.pack(">I", self.resumption_count))

    def resumed(self, negotiated_params_digest: bytes | None = None) -> "HandshakeTranscript":
        return HandshakeTranscript(self.client_hello_digest,
                                   negotiated_params_digest or self.negotiated_params_digest,
                                   self.resumption_count + 1)


def transcript_binding(session_key: bytes, transcript: HandshakeTranscript) -> bytes:
    return dhash(BIND_LABEL, session_key, transcript.digest())


@dataclass(frozen=True)
class SessionAttestation:
    session_id: bytes
    transcript_binding: bytes
    resumption_count: int
    issued_at: int
    expires_at: int
    challenge_nonce: bytes
    issuer_id: str
    key_id: str
    signature: bytes = b""


def encode_attestation_body(att: SessionAttestation) -> bytes:
    return (
        Writer()
        .u8(ATTESTATION_VERSION)
        .var(att.session_id)
        .fixed(att.transcript_binding, 32)
        .u32(att.resumption_count)
        .u64(att.issued_at)
        .u64(att.expires_at)
        .fixed(att.challenge_nonce, 16)
        .text(att.issuer_id)
        .text(att.key_id)
        .getvalue()
    )


def encode_attestation(att: SessionAttestation) -> bytes:
    return encode_attestation_body(att) + Writer().var(att.signature).getvalue()


def decode_attestation(data: bytes) -> SessionAttestation:
    r = Reader(data)
    if r.u8() != ATTESTATION_VERSION:
        raise DecodeError("not a session attestation")
    att = SessionAttestation(r.var(), r.fixed(32), r.u32(), r.u64(), r.u64(), r.fixed(16), r.text(), r.text(), r.var())
    r.expect_end()
    return att


def _message(att: SessionAttestation) -> bytes:
    return SIG_LABEL + b"\x00" + encode_attestation_body(att)


def _fingerprint(att: SessionAttestation) -> bytes:
    return hashlib.sha256(encode_attestation(att)).digest()


class SessionAttestor:
    """Issues, rotates and verifies attestations for one issuer.

    Holds the supersession registry, so rotate-and-supersede is atomic under
    the instance lock and rotation chains cannot fork.
    """

    def __init__(
        self,
        issuer: IssuerKeyPair,
        lifetime: int = DEFAULT_ATTESTATION_LIFETIME,
        randbytes: Callable[[int], bytes] | None = None,
    ) -> None:
        if issuer.scheme != ED25519:
            raise ValueError("session attestations are signed with ed25519")
        self.issuer = issuer
        self.lifetime = lifetime
        self._randbytes = randbytes or os.urandom
        self._lock = threading.Lock()
        self._superseded: dict[bytes, bytes] = {}  # nonce -> fingerprint of superseded attestation
        self._issued_nonces: set[bytes] = set()

    def _fresh_nonce(self) -> bytes:
        nonce = self._randbytes(16)
        while nonce in self._issued_nonces:
            nonce = self._randbytes(16)
        self._issued_nonces.add(nonce)
        return nonce

    def _sign(self, session: SessionContext, transcript: HandshakeTranscript, now: float) -> SessionAttestation:
        issued = int(now)
        body = SessionAttestation(
            session.session_id, transcript_binding(session.session_key, transcript), transcript.resumption_count,
            issued, issued + self.lifetime, self._fresh_nonce(), self.issuer.issuer_id, self.issuer.key_id,
        )
        return replace(body, signature=self.issuer.sign(_message(body)))

    def bind_session(self, session: SessionContext, transcript: HandshakeTranscript, now: float) -> SessionAttestation:
        if session.is_expired(now):
            raise SessionExpired(session.session_id_hex)
        with self._lock:
            return self._sign(session, transcript, now)

    def rotate_attestation(
        self,
        old: SessionAttestation,
        transcript: HandshakeTranscript,
        session: SessionContext,
        now: float,
    ) -> SessionAttestation:
        if session.is_expired(now):
            raise SessionExpired(session.session_id_hex)
        with self._lock:
            if old.challenge_nonce in self._superseded:
                raise StaleAttestation("predecessor already rotated")
            verdict = self._check(old, self.issuer.public, now, session, None, None)
            if verdict is not Verdict.VERIFIED:
                raise StaleAttestation(f"predecessor does not verify: {verdict.value}")
            if transcript.resumption_count != old.resumption_count + 1:
                raise BadResumptionCount(f"expected {old.resumption_count + 1}, got {transcript.resumption_count}")
            new = self._sign(session, transcript, now)
            self._superseded[old.challenge_nonce] = _fingerprint(old)
            return new

    def verify_session_attestation(
        self,
        att: SessionAttestation | bytes,
        keys: KeyRing | PublicKey | IssuerKeyPair,
        now: float,
        session: SessionContext | None = None,
        transcript: HandshakeTranscript | None = None,
        replay_cache: ReplayCache | None = None,
    ) -> Verdict:
        """Same verdict lattice as tokens.

        With ``session`` and ``transcript`` supplied the binding is recomputed
        and a mismatch is InvalidSignature. A superseded attestation is
        Expired; a different attestation reusing a superseded nonce, or a
        nonce already consumed through ``replay_cache``, is Replayed.
        """
        if isinstance(att, (bytes, bytearray)):
            try:
                att = decode_attestation(bytes(att))
            except DecodeError:
                return Verdict.UNVERIFIABLE
        with self._lock:
            return self._check(att, keys, now, session, transcript, replay_cache)

    def _check(self, att, keys, now, session, transcript, replay_cache) -> Verdict:
        try:
            message = _message(att)
        except (ValueError, TypeError, struct.error):
            return Verdict.UNVERIFIABLE
        if att.expires_at <= att.issued_at:
            return Verdict.UNVERIFIABLE
        pub = as_keyring(keys).get(att.key_id)
        if pub is None or pub.scheme != ED25519 or pub.issuer_id != att.issuer_id:
            return Verdict.UNVERIFIABLE
        if not pub.verify(message, att.signature):
            return Verdict.INVALID_SIGNATURE
        if session is not None:
            if session.session_id != att.session_id:
                return Verdict.INVALID_SIGNATURE
            if transcript is not None:
                if transcript.resumption_count != att.resumption_count:
                    return Verdict.INVALID_SIGNATURE
                if transcript_binding(session.session_key, transcript) != att.transcript_binding:
                    return Verdict.INVALID_SIGNATURE
        if now > att.expires_at or now < att.issued_at:
            return Verdict.EXPIRED
        sup = self._superseded.get(att.challenge_nonce)
        if sup is not None:
            return Verdict.EXPIRED if sup == _fingerprint(att) else Verdict.REPLAYED
        if replay_cache is not None and not replay_cache.check_and_insert(att.challenge_nonce, att.expires_at, now):
            return Verdict.REPLAYED
        return Verdict.VERIFIED
