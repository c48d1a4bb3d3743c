"""Provenance tokens: canonical encoding, issuance, verification, replay cache.

Wire layout (all integers big-endian)::

    u8   version            (1)
    u16  len | issuer_id    (utf-8)
    u16  len | key_id       (utf-8)
    32   subject_attestation
    16   session_nonce
    u64  issued_at          (integer seconds, UTC)
    u64  expires_at
    u8   mode               (0 = Plain, 1 = Blinded)
    u16  len | signature    (wire form only)

The signature covers ``b"poh/token/v1" || 0x00 || canonical_encode(token)``.
"""

from __future__ import annotations

import enum
import os
import threading
from dataclasses import dataclass, replace
from typing import Callable

from . import blind as _blind
from .audit import AuditLog
from .encoding import Reader, Writer, dhash
from .errors import DecodeError, LifetimeTooLong, NotBlindCapable, SessionExpired
from .identity import SessionContext
from .keys import ED25519, RSA_BLIND, IssuerKeyPair, KeyRing, PublicKey, as_keyring

TOKEN_VERSION = 1
MAX_TOKEN_LIFETIME = 300
DEFAULT_CLOCK_SKEW = 5.0
SIG_LABEL = b"poh/token/v1"
ATTEST_LABEL = b"poh/attest/v1"
ATTESTATION_LEN = 32
NONCE_LEN = 16


class TokenMode(enum.IntEnum):
    PLAIN = 0
    BLINDED = 1


class Verdict(str, enum.Enum):
    VERIFIED = "Verified"
    EXPIRED = "Expired"
    INVALID_SIGNATURE = "InvalidSignature"
    REPLAYED = "Replayed"
    UNVERIFIABLE = "Unverifiable"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ProvenanceToken:
    version: int
    issuer_id: str
    key_id: str
    subject_attestation: bytes
    session_nonce: bytes
    issued_at: int
    expires_at: int
    mode: TokenMode
    signature: bytes = b""

    @property
    def lifetime(self) -> int:
        return self.expires_at - self.issued_at


def canonical_encode(token: ProvenanceToken) -> bytes:
    """Deterministic field-ordered encoding of everything except the signature."""
    return (
        Writer()
        .u8(token.version)
        .text(token.issuer_id)
        .text(token.key_id)
        .fixed(token.subject_attestation, ATTESTATION_LEN)
        .fixed(token.session_nonce, NONCE_LEN)
        .u64(token.issued_at)
        .u64(token.expires_at)
        .u8(int(token.mode))
        .getvalue()
    )


def signing_message(token: ProvenanceToken) -> bytes:
    return SIG_LABEL + b"\x00" + canonical_encode(token)


def encode_token(token: ProvenanceToken) -> bytes:
    """Canonical encoding followed by the length-prefixed signature."""
    return canonical_encode(token) + Writer().var(token.signature).getvalue()


def decode_token(data: bytes) -> ProvenanceToken:
    """Parse wire bytes. Raises DecodeError on any structural problem."""
    r = Reader(data)
    version = r.u8()
    if version != TOKEN_VERSION:
        raise DecodeError(f"unsupported token version {version}")
    issuer_id = r.text()
    key_id = r.text()
    attestation = r.fixed(ATTESTATION_LEN)
    nonce = r.fixed(NONCE_LEN)
    issued_at = r.u64()
    expires_at = r.u64()
    mode_byte = r.u8()
    try:
        mode = TokenMode(mode_byte)
    except ValueError:
        raise DecodeError(f"unknown mode {mode_byte}") from None
    signature = r.var()
    r.expect_end()
    return ProvenanceToken(version, issuer_id, key_id, attestation, nonce, issued_at, expires_at, mode, signature)


def subject_attestation_for(session: SessionContext) -> bytes:
    return dhash(ATTEST_LABEL, session.session_key, session.session_id)


class ReplayCache:
    """Nonce store with expiry-based eviction.

    ``check_and_insert`` is the only mutating entry point and is atomic, so a
    nonce can be accepted at most once while its token is live.
    """

    def __init__(self) -> None:
        self._entries: dict[bytes, float] = {}
        self._lock = threading.Lock()
        self._next_sweep = float("-inf")

    def _sweep(self, now: float) -> None:
        if now < self._next_sweep:
            return
        dead = [n for n, exp in self._entries.items() if exp < now]
        for n in dead:
            del self._entries[n]
        self._next_sweep = now + 1.0

    def check_and_insert(self, nonce: bytes, expires_at: float, now: float) -> bool:
        """True if the nonce was fresh (and is now recorded)."""
        with self._lock:
            self._sweep(now)
            exp = self._entries.get(nonce)
            if exp is not None and exp >= now:
                return False
            self._entries[nonce] = float(expires_at)
            return True

    def contains(self, nonce: bytes, now: float) -> bool:
        with self._lock:
            exp = self._entries.get(nonce)
            return exp is not None and exp >= now

    def __len__(self) -> int:
        return len(self._entries)


def issue_token(
    session: SessionContext,
    issuer: IssuerKeyPair,
    now: float,
    lifetime: int = MAX_TOKEN_LIFETIME,
    *,
    max_lifetime: int = MAX_TOKEN_LIFETIME,
    randbytes: Callable[[int], bytes] | None = None,
    audit_log: AuditLog | None = None,
) -> ProvenanceToken:
    if session.is_expired(now):
        raise SessionExpired(session.session_id_hex)
    if lifetime > max_lifetime:
        raise LifetimeTooLong(f"{lifetime} > {max_lifetime}")
    if lifetime <= 0:
        raise ValueError("lifetime must be positive")
    if issuer.scheme != ED25519:
        raise ValueError("plain tokens need an ed25519 issuer key")
    nonce = (randbytes or os.urandom)(NONCE_LEN)
    issued = int(now)
    body = ProvenanceToken(
        TOKEN_VERSION, issuer.issuer_id, issuer.key_id, subject_attestation_for(session),
        nonce, issued, issued + int(lifetime), TokenMode.PLAIN,
    )
    token = replace(body, signature=issuer.sign(signing_message(body)))
    if audit_log is not None:
        audit_log.append("issue", session.session_id_hex, "Plain", now, nonce.hex())
    return token


def verify_token(
    token: ProvenanceToken | bytes,
    keys: KeyRing | PublicKey | IssuerKeyPair,
    now: float,
    replay_cache: ReplayCache | None = None,
    *,
    max_lifetime: int = MAX_TOKEN_LIFETIME,
    skew: float = DEFAULT_CLOCK_SKEW,
) -> Verdict:
    """Classify a token. Never raises for bad input.

    Precedence: Unverifiable > InvalidSignature > Expired > Replayed > Verified.
    Only a Verified outcome touches the replay cache.
    """
    if isinstance(token, (bytes, bytearray, memoryview)):
        try:
            token = decode_token(bytes(token))
        except DecodeError:
            return Verdict.UNVERIFIABLE
    elif not isinstance(token, ProvenanceToken):
        return Verdict.UNVERIFIABLE
    try:
        message = signing_message(token)
    except (ValueError, TypeError, OverflowError):
        return Verdict.UNVERIFIABLE
    if token.expires_at <= token.issued_at or token.expires_at - token.issued_at > max_lifetime:
        return Verdict.UNVERIFIABLE
    pub = as_keyring(keys).get(token.key_id)
    if pub is None or pub.issuer_id != token.issuer_id:
        return Verdict.UNVERIFIABLE
    expected_scheme = ED25519 if token.mode is TokenMode.PLAIN else RSA_BLIND
    if pub.scheme != expected_scheme:
        return Verdict.UNVERIFIABLE
    if not pub.verify(message, token.signature):
        return Verdict.INVALID_SIGNATURE
    if now > token.expires_at or now + skew < token.issued_at:
        return Verdict.EXPIRED
    if replay_cache is not None and not replay_cache.check_and_insert(token.session_nonce, token.expires_at, now):
        return Verdict.REPLAYED
    return Verdict.VERIFIED


# blind issuance ----------------------------------------------------------


def blind_request(public: PublicKey, message: bytes, randbelow=None) -> tuple[bytes, _blind.BlindingSecret]:
    if public.scheme != RSA_BLIND:
        raise NotBlindCapable(public.key_id)
    n, e = public.rsa_numbers
    return _blind.blind_request(n, e, message, randbelow)


def blind_sign(issuer: IssuerKeyPair, blinded_message: bytes) -> bytes:
    if not issuer.blind_capable:
        raise NotBlindCapable(issuer.key_id)
    return _blind.blind_sign(issuer._rsa_private(), blinded_message)


def unblind(blinded_signature: bytes, secret: _blind.BlindingSecret) -> bytes:
    return _blind.unblind(blinded_signature, secret)


@dataclass(frozen=True)
class BlindTokenRequest:
    """Client-side state between blinding and unblinding."""

    body: ProvenanceToken
    blinded_message: bytes
    secret: _blind.BlindingSecret

    def finish(self, blinded_signature: bytes) -> ProvenanceToken:
        return replace(self.body, signature=unblind(blinded_signature, self.secret))


def prepare_blind_token(
    public: PublicKey,
    now: float,
    lifetime: int = MAX_TOKEN_LIFETIME,
    randbytes: Callable[[int], bytes] | None = None,
) -> BlindTokenRequest:
    """Build an unlinkable token body and blind its signing message.

    The subject attestation is a fresh random credential tag, so the token
    carries no subscriber or session identifier.
    """
    rb = randbytes or os.urandom
    issued = int(now)
    body = ProvenanceToken(
        TOKEN_VERSION, public.issuer_id, public.key_id, rb(ATTESTATION_LEN), rb(NONCE_LEN),
        issued, issued + int(lifetime), TokenMode.BLINDED,
    )
    blinded, secret = blind_request(public, signing_message(body))
    return BlindTokenRequest(body, blinded, secret)
