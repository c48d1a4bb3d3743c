"""Chaum blind signatures over RSA full-domain hash.

The requester maps a message to an integer ``m = FDH(message) mod n``,
blinds it as ``m * r^e mod n`` with a random unit ``r``, and after the
signer returns ``(m r^e)^d = m^d r`` divides out ``r``. The signer only ever
sees ``m r^e`` and ``m^d r``, which are uniformly distributed over the units
mod ``n`` independently of ``m``.
"""

from __future__ import annotations

import hashlib
import math
import secrets
from dataclasses import dataclass

FDH_LABEL = b"poh/blind-fdh/v1"


@dataclass(frozen=True)
class RsaPrivate:
    n: int
    e: int
    d: int = 0
    p: int = 0
    q: int = 0
    dmp1: int = 0
    dmq1: int = 0
    iqmp: int = 0

    def __repr__(self) -> str:
        return f"RsaPrivate(bits={self.n.bit_length()})"


@dataclass(frozen=True)
class BlindingSecret:
    r_inv: int
    n: int

    def __repr__(self) -> str:
        return "BlindingSecret(<hidden>)"


def modulus_len(n: int) -> int:
    return (n.bit_length() + 7) // 8


def fdh(message: bytes, n: int) -> int:
    """Expand SHA-256 in counter mode to 64 bits past the modulus, reduce mod n."""
    need = modulus_len(n) + 8
    out = bytearray()
    ctr = 0
    while len(out) < need:
        out += hashlib.sha256(FDH_LABEL + b"\x00" + ctr.to_bytes(4, "big") + message).digest()
        ctr += 1
    return int.from_bytes(out[:need], "big") % n


def _private_op(key: RsaPrivate, c: int) -> int:
    if key.p and key.q:
        m1 = pow(c, key.dmp1, key.p)
        m2 = pow(c, key.dmq1, key.q)
        h = (key.iqmp * (m1 - m2)) % key.p
        return m2 + h * key.q
    return pow(c, key.d, key.n)


def blind_request(n: int, e: int, message: bytes, randbelow=None) -> tuple[bytes, BlindingSecret]:
    """Returns ``(blinded_message, unblinding_secret)``."""
    randbelow = randbelow or secrets.randbelow
    while True:
        r = randbelow(n - 2) + 2
        if math.gcd(r, n) == 1:
            break
    blinded = (fdh(message, n) * pow(r, e, n)) % n
    return blinded.to_bytes(modulus_len(n), "big"), BlindingSecret(pow(r, -1, n), n)


def blind_sign(key: RsaPrivate, blinded_message: bytes) -> bytes:
    c = int.from_bytes(blinded_message, "big")
    if len(blinded_message) != modulus_len(key.n) or not 0 < c < key.n:
        raise ValueError("blinded message out of range")
    return _private_op(key, c).to_bytes(modulus_len(key.n), "big")


def unblind(blinded_signature: bytes, secret: BlindingSecret) -> bytes:
    s = (int.from_bytes(blinded_signature, "big") * secret.r_inv) % secret.n
    return s.to_bytes(modulus_len(secret.n), "big")


def sign_plain(key: RsaPrivate, message: bytes) -> bytes:
    return _private_op(key, fdh(message, key.n)).to_bytes(modulus_len(key.n), "big")


def verify(n: int, e: int, message: bytes, signature: bytes) -> bool:
    if len(signature) != modulus_len(n):
        return False
    s = int.from_bytes(signature, "big")
    if not 0 < s < n:
        return False
    return pow(s, e, n) == fdh(message, n)
