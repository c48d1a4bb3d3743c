"""Issuer key material and key lookup.

Two schemes are supported: ``ed25519`` for plain tokens and session
attestations, and ``rsa-blind`` (RSA full-domain-hash, 2048-bit by default)
for Chaum blind issuance. Signing keys stay inside ``IssuerKeyPair``; only
``PublicKey`` objects are meant to be shared.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519, rsa
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from . import blind
from .errors import NotBlindCapable

ED25519 = "ed25519"
RSA_BLIND = "rsa-blind"


def _key_id(scheme: str, material: bytes) -> str:
    digest = hashlib.sha256(scheme.encode() + b"\x00" + material).hexdigest()
    return f"{scheme}:{digest[:16]}"


@dataclass(frozen=True)
class PublicKey:
    key_id: str
    issuer_id: str
    scheme: str
    material: bytes = field(repr=False)

    @property
    def rsa_numbers(self) -> tuple[int, int]:
        if self.scheme != RSA_BLIND:
            raise ValueError("not an RSA key")
        n_len = int.from_bytes(self.material[:2], "big")
        n = int.from_bytes(self.material[2 : 2 + n_len], "big")
        e = int.from_bytes(self.material[2 + n_len :], "big")
        return n, e

    def verify(self, message: bytes, signature: bytes) -> bool:
        if self.scheme == ED25519:
            if len(signature) != 64:
                return False
            try:
                ed25519.Ed25519PublicKey.from_public_bytes(self.material).verify(signature, message)
            except InvalidSignature:
                return False
            return True
        if self.scheme == RSA_BLIND:
            n, e = self.rsa_numbers
            return blind.verify(n, e, message, signature)
        return False

    def to_dict(self) -> dict:
        return {"key_id": self.key_id, "issuer_id": self.issuer_id, "scheme": self.scheme, "material": self.material.hex()}


class IssuerKeyPair:
    """A signing key with its public half. ``repr`` never shows secrets."""

    def __init__(self, issuer_id: str, scheme: str, private) -> None:
        self.issuer_id = issuer_id
        self.scheme = scheme
        self._private = private
        if scheme == ED25519:
            material = private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        elif scheme == RSA_BLIND:
            nums = private.public_key().public_numbers()
            n_bytes = nums.n.to_bytes((nums.n.bit_length() + 7) // 8, "big")
            material = len(n_bytes).to_bytes(2, "big") + n_bytes + nums.e.to_bytes((nums.e.bit_length() + 7) // 8, "big")
        else:
            raise ValueError(f"unknown scheme {scheme}")
        self.public = PublicKey(_key_id(scheme, material), issuer_id, scheme, material)

    @classmethod
    def generate(cls, issuer_id: str, seed: bytes | None = None) -> "IssuerKeyPair":
        """Ed25519 key; a 32-byte ``seed`` makes it reproducible."""
        if seed is None:
            priv = ed25519.Ed25519PrivateKey.generate()
        else:
            priv = ed25519.Ed25519PrivateKey.from_private_bytes(hashlib.sha256(b"poh/issuer-seed\x00" + seed).digest())
        return cls(issuer_id, ED25519, priv)

    @classmethod
    def generate_blind(cls, issuer_id: str, bits: int = 2048) -> "IssuerKeyPair":
        return cls(issuer_id, RSA_BLIND, rsa.generate_private_key(public_exponent=65537, key_size=bits))

    @property
    def key_id(self) -> str:
        return self.public.key_id

    @property
    def blind_capable(self) -> bool:
        return self.scheme == RSA_BLIND

    def sign(self, message: bytes) -> bytes:
        if self.scheme == ED25519:
            return self._private.sign(message)
        return blind.sign_plain(self._rsa_private(), message)

    def _rsa_private(self) -> blind.RsaPrivate:
        if self.scheme != RSA_BLIND:
            raise NotBlindCapable(self.key_id)
        pn = self._private.private_numbers()
        return blind.RsaPrivate(pn.public_numbers.n, pn.public_numbers.e, pn.d, pn.p, pn.q, pn.dmp1, pn.dmq1, pn.iqmp)

    def __repr__(self) -> str:
        return f"IssuerKeyPair(issuer_id={self.issuer_id!r}, key_id={self.key_id!r}, scheme={self.scheme!r})"


class KeyRing:
    """key_id -> PublicKey lookup used by verifiers."""

    def __init__(self, keys: Iterable[PublicKey | IssuerKeyPair] = ()) -> None:
        self._keys: dict[str, PublicKey] = {}
        for k in keys:
            self.add(k)

    def add(self, key: PublicKey | IssuerKeyPair) -> None:
        pub = key.public if isinstance(key, IssuerKeyPair) else key
        self._keys[pub.key_id] = pub

    def get(self, key_id: str) -> PublicKey | None:
        return self._keys.get(key_id)

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._keys

    def __iter__(self):
        return iter(self._keys.values())


def as_keyring(keys: "KeyRing | PublicKey | IssuerKeyPair | Mapping[str, PublicKey] | Iterable") -> KeyRing:
    if isinstance(keys, KeyRing):
        return keys
    if isinstance(keys, (PublicKey, IssuerKeyPair)):
        return KeyRing([keys])
    if isinstance(keys, Mapping):
        return KeyRing(keys.values())
    return KeyRing(keys)
