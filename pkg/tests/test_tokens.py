"""Token encoding, issuance, verification, replay cache and blind issuance."""

import random
import struct
import threading
from dataclasses import replace
from pathlib import Path

import pytest
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from hypothesis import given, settings, strategies as st

from poh.errors import DecodeError, LifetimeTooLong, NotBlindCapable, SessionExpired
from poh.keys import IssuerKeyPair, KeyRing
from poh.tokens import (
    ProvenanceToken,
    ReplayCache,
    TokenMode,
    Verdict,
    blind_request,
    blind_sign,
    canonical_encode,
    decode_token,
    encode_token,
    issue_token,
    prepare_blind_token,
    signing_message,
    subject_attestation_for,
    unblind,
    verify_token,
)
from poh.encoding import dhash

from conftest import T0

GOLDEN = Path(__file__).parent / "fixtures" / "token_v1.hex"


def golden_issuer():
    return IssuerKeyPair.generate("telco-golden", seed=b"golden-issuer")


def golden_token():
    iss = golden_issuer()
    body = ProvenanceToken(1, "telco-golden", iss.key_id, bytes(range(32)), bytes(range(0xA0, 0xB0)),
                           1_700_000_000, 1_700_000_300, TokenMode.PLAIN)
    return replace(body, signature=iss.sign(signing_message(body)))


class TestCanonicalEncoding:
    def test_golden_file_matches(self):
        assert encode_token(golden_token()).hex() == GOLDEN.read_text().strip()

    def test_golden_fields_by_hand(self):
        raw = bytes.fromhex(GOLDEN.read_text().strip())
        pos = 0

        def take(n):
            nonlocal pos
            chunk = raw[pos:pos + n]
            pos += n
            return chunk

        assert take(1) == b"\x01"
        (n,) = struct.unpack(">H", take(2))
        assert take(n) == b"telco-golden"
        (n,) = struct.unpack(">H", take(2))
        key_id = take(n).decode()
        assert key_id == golden_issuer().key_id and key_id.startswith("ed25519:")
        assert take(32) == bytes(range(32))
        assert take(16) == bytes(range(0xA0, 0xB0))
        assert struct.unpack(">QQ", take(16)) == (1_700_000_000, 1_700_000_300)
        assert take(1) == b"\x00"
        (n,) = struct.unpack(">H", take(2))
        sig = take(n)
        assert n == 64 and pos == len(raw)
        body = raw[:-(2 + n)]
        pub = Ed25519PublicKey.from_public_bytes(golden_issuer().public.material)
        pub.verify(sig, b"poh/token/v1\x00" + body)  # raises on mismatch

    def test_deterministic(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        assert canonical_encode(tok) == canonical_encode(tok)
        assert encode_token(tok) == encode_token(decode_token(encode_token(tok)))

    def test_single_nonce_byte_changes_encoding(self):
        tok = golden_token()
        other = replace(tok, session_nonce=b"\xff" + tok.session_nonce[1:])
        assert canonical_encode(tok) != canonical_encode(other)

    @settings(max_examples=300, deadline=None)
    @given(
        st.text(max_size=20), st.text(max_size=20), st.binary(min_size=32, max_size=32),
        st.binary(min_size=16, max_size=16), st.integers(0, 2**63), st.integers(0, 2**63),
        st.sampled_from(list(TokenMode)), st.binary(max_size=300),
    )
    def test_decode_inverts_encode(self, issuer_id, key_id, att, nonce, ia, ea, mode, sig):
        tok = ProvenanceToken(1, issuer_id, key_id, att, nonce, ia, ea, mode, sig)
        assert decode_token(encode_token(tok)) == tok

    @settings(max_examples=200, deadline=None)
    @given(st.data())
    def test_encoding_is_injective(self, data):
        # decode is a left inverse, so distinct tokens can never share an encoding
        fields = st.tuples(st.text(max_size=4), st.text(max_size=4), st.binary(min_size=32, max_size=32),
                           st.binary(min_size=16, max_size=16), st.integers(0, 10), st.integers(0, 10),
                           st.sampled_from(list(TokenMode)), st.binary(max_size=4))
        a = ProvenanceToken(1, *data.draw(fields))
        b = ProvenanceToken(1, *data.draw(fields))
        assert (encode_token(a) == encode_token(b)) == (a == b)

    @pytest.mark.parametrize("raw", [b"", b"\x02", bytes.fromhex("01"), b"\x01" + b"\x00" * 10])
    def test_malformed_bytes_raise(self, raw):
        with pytest.raises(DecodeError):
            decode_token(raw)

    def test_trailing_bytes_rejected(self):
        with pytest.raises(DecodeError):
            decode_token(encode_token(golden_token()) + b"\x00")

    def test_unknown_mode_rejected(self):
        raw = bytearray(encode_token(golden_token()))
        mode_at = len(raw) - 2 - 64 - 1
        raw[mode_at] = 7
        with pytest.raises(DecodeError):
            decode_token(bytes(raw))


class TestIssue:
    def test_round_trip_verified(self, session, issuer, audit):
        tok = issue_token(session, issuer, T0, 300, audit_log=audit)
        assert verify_token(encode_token(tok), issuer, T0 + 1, ReplayCache()) is Verdict.VERIFIED
        assert tok.mode is TokenMode.PLAIN and tok.lifetime == 300
        assert audit.entries()[-1].type == "issue" and audit.entries()[-1].ref == tok.session_nonce.hex()

    def test_attestation_binds_session_key_and_id(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        expected = dhash(b"poh/attest/v1", session.session_key, session.session_id)
        assert tok.subject_attestation == expected == subject_attestation_for(session)

    def test_lifetime_boundary(self, session, issuer):
        issue_token(session, issuer, T0, 300)
        with pytest.raises(LifetimeTooLong):
            issue_token(session, issuer, T0, 301)

    def test_expired_session(self, session, issuer):
        with pytest.raises(SessionExpired):
            issue_token(session, issuer, session.expires_at)

    def test_hundred_issues_distinct(self, session, issuer):
        toks = [issue_token(session, issuer, T0) for _ in range(100)]
        assert len({t.session_nonce for t in toks}) == 100
        assert len({t.signature for t in toks}) == 100


class TestVerify:
    def test_second_verification_replayed(self, session, issuer):
        raw = encode_token(issue_token(session, issuer, T0))
        cache = ReplayCache()
        assert verify_token(raw, issuer, T0 + 1, cache) is Verdict.VERIFIED
        assert verify_token(raw, issuer, T0 + 2, cache) is Verdict.REPLAYED

    def test_signature_bit_flip(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        for bit in range(0, 512, 37):
            sig = bytearray(tok.signature)
            sig[bit // 8] ^= 1 << (bit % 8)
            assert verify_token(replace(tok, signature=bytes(sig)), issuer, T0 + 1) is Verdict.INVALID_SIGNATURE

    def test_expiry_boundary(self, session, issuer):
        tok = issue_token(session, issuer, T0, 300)
        assert verify_token(tok, issuer, tok.expires_at) is Verdict.VERIFIED
        assert verify_token(tok, issuer, tok.expires_at + 0.001) is Verdict.EXPIRED

    def test_not_yet_valid_is_expired(self, session, issuer):
        tok = issue_token(session, issuer, T0 + 100)
        assert verify_token(tok, issuer, T0 + 96) is Verdict.VERIFIED  # within skew
        assert verify_token(tok, issuer, T0 + 90) is Verdict.EXPIRED

    def test_random_bytes_unverifiable(self, issuer):
        rng = random.Random(3)
        for n in (0, 1, 50, 172, 500):
            assert verify_token(rng.randbytes(n), issuer, T0) is Verdict.UNVERIFIABLE

    def test_unknown_key_and_wrong_issuer(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        stranger = IssuerKeyPair.generate("telco", seed=b"other")
        assert verify_token(tok, stranger, T0) is Verdict.UNVERIFIABLE
        renamed = IssuerKeyPair.generate("someone-else", seed=b"test-issuer")
        assert verify_token(tok, renamed, T0) is Verdict.UNVERIFIABLE

    def test_precedence_invalid_signature_beats_expired_and_replayed(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        cache = ReplayCache()
        assert verify_token(tok, issuer, T0, cache) is Verdict.VERIFIED
        bad = replace(tok, signature=bytes(64))
        assert verify_token(bad, issuer, T0 + 10_000, cache) is Verdict.INVALID_SIGNATURE
        assert verify_token(bad, issuer, T0 + 1, cache) is Verdict.INVALID_SIGNATURE

    def test_precedence_expired_beats_replayed(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        cache = ReplayCache()
        verify_token(tok, issuer, T0, cache)
        assert verify_token(tok, issuer, tok.expires_at + 1, cache) is Verdict.EXPIRED

    def test_overlong_lifetime_unverifiable_even_if_signed(self, issuer):
        body = ProvenanceToken(1, issuer.issuer_id, issuer.key_id, b"a" * 32, b"n" * 16, int(T0), int(T0) + 301,
                               TokenMode.PLAIN)
        tok = replace(body, signature=issuer.sign(signing_message(body)))
        assert verify_token(tok, issuer, T0) is Verdict.UNVERIFIABLE

    def test_only_verified_touches_cache(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        cache = ReplayCache()
        verify_token(replace(tok, signature=bytes(64)), issuer, T0, cache)
        verify_token(tok, issuer, tok.expires_at + 1, cache)
        assert len(cache) == 0
        assert verify_token(tok, issuer, T0 + 1, cache) is Verdict.VERIFIED

    def test_mutation_fuzz_never_verifies(self, session, issuer):
        raw = encode_token(issue_token(session, issuer, T0))
        rng = random.Random(11)
        for _ in range(2000):
            buf = bytearray(raw)
            i = rng.randrange(len(buf))
            buf[i] ^= 1 << rng.randrange(8)
            assert verify_token(bytes(buf), issuer, T0 + 1, ReplayCache()) is not Verdict.VERIFIED


class TestReplayCache:
    def test_rejected_until_expiry_then_evicted(self):
        cache = ReplayCache()
        assert cache.check_and_insert(b"n" * 16, T0 + 300, T0)
        for dt in (0, 1, 150, 300):
            assert not cache.check_and_insert(b"n" * 16, T0 + 300, T0 + dt)
        assert cache.check_and_insert(b"n" * 16, T0 + 900, T0 + 301)

    def test_expired_token_never_verified_again(self, session, issuer):
        tok = issue_token(session, issuer, T0)
        cache = ReplayCache()
        verify_token(tok, issuer, T0, cache)
        for dt in (301, 400, 10_000):
            assert verify_token(tok, issuer, T0 + dt, cache) is Verdict.EXPIRED

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(1, 50), st.integers(0, 20)), max_size=60))
    def test_matches_dictionary_oracle(self, ops):
        cache, oracle, now = ReplayCache(), {}, 0.0
        for nonce_i, ttl, dt in ops:
            now += dt
            nonce = bytes([nonce_i]) * 16
            live = nonce in oracle and oracle[nonce] >= now
            expected = not live
            if expected:
                oracle[nonce] = now + ttl
            assert cache.check_and_insert(nonce, now + ttl, now) == expected

    def test_concurrent_single_acceptance(self, session, issuer):
        tok = encode_token(issue_token(session, issuer, T0))
        cache = ReplayCache()
        results = []
        barrier = threading.Barrier(16)

        def worker():
            barrier.wait()
            results.append(verify_token(tok, issuer, T0 + 1, cache))

        threads = [threading.Thread(target=worker) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results.count(Verdict.VERIFIED) == 1
        assert results.count(Verdict.REPLAYED) == 15


class TestBlind:
    def test_round_trip(self, blind_issuer):
        msg = b"some message"
        blinded, secret = blind_request(blind_issuer.public, msg)
        sig = unblind(blind_sign(blind_issuer, blinded), secret)
        assert blind_issuer.public.verify(msg, sig)
        assert not blind_issuer.public.verify(msg + b"x", sig)

    def test_blinded_message_is_not_the_message(self, blind_issuer):
        msg = b"some message"
        blinded, _ = blind_request(blind_issuer.public, msg)
        blinded_sig = blind_sign(blind_issuer, blinded)
        assert msg not in blinded
        assert not blind_issuer.public.verify(msg, blinded_sig)

    def test_not_blind_capable(self, issuer):
        with pytest.raises(NotBlindCapable):
            blind_sign(issuer, b"\x01" * 256)
        with pytest.raises(NotBlindCapable):
            blind_request(issuer.public, b"m")

    def test_blind_token_verifies_and_carries_no_session_bytes(self, session, blind_issuer, issuer):
        req = prepare_blind_token(blind_issuer.public, T0, 300)
        tok = req.finish(blind_sign(blind_issuer, req.blinded_message))
        keys = KeyRing([issuer, blind_issuer])
        assert verify_token(encode_token(tok), keys, T0 + 1, ReplayCache()) is Verdict.VERIFIED
        raw = encode_token(tok)
        for secret in (session.session_id, session.subscriber_id.encode(), subject_attestation_for(session)):
            assert secret not in raw

    def test_blind_token_under_plain_key_unverifiable(self, blind_issuer, issuer):
        req = prepare_blind_token(blind_issuer.public, T0, 300)
        tok = req.finish(blind_sign(blind_issuer, req.blinded_message))
        assert verify_token(replace(tok, key_id=issuer.key_id), KeyRing([issuer]), T0) is Verdict.UNVERIFIABLE
