"""Blind issuance: the issuer signs a token it never sees.

The client blinds the token's signing message, the issuer signs the blinded
value, and the client unblinds. Anyone can verify the result against the
issuer's RSA key, yet the issuer cannot tell which signing request produced
which token.
"""

import random

from poh import IssuerKeyPair, KeyRing, ReplayCache, encode_token, verify_token
from poh.tokens import blind_sign, prepare_blind_token

T0 = 1_700_000_000.0


def main() -> None:
    rng = random.Random(3)
    issuer = IssuerKeyPair.generate_blind("telco", 2048)
    keys = KeyRing([issuer])
    print(f"blind issuer key {issuer.key_id}")

    requests = [prepare_blind_token(issuer.public, T0, 300, rng.randbytes) for _ in range(4)]
    signed = [blind_sign(issuer, r.blinded_message) for r in requests]
    print("what the issuer saw (blinded message prefixes):")
    for r in requests:
        print("  ", r.blinded_message[:12].hex())

    tokens = [r.finish(s) for r, s in zip(requests, signed)]
    rng.shuffle(tokens)
    cache = ReplayCache()
    print("what the verifier later sees (nonce prefixes, shuffled) and the verdicts:")
    for tok in tokens:
        wire = encode_token(tok)
        print(f"   {tok.session_nonce.hex()[:12]}  {len(wire)} bytes  {verify_token(wire, keys, T0 + 5, cache)}")
    print("the tokens carry a random credential tag, not a session id:", tokens[0].subject_attestation.hex()[:16], "...")
    print("second use of the first token:", verify_token(encode_token(tokens[0]), keys, T0 + 6, cache))


if __name__ == "__main__":
    main()
