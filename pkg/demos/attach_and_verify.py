"""A subscriber attaches, gets a token, and the token crosses five hops.

Then the same token is replayed, tampered with and chained into a session's
provenance tree.
"""

import random

from poh import (
    AuditLog,
    IssuerKeyPair,
    KeyRing,
    ReplayCache,
    SubscriberRegistry,
    chain_append,
    chain_prove,
    chain_verify,
    encode_token,
    issue_token,
    verify_token,
    verify_audit_log,
)
from poh.merkle import ProvenanceChain
from poh.packets import FlowId, SimPacket, extract_token, flip_signature_bit, forward_path, honest_path, inject_token

T0 = 1_700_000_000.0


def main() -> None:
    rng = random.Random(1)
    audit = AuditLog()
    registry = SubscriberRegistry(audit, rng.randbytes)
    issuer = IssuerKeyPair.generate("telco", seed=b"demo-issuer")
    keys, cache = KeyRing([issuer]), ReplayCache()

    registry.provision_subscriber("imsi-001", "imei-001", rng_seed=42, now=T0)
    session = registry.authenticate_attach("imsi-001", "imei-001", "net-demo", T0)
    print(f"attached: session {session.session_id_hex}, expires in {session.expires_at - T0:.0f} s")

    token = issue_token(session, issuer, T0, lifetime=120, randbytes=rng.randbytes, audit_log=audit)
    wire = encode_token(token)
    print(f"token issued: {len(wire)} bytes, key {token.key_id}, valid until +{token.lifetime} s")

    packet = inject_token(SimPacket(FlowId("10.0.0.7", "203.0.113.10", 51515, 443), 0, T0, 1200), wire)
    delivery = forward_path(packet, honest_path(5), T0, rng)
    for hop in delivery.trace:
        print(f"  hop {hop.hop} ({hop.node_id}) at +{(hop.at - T0) * 1e3:.2f} ms: header {hop.header}")
    arrived = extract_token(delivery.packet)
    print("edge verdict:", verify_token(arrived, keys, delivery.arrived_at, cache))

    print("same header again:", verify_token(arrived, keys, delivery.arrived_at + 1, cache))
    print("one signature bit flipped:", verify_token(flip_signature_bit(arrived), keys, T0 + 2, ReplayCache()))
    print("after expiry:", verify_token(arrived, keys, token.expires_at + 10, ReplayCache()))

    chain = ProvenanceChain()
    for i in range(5):
        chain = chain_append(chain, encode_token(issue_token(session, issuer, T0 + i, randbytes=rng.randbytes)))
    proof = chain_prove(chain, 3)
    print(f"provenance chain of {len(chain)} tokens, root {chain.root.hex()[:16]}...")
    print(f"  inclusion proof for token 3 ({len(proof.to_bytes())} bytes) verifies:",
          chain_verify(chain.root, chain.leaves[3], proof))
    print("  the same proof for token 2 verifies:", chain_verify(chain.root, chain.leaves[2], proof))

    check = verify_audit_log(audit)
    print(f"audit log: {check.count} entries, intact={check.ok}")


if __name__ == "__main__":
    main()
