"""The edge's view of one session, and the audit trail it leaves behind."""

import random
import tempfile
from pathlib import Path

from poh import (
    AuditLog,
    EdgeConfig,
    EdgeVerifier,
    IssuerKeyPair,
    KeyRing,
    SubscriberRegistry,
    encode_token,
    issue_token,
    verify_audit_file,
)
from poh.packets import FlowId, SimPacket, flip_signature_bit, inject_token
from poh.tokens import subject_attestation_for

T0 = 1_700_000_000.0


def main() -> None:
    rng = random.Random(5)
    workdir = Path(tempfile.mkdtemp())
    audit = AuditLog(workdir / "audit.jsonl")
    registry = SubscriberRegistry(audit, rng.randbytes)
    issuer = IssuerKeyPair.generate("telco", seed=b"demo-issuer")
    registry.provision_subscriber("imsi-7", "imei-7", rng_seed=7, now=T0)
    session = registry.authenticate_attach("imsi-7", "imei-7", "net-demo", T0)

    resolver = {subject_attestation_for(session): session.session_id_hex}.get
    edge = EdgeVerifier(KeyRing([issuer]), audit, config=EdgeConfig(escalation_threshold=3), resolver=resolver)
    flow = FlowId("10.1.1.1", "203.0.113.10", 40001, 443)

    def send(t, wire=None, note=""):
        pkt = SimPacket(flow, 0, T0 + t, 500)
        out = edge.process_packet(inject_token(pkt, wire) if wire else pkt, T0 + t)
        print(f"  t={t:>5}s {note:<28} verdict={out.verdict:<16} state={out.state.state.value:<10} "
              f"action={out.action.value:<9} confidence={out.state.confidence:.2f}")

    def token(t, lifetime=60):
        return encode_token(issue_token(session, issuer, T0 + t, lifetime, randbytes=rng.randbytes))

    first = token(0)
    send(0, first, "fresh token")
    send(10, None, "plain packet")
    send(20, first, "same token again")
    send(30, token(30), "fresh token")
    edge.record_flow_score(session.session_id_hex, flow.key(), 0.9)
    send(40, None, "classifier scored flow 0.9")
    send(200, None, "plain packet after expiry")
    for t in (201, 202):
        send(t, flip_signature_bit(token(t)), "forged signature")
    send(210, token(210), "fresh token")

    audit.close()
    path = workdir / "audit.jsonl"
    print(f"\naudit log {path}: {verify_audit_file(path)}")
    lines = path.read_text().splitlines()
    target = next(i for i, line in enumerate(lines) if '"verdict":"Verified"' in line)
    lines[target] = lines[target].replace('"verdict":"Verified"', '"verdict":"Replayed"')
    path.write_text("\n".join(lines) + "\n")
    print(f"after rewriting entry {target} from Verified to Replayed: {verify_audit_file(path)}")


if __name__ == "__main__":
    main()
