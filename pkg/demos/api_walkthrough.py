"""The HTTP attestation service, driven in-process.

``poh serve`` runs the same application on a real socket.
"""

import json
import random
import warnings

warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")

from fastapi.testclient import TestClient  # noqa: E402

from poh.api import AttestationService, create_app, verify_status_signature  # noqa: E402
from poh.encoding import b64url_decode  # noqa: E402
from poh.packets import FlowId, SimPacket, inject_token  # noqa: E402


def main() -> None:
    rng = random.Random(11)
    service = AttestationService(blind_bits=None, randbytes=rng.randbytes)
    service.add_client("demo-app", "demo-key")
    service.registry.provision_subscriber("imsi-001", "imei-001", rng_seed=1)
    client = TestClient(create_app(service))
    auth = {"X-API-Key": "demo-key"}

    def call(method, url, body=None, headers=auth):
        r = client.request(method, url, json=body, headers=headers)
        print(f"{method} {url} -> {r.status_code} {json.dumps(r.json())[:110]}")
        return r.json()

    session = call("POST", "/v1/attach", {"subscriber_id": "imsi-001", "device_id": "imei-001"})
    sid = session["session_id"]
    call("POST", "/v1/attach", {"subscriber_id": "imsi-001", "device_id": "someone-elses-phone"})
    token = call("POST", "/v1/tokens", {"session_id": sid, "lifetime": 120})["token"]
    call("POST", "/v1/tokens", {"session_id": sid, "lifetime": 86400})
    call("POST", "/v1/verify", {"token": token}, headers={})
    call("POST", "/v1/verify", {"token": token}, headers={})

    # the token now rides on traffic that reaches the service's edge
    token2 = call("POST", "/v1/tokens", {"session_id": sid})["token"]
    pkt = inject_token(SimPacket(FlowId("10.0.0.9", "203.0.113.10", 50000, 443), 0, 0.0, 800), b64url_decode(token2))
    service.edge.process_packet(pkt, service.clock())
    status = call("GET", f"/v1/sessions/{sid}/poh")
    print("status signature valid:", verify_status_signature(status, service.service_key.public))
    call("GET", f"/v1/sessions/{sid}/poh", headers={})
    keys = call("GET", "/v1/keys", headers={})
    print("published issuer keys:", [k["key_id"] for k in keys["issuer_keys"]])


if __name__ == "__main__":
    main()
