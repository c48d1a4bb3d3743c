"""HTTP attestation service via the ASGI test client."""

import json
import random
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from poh.api import AttestationService, Tier, create_app, openapi_schema, verify_status_signature
from poh.clock import VirtualClock
from poh.encoding import b64url_decode, b64url_encode
from poh.identity import SubscriberRegistry
from poh.keys import IssuerKeyPair, KeyRing
from poh.tokens import ReplayCache, decode_token, encode_token, prepare_blind_token, verify_token

from conftest import T0

DOCS = Path(__file__).resolve().parent.parent / "docs"
KEY = {"X-API-Key": "k-free"}


@pytest.fixture
def svc(issuer, blind_issuer):
    clock = VirtualClock(T0)
    rnd = random.Random(5)
    service = AttestationService(
        registry=SubscriberRegistry(randbytes=rnd.randbytes),
        issuer=issuer,
        blind_issuer=blind_issuer,
        service_key=IssuerKeyPair.generate("telco-api", seed=b"api-test"),
        clock=clock.now,
        randbytes=rnd.randbytes,
    )
    service.clock_handle = clock
    service.add_client("free", "k-free")
    service.registry.provision_subscriber("imsi-1", "imei-1", rng_seed=1, now=T0)
    return service


@pytest.fixture
def client(svc):
    return TestClient(create_app(svc))


def attach(client):
    r = client.post("/v1/attach", json={"subscriber_id": "imsi-1", "device_id": "imei-1"}, headers=KEY)
    assert r.status_code == 200, r.text
    return r.json()["session_id"]


def error_code(r):
    return r.json()["error"]["code"]


class TestHappyPath:
    def test_attach_issue_verify(self, client):
        sid = attach(client)
        r = client.post("/v1/tokens", json={"session_id": sid, "lifetime": 120}, headers=KEY)
        assert r.status_code == 200 and r.json()["mode"] == "Plain"
        token = r.json()["token"]
        assert decode_token(b64url_decode(token)).lifetime == 120
        assert client.post("/v1/verify", json={"token": token}).json() == {"verdict": "Verified"}
        assert client.post("/v1/verify", json={"token": token}).json() == {"verdict": "Replayed"}

    def test_status_document_is_signed(self, client, svc):
        sid = attach(client)
        doc = client.get(f"/v1/sessions/{sid}/poh", headers=KEY).json()
        assert doc["state"] == "Unknown" and doc["confidence"] == 0.0
        assert verify_status_signature(doc, svc.service_key.public)
        assert not verify_status_signature(dict(doc, state="Attested"), svc.service_key.public)

    def test_keys_and_idempotent_get(self, client, svc):
        a = client.get("/v1/keys").json()
        b = client.get("/v1/keys").json()
        assert a == b
        assert {k["key_id"] for k in a["issuer_keys"]} == {svc.issuer.key_id, svc.blind_issuer.key_id}
        sid = attach(client)
        s1 = client.get(f"/v1/sessions/{sid}/poh", headers=KEY).json()
        s2 = client.get(f"/v1/sessions/{sid}/poh", headers=KEY).json()
        assert s1 == s2

    def test_blinded_issuance(self, client, svc):
        sid = attach(client)
        ctx = svc.registry.session(sid)
        req = prepare_blind_token(svc.blind_issuer.public, T0, 120, random.Random(9).randbytes)
        r = client.post("/v1/tokens", headers=KEY, json={
            "session_id": sid, "lifetime": 120, "mode": "Blinded",
            "blinded_message": b64url_encode(req.blinded_message)})
        assert r.status_code == 200, r.text
        body = r.json()
        assert set(body) == {"mode", "key_id", "blinded_signature"}
        token = req.finish(b64url_decode(body["blinded_signature"]))
        assert client.post("/v1/verify", json={"token": b64url_encode(encode_token(token))}).json()["verdict"] == "Verified"
        wire = encode_token(token)
        for secret in (ctx.session_id, ctx.session_key, ctx.auth_nonce):
            assert secret not in wire
            assert secret.hex() not in r.text
        log_text = "\n".join(e.to_line() for e in svc.audit_log.entries() if e.type == "issue")
        assert sid not in log_text

    def test_no_secrets_in_responses_or_log(self, client, svc):
        sid = attach(client)
        texts = [client.post("/v1/tokens", json={"session_id": sid}, headers=KEY).text,
                 client.get(f"/v1/sessions/{sid}/poh", headers=KEY).text,
                 client.get("/v1/keys").text]
        texts += [e.to_line() for e in svc.audit_log.entries()]
        ctx = svc.registry.session(sid)
        root = svc.registry._root_key("imsi-1")
        for secret in (ctx.session_key, root):
            for t in texts:
                assert secret.hex() not in t and b64url_encode(secret) not in t


class TestErrors:
    def test_401_missing_and_unknown_key(self, client):
        body = {"subscriber_id": "imsi-1", "device_id": "imei-1"}
        assert client.post("/v1/attach", json=body).status_code == 401
        r = client.post("/v1/attach", json=body, headers={"X-API-Key": "nope"})
        assert r.status_code == 401 and error_code(r) == "Unauthenticated"

    def test_403_and_404_on_attach(self, client, svc):
        r = client.post("/v1/attach", json={"subscriber_id": "imsi-1", "device_id": "other"}, headers=KEY)
        assert (r.status_code, error_code(r)) == (403, "DeviceMismatch")
        r = client.post("/v1/attach", json={"subscriber_id": "ghost", "device_id": "x"}, headers=KEY)
        assert (r.status_code, error_code(r)) == (404, "UnknownSubscriber")
        svc.registry.suspend("imsi-1")
        r = client.post("/v1/attach", json={"subscriber_id": "imsi-1", "device_id": "imei-1"}, headers=KEY)
        assert (r.status_code, error_code(r)) == (403, "SubscriberSuspended")

    def test_token_errors(self, client, svc):
        sid = attach(client)
        r = client.post("/v1/tokens", json={"session_id": sid, "lifetime": 10_000}, headers=KEY)
        assert (r.status_code, error_code(r)) == (422, "LifetimeTooLong")
        r = client.post("/v1/tokens", json={"session_id": "00" * 16}, headers=KEY)
        assert (r.status_code, error_code(r)) == (404, "UnknownSession")
        r = client.post("/v1/tokens", json={"session_id": sid, "mode": "Blinded"}, headers=KEY)
        assert (r.status_code, error_code(r)) == (400, "MalformedRequest")
        svc.clock_handle.advance(10**7)
        r = client.post("/v1/tokens", json={"session_id": sid}, headers=KEY)
        assert (r.status_code, error_code(r)) == (410, "SessionExpired")

    def test_not_blind_capable(self, issuer):
        service = AttestationService(issuer=issuer, blind_bits=None, clock=lambda: T0)
        service.add_client("c", "k")
        service.registry.provision_subscriber("s", "d", rng_seed=1, now=T0)
        c = TestClient(create_app(service))
        sid = c.post("/v1/attach", json={"subscriber_id": "s", "device_id": "d"}, headers={"X-API-Key": "k"}).json()["session_id"]
        r = c.post("/v1/tokens", json={"session_id": sid, "mode": "Blinded", "blinded_message": "AA"}, headers={"X-API-Key": "k"})
        assert (r.status_code, error_code(r)) == (422, "NotBlindCapable")

    @pytest.mark.parametrize("body", [{}, {"token": 5}, {"token": "x", "extra": 1}, "not json"])
    def test_malformed_bodies_are_400(self, client, body):
        r = client.post("/v1/verify", content=body) if isinstance(body, str) else client.post("/v1/verify", json=body)
        assert (r.status_code, error_code(r)) == (400, "MalformedRequest")

    def test_garbage_token_is_unverifiable(self, client):
        assert client.post("/v1/verify", json={"token": "AAAA"}).json()["verdict"] == "Unverifiable"
        assert client.post("/v1/verify", json={"token": "!!!"}).status_code == 400

    def test_429_with_retry_after(self, client, svc):
        svc.add_client("tiny", "k-tiny", Tier.FREE, capacity=2, refill=0.0)
        h = {"X-API-Key": "k-tiny"}
        codes = [client.get("/v1/sessions/00/poh", headers=h).status_code for _ in range(3)]
        assert codes == [404, 404, 429]
        r = client.get("/v1/sessions/00/poh", headers=h)
        assert r.headers["Retry-After"] == "1" and error_code(r) == "Throttled"


class TestAgreement:
    def test_api_matches_library_verdicts(self, client, svc, issuer):
        sid = attach(client)
        lib_cache = ReplayCache()
        keys = KeyRing([svc.issuer, svc.blind_issuer])
        rnd = random.Random(3)
        issued = [client.post("/v1/tokens", json={"session_id": sid, "lifetime": 60}, headers=KEY).json()["token"]
                  for _ in range(20)]
        for _ in range(100):
            tok = bytearray(b64url_decode(rnd.choice(issued)))
            if rnd.random() < 0.5:
                tok[rnd.randrange(len(tok))] ^= 1 << rnd.randrange(8)
            expected = verify_token(bytes(tok), keys, T0, lib_cache).value
            got = client.post("/v1/verify", json={"token": b64url_encode(bytes(tok))}).json()["verdict"]
            assert got == expected


def test_committed_schema_is_current():
    committed = json.loads((DOCS / "api_schema.json").read_text())
    assert committed == json.loads(json.dumps(openapi_schema()))
