"""HTTP attestation service.

Endpoints (JSON bodies, base64url for binary fields):

    POST /v1/attach                 authenticated
    POST /v1/tokens                 authenticated
    POST /v1/verify                 public
    GET  /v1/sessions/{id}/poh      authenticated
    GET  /v1/keys                   public

Clients authenticate with an ``X-API-Key`` header; each client has its own
token bucket and exceeding it yields 429 with a Retry-After header. Error
bodies are ``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Literal

from fastapi import FastAPI, Header, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .audit import AuditLog
from .clock import wall_clock
from .edge import EdgeConfig, EdgeVerifier, SessionProofState
from .encoding import b64url_decode, b64url_encode
from .errors import (
    DeviceMismatch,
    LifetimeTooLong,
    NotBlindCapable,
    SessionExpired,
    SubscriberInactive,
    UnknownSubscriber,
)
from .identity import SessionContext, SubscriberRegistry
from .keys import IssuerKeyPair, KeyRing, PublicKey
from .ratelimit import TokenBucket
from .tokens import (
    MAX_TOKEN_LIFETIME,
    ReplayCache,
    blind_sign,
    decode_token,
    encode_token,
    issue_token,
    verify_token,
)
from .errors import DecodeError

STATUS_SIG_LABEL = b"poh/status/v1"


class Tier(str, enum.Enum):
    FREE = "Free"
    CERTIFIED = "Certified"


TIER_LIMITS = {Tier.FREE: (100.0, 1.0), Tier.CERTIFIED: (1000.0, 20.0)}


@dataclass
class ApiClient:
    client_id: str
    api_key_digest: bytes
    tier: Tier
    bucket: TokenBucket = field(repr=False)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str = "", headers: dict | None = None) -> None:
        super().__init__(message or code)
        self.status, self.code, self.message, self.headers = status, code, message or code, headers


def status_signing_bytes(doc: dict) -> bytes:
    body = {k: v for k, v in doc.items() if k != "signature"}
    return STATUS_SIG_LABEL + b"\x00" + json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def verify_status_signature(doc: dict, service_key: PublicKey) -> bool:
    try:
        sig = b64url_decode(doc["signature"])
    except (KeyError, ValueError):
        return False
    return service_key.verify(status_signing_bytes(doc), sig)


class AttestationService:
    """All shared state behind the HTTP surface.

    Args:
        network_id: serving network used for session-key derivation.
        clock: seconds-since-epoch callable (virtual in tests, wall in serve).
        blind_bits: RSA modulus size for the blind issuer key; ``None``
            disables blind issuance.
    """

    def __init__(
        self,
        registry: SubscriberRegistry | None = None,
        issuer: IssuerKeyPair | None = None,
        blind_issuer: IssuerKeyPair | None = None,
        service_key: IssuerKeyPair | None = None,
        audit_log: AuditLog | None = None,
        clock: Callable[[], float] = wall_clock,
        network_id: str = "net-desk",
        edge_config: EdgeConfig = EdgeConfig(),
        max_token_lifetime: int = MAX_TOKEN_LIFETIME,
        randbytes: Callable[[int], bytes] | None = None,
        blind_bits: int | None = 2048,
    ) -> None:
        self.audit_log = audit_log if audit_log is not None else AuditLog()
        self.registry = registry if registry is not None else SubscriberRegistry(self.audit_log, randbytes)
        if self.registry.audit_log is None:
            self.registry.audit_log = self.audit_log
        self.issuer = issuer or IssuerKeyPair.generate("telco")
        if blind_issuer is None and blind_bits:
            blind_issuer = IssuerKeyPair.generate_blind(self.issuer.issuer_id, blind_bits)
        self.blind_issuer = blind_issuer
        self.service_key = service_key or IssuerKeyPair.generate("telco-api")
        self.keys = KeyRing([self.issuer] + ([self.blind_issuer] if self.blind_issuer else []))
        self.clock = clock
        self.network_id = network_id
        self.max_token_lifetime = max_token_lifetime
        self._randbytes = randbytes or os.urandom
        self.replay_cache = ReplayCache()
        self._attestations: dict[bytes, str] = {}
        self._att_lock = threading.Lock()
        self.edge = EdgeVerifier(self.keys, self.audit_log, ReplayCache(), edge_config, self.resolve_attestation)
        self._clients: dict[bytes, ApiClient] = {}

    # clients ----------------------------------------------------------------

    def add_client(self, client_id: str, api_key: str, tier: Tier = Tier.FREE,
                   capacity: float | None = None, refill: float | None = None) -> ApiClient:
        cap, rate = TIER_LIMITS[Tier(tier)]
        digest = hashlib.sha256(api_key.encode()).digest()
        client = ApiClient(client_id, digest, Tier(tier), TokenBucket(capacity or cap, rate if refill is None else refill))
        self._clients[digest] = client
        return client

    def authenticate(self, api_key: str | None) -> ApiClient:
        if not api_key:
            raise ApiError(401, "Unauthenticated", "missing X-API-Key")
        digest = hashlib.sha256(api_key.encode()).digest()
        for known, client in self._clients.items():
            if hmac.compare_digest(known, digest):
                break
        else:
            raise ApiError(401, "Unauthenticated", "unknown API key")
        if not client.bucket.try_consume(self.clock()):
            raise ApiError(429, "Throttled", "rate limit exceeded", {"Retry-After": "1"})
        return client

    # operations ---------------------------------------------------------------

    def resolve_attestation(self, attestation: bytes) -> str | None:
        with self._att_lock:
            return self._attestations.get(attestation)

    def _session(self, session_id_hex: str) -> SessionContext:
        ctx = self.registry.session(session_id_hex)
        if ctx is None:
            raise ApiError(404, "UnknownSession", "no such session")
        return ctx

    def attach(self, subscriber_id: str, device_id: str) -> dict:
        try:
            ctx = self.registry.authenticate_attach(subscriber_id, device_id, self.network_id, self.clock())
        except UnknownSubscriber:
            raise ApiError(404, "UnknownSubscriber", "subscriber is not provisioned") from None
        except DeviceMismatch:
            raise ApiError(403, "DeviceMismatch", "device is not bound to this subscriber") from None
        except SubscriberInactive as exc:
            raise ApiError(403, type(exc).__name__, "subscriber is not active") from None
        return {"session_id": ctx.session_id_hex, "expires_at": ctx.expires_at}

    def issue(self, session_id: str, lifetime: int, mode: str, blinded_message: str | None) -> dict:
        ctx = self._session(session_id)
        now = self.clock()
        if ctx.is_expired(now):
            raise ApiError(410, "SessionExpired", "session has expired")
        if lifetime > self.max_token_lifetime:
            raise ApiError(422, "LifetimeTooLong", f"lifetime must be <= {self.max_token_lifetime}")
        if lifetime <= 0:
            raise ApiError(400, "MalformedRequest", "lifetime must be positive")
        if mode == "Plain":
            try:
                tok = issue_token(ctx, self.issuer, now, lifetime, max_lifetime=self.max_token_lifetime,
                                  randbytes=self._randbytes, audit_log=self.audit_log)
            except SessionExpired:
                raise ApiError(410, "SessionExpired", "session has expired") from None
            except LifetimeTooLong:
                raise ApiError(422, "LifetimeTooLong", "lifetime too long") from None
            with self._att_lock:
                self._attestations[tok.subject_attestation] = ctx.session_id_hex
            return {"mode": "Plain", "token": b64url_encode(encode_token(tok)), "expires_at": tok.expires_at}
        if self.blind_issuer is None:
            raise ApiError(422, "NotBlindCapable", "blind issuance is disabled")
        if blinded_message is None:
            raise ApiError(400, "MalformedRequest", "blinded_message is required in Blinded mode")
        try:
            blinded = b64url_decode(blinded_message)
            sig = blind_sign(self.blind_issuer, blinded)
        except (ValueError, NotBlindCapable):
            raise ApiError(400, "MalformedRequest", "blinded_message is not a valid blinded value") from None
        # the audit ref is a digest of the blinded value, never the session's token
        self.audit_log.append("issue", "blind", "Blinded", now, hashlib.sha256(blinded).hexdigest()[:32])
        return {"mode": "Blinded", "key_id": self.blind_issuer.key_id, "blinded_signature": b64url_encode(sig)}

    def verify(self, token_b64: str) -> dict:
        try:
            raw = b64url_decode(token_b64)
        except ValueError:
            raise ApiError(400, "MalformedRequest", "token is not base64url") from None
        now = self.clock()
        verdict = verify_token(raw, self.keys, now, self.replay_cache, max_lifetime=self.max_token_lifetime)
        try:
            ref = decode_token(raw).session_nonce.hex()
        except DecodeError:
            ref = ""
        self.audit_log.append("api.verify", "", verdict.value, now, ref)
        return {"verdict": verdict.value}

    def status_document(self, snap: SessionProofState) -> dict:
        doc = {
            "session_id": snap.session_id,
            "state": snap.state.value,
            "confidence": round(snap.confidence, 6),
            "last_verdict": snap.last_token_verdict,
            "issued_at": self.clock(),
            "key_id": self.service_key.key_id,
        }
        doc["signature"] = b64url_encode(self.service_key.sign(status_signing_bytes(doc)))
        return doc

    def poh(self, session_id: str) -> dict:
        self._session(session_id)
        return self.status_document(self.edge.poh_status(session_id, self.clock()))

    def public_keys(self) -> dict:
        return {
            "issuer_keys": [k.to_dict() for k in self.keys],
            "service_key": self.service_key.public.to_dict(),
        }


# HTTP layer --------------------------------------------------------------------


class _Body(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AttachRequest(_Body):
    subscriber_id: str = Field(min_length=1)
    device_id: str = Field(min_length=1)


class TokenRequest(_Body):
    session_id: str = Field(min_length=1)
    lifetime: int = MAX_TOKEN_LIFETIME
    mode: Literal["Plain", "Blinded"] = "Plain"
    blinded_message: str | None = None


class VerifyRequest(_Body):
    token: str


# Response shapes. Handlers return plain dicts; these models only document
# the wire format in the generated schema.


class AttachResponse(BaseModel):
    session_id: str = Field(description="hex session identifier")
    expires_at: float


class TokenResponse(BaseModel):
    mode: Literal["Plain", "Blinded"]
    token: str | None = Field(None, description="base64url token (Plain mode)")
    expires_at: int | None = None
    key_id: str | None = Field(None, description="blind issuer key id (Blinded mode)")
    blinded_signature: str | None = Field(None, description="base64url blinded signature (Blinded mode)")


class VerifyResponse(BaseModel):
    verdict: Literal["Verified", "Expired", "InvalidSignature", "Replayed", "Unverifiable"]


class PohStatusResponse(BaseModel):
    session_id: str
    state: Literal["Unknown", "Attested", "Suspect", "Escalated", "Expired"]
    confidence: float = Field(ge=0.0, le=1.0)
    last_verdict: str | None
    issued_at: float
    key_id: str
    signature: str = Field(description="base64url Ed25519 signature over the other fields")


class KeyDocument(BaseModel):
    key_id: str
    issuer_id: str
    scheme: str
    material: str = Field(description="hex public key material")


class KeysResponse(BaseModel):
    issuer_keys: list[KeyDocument]
    service_key: KeyDocument


class ErrorDetail(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: ErrorDetail


def _errors(*codes: int) -> dict:
    return {c: {"model": ErrorResponse} for c in (400, *codes)}


def _error(status: int, code: str, message: str, headers: dict | None = None) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status, headers=headers)


def create_app(service: AttestationService) -> FastAPI:
    app = FastAPI(title="poh attestation API", version="1.0")
    app.state.service = service

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError) -> JSONResponse:
        return _error(exc.status, exc.code, exc.message, exc.headers)

    @app.exception_handler(RequestValidationError)
    async def _bad_body(_req: Request, exc: RequestValidationError) -> JSONResponse:
        return _error(400, "MalformedRequest", "request body does not match the schema")

    ApiKey = Header(default=None, alias="X-API-Key")

    @app.post("/v1/attach", response_model=None, responses={200: {"model": AttachResponse}, **_errors(401, 403, 404, 429)})
    def attach(body: AttachRequest, x_api_key: str | None = ApiKey) -> dict:
        service.authenticate(x_api_key)
        return service.attach(body.subscriber_id, body.device_id)

    @app.post("/v1/tokens", response_model=None, responses={200: {"model": TokenResponse}, **_errors(401, 404, 410, 422, 429)})
    def tokens(body: TokenRequest, x_api_key: str | None = ApiKey) -> dict:
        service.authenticate(x_api_key)
        return service.issue(body.session_id, body.lifetime, body.mode, body.blinded_message)

    @app.post("/v1/verify", response_model=None, responses={200: {"model": VerifyResponse}, **_errors()})
    def verify(body: VerifyRequest) -> dict:
        return service.verify(body.token)

    @app.get("/v1/sessions/{session_id}/poh", response_model=None,
             responses={200: {"model": PohStatusResponse}, **_errors(401, 404, 429)})
    def poh(session_id: str, x_api_key: str | None = ApiKey) -> dict:
        service.authenticate(x_api_key)
        return service.poh(session_id)

    @app.get("/v1/keys", response_model=None, responses={200: {"model": KeysResponse}})
    def keys() -> dict:
        return service.public_keys()

    return app


def openapi_schema() -> dict:
    """The committed wire schema (independent of any key material).

    Request validation failures are answered with 400, so the framework's
    default 422 validation response is removed wherever the endpoint does
    not itself declare a 422.
    """
    schema = create_app(AttestationService(blind_bits=None)).openapi()
    for path in schema["paths"].values():
        for op in path.values():
            resp = op.get("responses", {})
            if "HTTPValidationError" in json.dumps(resp.get("422", {})):
                del resp["422"]
    for name in ("HTTPValidationError", "ValidationError"):
        schema.get("components", {}).get("schemas", {}).pop(name, None)
    return schema
