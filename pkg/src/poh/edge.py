"""Edge verification agent.

Consumes packets, verifies any carried token, and drives a per-session proof
state machine. Tokenless or badly attested traffic on a session that is not
Attested draws from a per-session token bucket and escalates after
``escalation_threshold`` consecutive bad packets or when the bucket runs dry.
Every packet and every state change is written to the audit log.

The full transition table lives in ``TRANSITIONS`` and is mirrored in
``docs/transition_table.csv``.
"""

from __future__ import annotations

import enum
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable

from .audit import AuditLog
from .classifier import TAG_SCORES
from .keys import KeyRing
from .merkle import ProvenanceChain, chain_append
from .packets import Absent, Corrupt, SimPacket, extract_token
from .ratelimit import TokenBucket
from .tokens import MAX_TOKEN_LIFETIME, ReplayCache, Verdict, decode_token, verify_token


class ProofState(str, enum.Enum):
    UNKNOWN = "Unknown"
    ATTESTED = "Attested"
    SUSPECT = "Suspect"
    ESCALATED = "Escalated"
    EXPIRED = "Expired"


class Event(str, enum.Enum):
    VERIFIED = "Verified"
    TOKEN_EXPIRED = "Expired"
    INVALID_SIGNATURE = "InvalidSignature"
    REPLAYED = "Replayed"
    UNVERIFIABLE = "Unverifiable"
    NO_TOKEN = "NoToken"
    WINDOW_LAPSE = "WindowLapse"
    ESCALATION = "EscalationTrigger"


class Action(str, enum.Enum):
    FORWARD = "Forward"
    RATE_LIMIT = "RateLimit"
    ESCALATE = "Escalate"


S, E = ProofState, Event
_BAD = (E.TOKEN_EXPIRED, E.INVALID_SIGNATURE, E.REPLAYED, E.UNVERIFIABLE)

TRANSITIONS: dict[tuple[ProofState, Event], ProofState] = {}
for _s in ProofState:
    TRANSITIONS[_s, E.WINDOW_LAPSE] = S.EXPIRED
for _s in (S.UNKNOWN, S.ATTESTED, S.SUSPECT, S.EXPIRED):
    TRANSITIONS[_s, E.VERIFIED] = S.ATTESTED
    for _e in _BAD:
        TRANSITIONS[_s, _e] = S.SUSPECT
    TRANSITIONS[_s, E.ESCALATION] = S.ESCALATED
TRANSITIONS[S.UNKNOWN, E.NO_TOKEN] = S.SUSPECT
TRANSITIONS[S.ATTESTED, E.NO_TOKEN] = S.ATTESTED
TRANSITIONS[S.SUSPECT, E.NO_TOKEN] = S.SUSPECT
TRANSITIONS[S.EXPIRED, E.NO_TOKEN] = S.SUSPECT
for _e in Event:
    if _e is not E.WINDOW_LAPSE:
        TRANSITIONS[S.ESCALATED, _e] = S.ESCALATED
del _s, _e

_VERDICT_EVENT = {
    Verdict.VERIFIED: E.VERIFIED,
    Verdict.EXPIRED: E.TOKEN_EXPIRED,
    Verdict.INVALID_SIGNATURE: E.INVALID_SIGNATURE,
    Verdict.REPLAYED: E.REPLAYED,
    Verdict.UNVERIFIABLE: E.UNVERIFIABLE,
}


def next_state(state: ProofState, event: Event) -> ProofState:
    return TRANSITIONS[state, event]


@dataclass(frozen=True)
class EdgeConfig:
    token_weight: float = 0.7
    flow_weight: float = 0.3
    escalation_threshold: int = 10
    escalate_on_exhaustion: bool = True
    bucket_capacity: float = 20.0
    bucket_refill: float = 1.0  # tokens per second
    idle_window: float = 300.0  # seconds a non-attested session stays open without traffic
    max_token_lifetime: int = MAX_TOKEN_LIFETIME

    def __post_init__(self) -> None:
        if abs(self.token_weight + self.flow_weight - 1.0) > 1e-9:
            raise ValueError("confidence weights must sum to 1")


@dataclass(frozen=True)
class SessionProofState:
    session_id: str
    state: ProofState = ProofState.UNKNOWN
    confidence: float = 0.0
    last_token_verdict: str | None = None
    mean_flow_score: float | None = None
    updated_at: float | None = None


@dataclass
class _Session:
    session_id: str
    bucket: TokenBucket
    state: ProofState = ProofState.UNKNOWN
    last_verdict: str | None = None
    consecutive_bad: int = 0
    window_end: float = float("inf")
    updated_at: float | None = None
    flow_scores: dict = field(default_factory=dict)
    chain: ProvenanceChain = field(default_factory=ProvenanceChain)
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass(frozen=True)
class PacketOutcome:
    action: Action
    state: SessionProofState
    verdict: str  # token verdict, or "Absent"
    latency_ns: int | None = None


class EdgeVerifier:
    """Per-session proof state store.

    Args:
        keys: trusted issuer public keys.
        resolver: maps a token's subject attestation to a session id (the
            Telco-side lookup); unresolvable tokens and tokenless packets on
            unbound flows are tracked under a flow-derived key.
    """

    def __init__(
        self,
        keys: KeyRing,
        audit_log: AuditLog | None = None,
        replay_cache: ReplayCache | None = None,
        config: EdgeConfig = EdgeConfig(),
        resolver: Callable[[bytes], str | None] | None = None,
    ) -> None:
        self.keys = keys
        self.audit_log = audit_log if audit_log is not None else AuditLog()
        self.replay_cache = replay_cache if replay_cache is not None else ReplayCache()
        self.config = config
        self.resolver = resolver or (lambda _att: None)
        self._sessions: dict[str, _Session] = {}
        self._flow_binding: dict[tuple, str] = {}
        self._store_lock = threading.Lock()
        self.latencies_ns: list[int] = []

    # session lookup -------------------------------------------------------

    def _session(self, session_id: str) -> _Session:
        with self._store_lock:
            s = self._sessions.get(session_id)
            if s is None:
                s = _Session(session_id, TokenBucket(self.config.bucket_capacity, self.config.bucket_refill))
                self._sessions[session_id] = s
            return s

    def _session_key(self, packet: SimPacket, token_bytes: bytes | None, verified: bool) -> str:
        # Only a token that verifies may claim its subscriber session. A bad
        # token (a replayed or forged copy) stays with the flow it arrived
        # on, so an attacker cannot push a victim session into escalation.
        flow = tuple(packet.flow_id)
        if verified:
            sid = self.resolver(decode_token(token_bytes).subject_attestation)
            if sid is not None:
                with self._store_lock:
                    self._flow_binding[flow] = sid
                return sid
        with self._store_lock:
            bound = self._flow_binding.get(flow)
        return bound if bound is not None else "flow:" + packet.flow_id.key()

    # main entry -----------------------------------------------------------

    def process_packet(self, packet: SimPacket, now: float) -> PacketOutcome:
        extracted = extract_token(packet)
        token_bytes = extracted if isinstance(extracted, bytes) else None
        latency = None
        if isinstance(extracted, Absent):
            verdict, event = "Absent", Event.NO_TOKEN
        elif isinstance(extracted, Corrupt):
            verdict, event = Verdict.UNVERIFIABLE.value, Event.UNVERIFIABLE
        else:
            t0 = time.perf_counter_ns()
            v = verify_token(token_bytes, self.keys, now, self.replay_cache,
                             max_lifetime=self.config.max_token_lifetime)
            latency = time.perf_counter_ns() - t0
            self.latencies_ns.append(latency)
            verdict, event = v.value, _VERDICT_EVENT[v]
        sid = self._session_key(packet, token_bytes, event is Event.VERIFIED)
        sess = self._session(sid)
        with sess.lock:
            ref = ""
            if token_bytes is not None:
                ref = decode_token(token_bytes).session_nonce.hex()
            self.audit_log.append("verify" if event is not Event.NO_TOKEN else "absent", sid, verdict, now, ref)

            if now > sess.window_end and sess.state is not ProofState.EXPIRED:
                self._move(sess, next_state(sess.state, Event.WINDOW_LAPSE), now)

            new = next_state(sess.state, event)
            if event is Event.VERIFIED:
                sess.consecutive_bad = 0
                tok = decode_token(token_bytes)
                sess.window_end = float(tok.expires_at)
                sess.chain = chain_append(sess.chain, token_bytes)
            elif new is not ProofState.ATTESTED:
                sess.consecutive_bad += 1
                sess.window_end = now + self.config.idle_window
            if event is not Event.NO_TOKEN:
                sess.last_verdict = verdict
            if packet.poh_tag is not None and packet.poh_tag in TAG_SCORES:
                sess.flow_scores.setdefault(packet.flow_id.key(), TAG_SCORES[packet.poh_tag])

            action = Action.FORWARD
            if new is ProofState.SUSPECT:
                has_token = sess.bucket.try_consume(now)
                if sess.consecutive_bad >= self.config.escalation_threshold or (
                    not has_token and self.config.escalate_on_exhaustion
                ):
                    new = next_state(new, Event.ESCALATION)
                elif not has_token:
                    action = Action.RATE_LIMIT
            if new is ProofState.ESCALATED:
                action = Action.ESCALATE
            elif new is not ProofState.ATTESTED and new is not ProofState.SUSPECT:
                action = Action.RATE_LIMIT
            self._move(sess, new, now)
            sess.updated_at = now
            snap = self._snapshot(sess, now)
        return PacketOutcome(action, snap, verdict, latency)

    def _move(self, sess: _Session, new: ProofState, now: float) -> None:
        if new is not sess.state:
            sess.state = new
            self.audit_log.append("state", sess.session_id, new.value, now, "")

    def record_flow_score(self, session_id: str, flow_key: str, score: float) -> None:
        """Explicit per-flow human-likelihood; overrides any tag-derived value."""
        if not 0.0 <= score <= 1.0:
            raise ValueError("score must lie in [0, 1]")
        sess = self._session(session_id)
        with sess.lock:
            sess.flow_scores[flow_key] = float(score)

    # queries ---------------------------------------------------------------

    def _snapshot(self, sess: _Session, now: float) -> SessionProofState:
        state = sess.state
        if now > sess.window_end:
            state = ProofState.EXPIRED
        mean = sum(sess.flow_scores.values()) / len(sess.flow_scores) if sess.flow_scores else None
        token_component = 1.0 if state is ProofState.ATTESTED and sess.last_verdict == Verdict.VERIFIED.value else 0.0
        conf = self.config.token_weight * token_component + self.config.flow_weight * (mean or 0.0)
        return SessionProofState(sess.session_id, state, min(1.0, max(0.0, conf)), sess.last_verdict, mean, sess.updated_at)

    def poh_status(self, session_id: str, now: float) -> SessionProofState:
        """Read-only snapshot; unknown ids report Unknown with confidence 0."""
        with self._store_lock:
            sess = self._sessions.get(session_id)
        if sess is None:
            return SessionProofState(session_id)
        with sess.lock:
            return self._snapshot(sess, now)

    def chain(self, session_id: str) -> ProvenanceChain:
        with self._store_lock:
            sess = self._sessions.get(session_id)
        return sess.chain if sess is not None else ProvenanceChain()

    def sessions(self) -> list[str]:
        with self._store_lock:
            return sorted(self._sessions)

    def state_counts(self, now: float) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for sid in self.sessions():
            counts[self.poh_status(sid, now).state.value] += 1
        return dict(counts)
