"""Network-level proof of humanity: subscriber-bound provenance tokens, edge
verification, flow-behaviour scoring and a tamper-evident audit trail."""

from .audit import AuditLog, verify_audit_file, verify_audit_log
from .classifier import AnomalyModel, classify, train_anomaly_model
from .edge import Action, EdgeConfig, EdgeVerifier, ProofState
from .flows import compute_features, generate_corpus, generate_trace
from .identity import SubscriberRegistry, derive_session_key
from .keys import IssuerKeyPair, KeyRing, PublicKey
from .merkle import chain_append, chain_prove, chain_verify
from .session import HandshakeTranscript, SessionAttestor
from .tokens import ProvenanceToken, ReplayCache, TokenMode, Verdict, decode_token, encode_token, issue_token, verify_token

__version__ = "0.1.0"

__all__ = [
    "Action", "AnomalyModel", "AuditLog", "EdgeConfig", "EdgeVerifier", "IssuerKeyPair", "KeyRing",
    "ProofState", "ProvenanceToken", "PublicKey", "ReplayCache", "HandshakeTranscript", "SessionAttestor", "SubscriberRegistry",
    "TokenMode", "Verdict", "chain_append", "chain_prove", "chain_verify", "classify", "compute_features",
    "decode_token", "derive_session_key", "encode_token", "generate_corpus", "generate_trace", "issue_token",
    "train_anomaly_model", "verify_audit_file", "verify_audit_log", "verify_token",
]
