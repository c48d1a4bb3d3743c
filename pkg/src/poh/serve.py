"""Running the attestation service as a long-lived process.

Service configuration is a small YAML file::

    schema: poh-serve/v1
    host: 127.0.0.1
    port: 8080
    audit_log: audit.jsonl
    network_id: net-desk
    blind_bits: 2048            # 0 disables blind issuance
    issuer_seed: "demo-issuer"  # optional; omit for a random issuer key
    clients:
      - {id: demo, api_key: demo-key, tier: Free}
    subscribers:                # optional demo population
      - {id: imsi-001, device: imei-001, seed: 1}
    registry_snapshot: registry.tsv   # optional secret snapshot to load
"""

from __future__ import annotations

import errno
import socket
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import yaml

from .api import AttestationService, Tier, create_app
from .audit import AuditLog
from .clock import wall_clock
from .errors import ConfigInvalid, PortInUse
from .identity import SubscriberRegistry
from .keys import IssuerKeyPair

SERVE_SCHEMA = "poh-serve/v1"


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    audit_log: str | None = None
    network_id: str = "net-desk"
    blind_bits: int = 2048
    issuer_seed: str | None = None
    clients: list[dict] = field(default_factory=list)
    subscribers: list[dict] = field(default_factory=list)
    registry_snapshot: str | None = None


def parse_serve_config(text: str) -> ServeConfig:
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigInvalid(f"not valid YAML: {getattr(exc, 'problem', exc)}",
                            line=mark.line + 1 if mark else None) from None
    if not isinstance(raw, dict):
        raise ConfigInvalid("top level must be a mapping")
    if raw.get("schema", SERVE_SCHEMA) != SERVE_SCHEMA:
        raise ConfigInvalid(f"unsupported schema {raw.get('schema')!r}", field="schema")
    known = set(ServeConfig.__dataclass_fields__) | {"schema"}
    for key in raw:
        if key not in known:
            raise ConfigInvalid("unknown key", field=str(key))
    cfg = ServeConfig(**{k: v for k, v in raw.items() if k != "schema"})
    if not isinstance(cfg.port, int) or not 0 <= cfg.port <= 65535:
        raise ConfigInvalid("must be an integer in 0..65535", field="port")
    for i, c in enumerate(cfg.clients):
        if not isinstance(c, dict) or not {"id", "api_key"} <= set(c):
            raise ConfigInvalid("each client needs id and api_key", field=f"clients[{i}]")
        if c.get("tier", "Free") not in {t.value for t in Tier}:
            raise ConfigInvalid(f"unknown tier {c.get('tier')!r}", field=f"clients[{i}].tier")
    for i, s in enumerate(cfg.subscribers):
        if not isinstance(s, dict) or not {"id", "device"} <= set(s):
            raise ConfigInvalid("each subscriber needs id and device", field=f"subscribers[{i}]")
    return cfg


def load_serve_config(path: str | Path) -> ServeConfig:
    return parse_serve_config(Path(path).read_text(encoding="utf-8"))


def build_service(cfg: ServeConfig) -> AttestationService:
    audit = AuditLog(cfg.audit_log)
    if cfg.registry_snapshot:
        registry = SubscriberRegistry.load_snapshot(cfg.registry_snapshot, audit_log=audit)
    else:
        registry = SubscriberRegistry(audit)
    now = wall_clock()
    for s in cfg.subscribers:
        registry.provision_subscriber(s["id"], s["device"], rng_seed=s.get("seed"), now=now)
    issuer = IssuerKeyPair.generate("telco", seed=cfg.issuer_seed.encode()) if cfg.issuer_seed else None
    service = AttestationService(registry, issuer, audit_log=audit, network_id=cfg.network_id,
                                 blind_bits=cfg.blind_bits or None)
    for c in cfg.clients:
        service.add_client(c["id"], c["api_key"], Tier(c.get("tier", "Free")))
    return service


def bind_socket(host: str, port: int) -> socket.socket:
    """Bind the listening socket up front so a busy port fails fast."""
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"{host}:{port} is already in use") from None
        raise
    sock.listen(128)
    return sock


def serve(cfg: ServeConfig, on_ready: Callable[[str], None] | None = None) -> None:
    """Run until interrupted; the audit log is closed on the way out."""
    import uvicorn

    service = build_service(cfg)
    sock = bind_socket(cfg.host, cfg.port)
    host, port = sock.getsockname()[:2]
    ready_line = f"poh serve: ready on http://{host}:{port}"

    class _Server(uvicorn.Server):
        async def startup(self, sockets=None):
            await super().startup(sockets=sockets)
            (on_ready or (lambda line: print(line, flush=True)))(ready_line)

    server = _Server(uvicorn.Config(create_app(service), log_level="warning", lifespan="off"))
    try:
        server.run(sockets=[sock])
    finally:
        service.audit_log.close()
        sock.close()
        print(f"poh serve: stopped; audit log has {len(service.audit_log.entries())} entries", file=sys.stderr, flush=True)
