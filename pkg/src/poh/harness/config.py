"""Scenario files (YAML, schema ``poh-scenario/v1``).

Unknown keys, wrong types and out-of-range values raise ConfigInvalid with
the offending field path and, when known, its line in the file.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..errors import ConfigInvalid
from ..packets import Behavior

SCHEMA = "poh-scenario/v1"


@dataclass(frozen=True)
class AdversarySpec:
    behavior: Behavior
    hop: int
    start: float = 0.0
    stop: float = float("inf")
    impersonate: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    subscribers: int = 10
    flows_per_subscriber: int = 2
    human_fraction: float = 0.5
    bot_fraction: float = 0.5
    packets_per_flow: int = 60
    spread_s: float = 30.0
    hops: int = 5
    hop_latency_ms: tuple[float, float] = (0.2, 0.8)
    adversaries: tuple[AdversarySpec, ...] = ()
    replay_delay_s: float = 5.0
    replay_after_expiry: bool = True
    token_lifetime: int = 300
    refresh_s: float = 60.0
    blind_fraction: float = 0.0
    blind_bits: int = 2048
    theta_lo: float = 0.4
    theta_hi: float = 0.6
    train_flows: int = 300
    classifier_seed: int = 0
    classify_after: int = 32
    escalation_threshold: int = 10
    bucket_capacity: float = 20.0
    bucket_refill: float = 1.0
    escalate_on_exhaustion: bool = True
    expect: dict = field(default_factory=dict)


_EXPECT_KEYS = {
    "verified_fraction_min": float,
    "max_escalations": int,
    "min_escalations": int,
    "all_replays_detected": bool,
    "no_verified_duplicates": bool,
    "modified_never_verified": bool,
    "min_auc": float,
    "audit_ok": bool,
    "min_invalid_signature": int,
}


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=True)
    mapping["__lines__"] = {k.value: k.start_mark.line + 1 for k, _ in node.value if hasattr(k, "value")}
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Section:
    def __init__(self, data: dict, path: str) -> None:
        if not isinstance(data, dict):
            raise ConfigInvalid("expected a mapping", path or None)
        self.data = data
        self.path = path
        self.lines = data.get("__lines__", {})
        self.used: set[str] = set()

    def _field(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def line(self, key: str) -> int | None:
        return self.lines.get(key, self.data.get("__line__"))

    def fail(self, key: str, msg: str) -> ConfigInvalid:
        return ConfigInvalid(msg, self._field(key), self.line(key))

    def get(self, key: str, typ, default: Any = ..., check=None):
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                raise self.fail(key, "required field missing")
            return default
        v = self.data[key]
        if typ is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if typ is not Any and (not isinstance(v, typ) or (typ is not bool and isinstance(v, bool))):
            raise self.fail(key, f"expected {getattr(typ, '__name__', typ)}, got {type(v).__name__}")
        if check is not None:
            err = check(v)
            if err:
                raise self.fail(key, err)
        return v

    def section(self, key: str) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key, {}) or {}, self._field(key))

    def finish(self) -> None:
        extra = set(self.data) - self.used - {"__lines__", "__line__"}
        if extra:
            k = sorted(extra)[0]
            raise self.fail(k, "unknown field")


def _positive(v):
    return None if v > 0 else "must be > 0"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _fraction(v):
    return None if 0.0 <= v <= 1.0 else "must lie in [0, 1]"


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        raw = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigInvalid(f"YAML syntax error: {getattr(exc, 'problem', exc)}", None,
                            mark.line + 1 if mark else None) from exc
    top = _Section(raw if raw is not None else {}, "")
    schema = top.get("schema", str)
    if schema != SCHEMA:
        raise top.fail("schema", f"unsupported schema {schema!r} (expected {SCHEMA})")
    kw: dict[str, Any] = {
        "name": top.get("name", str),
        "seed": top.get("seed", int),
        "subscribers": top.get("subscribers", int, 10, _positive),
        "flows_per_subscriber": top.get("flows_per_subscriber", int, 2, _positive),
        "packets_per_flow": top.get("packets_per_flow", int, 60, lambda v: None if v >= 2 else "must be >= 2"),
        "spread_s": top.get("spread_s", float, 30.0, _non_negative),
        "blind_fraction": top.get("blind_fraction", float, 0.0, _fraction),
        "blind_bits": top.get("blind_bits", int, 2048, lambda v: None if v >= 1024 else "must be >= 1024"),
    }
    mix = top.section("mix")
    kw["human_fraction"] = mix.get("human", float, 0.5, _fraction)
    kw["bot_fraction"] = mix.get("bot", float, 0.5, _fraction)
    mix.finish()
    if abs(kw["human_fraction"] + kw["bot_fraction"] - 1.0) > 1e-9:
        raise mix.fail("human", "mix fractions must sum to 1")

    path = top.section("path")
    kw["hops"] = path.get("hops", int, 5, lambda v: None if 1 <= v <= 64 else "must lie in [1, 64]")
    lat = path.get("latency_ms", list, [0.2, 0.8])
    if len(lat) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in lat) or not 0 <= lat[0] <= lat[1]:
        raise path.fail("latency_ms", "expected [lo, hi] with 0 <= lo <= hi")
    kw["hop_latency_ms"] = (float(lat[0]), float(lat[1]))
    path.finish()

    advs = top.get("adversaries", list, [])
    specs = []
    for i, item in enumerate(advs):
        sec = _Section(item, f"adversaries[{i}]")
        name = sec.get("behavior", str)
        try:
            behavior = Behavior(name)
        except ValueError:
            raise sec.fail("behavior", f"unknown behavior {name!r}; choose from {[b.value for b in Behavior]}") from None
        hop = sec.get("hop", int, check=lambda v: None if 0 <= v < kw["hops"] else f"must lie in [0, {kw['hops']})")
        start = sec.get("start", float, 0.0, _non_negative)
        stop = sec.get("stop", float, float("inf"), lambda v: None if v > start else "must be > start")
        specs.append(AdversarySpec(behavior, hop, start, stop, sec.get("impersonate", bool, True)))
        sec.finish()
    if len({s.hop for s in specs}) != len(specs):
        raise top.fail("adversaries", "at most one adversary per hop")
    kw["adversaries"] = tuple(specs)

    rp = top.section("replay")
    kw["replay_delay_s"] = rp.get("delay_s", float, 5.0, _positive)
    kw["replay_after_expiry"] = rp.get("after_expiry", bool, True)
    rp.finish()

    tk = top.section("token")
    kw["token_lifetime"] = tk.get("lifetime", int, 300, _positive)
    kw["refresh_s"] = tk.get("refresh_s", float, 60.0, _positive)
    tk.finish()
    if kw["replay_delay_s"] >= kw["token_lifetime"]:
        raise rp.fail("delay_s", "must be shorter than the token lifetime")

    cl = top.section("classifier")
    kw["theta_lo"] = cl.get("theta_lo", float, 0.4, _fraction)
    kw["theta_hi"] = cl.get("theta_hi", float, 0.6, _fraction)
    if not kw["theta_lo"] < kw["theta_hi"]:
        raise cl.fail("theta_hi", "must exceed theta_lo")
    kw["train_flows"] = cl.get("train_flows", int, 300, _positive)
    kw["classifier_seed"] = cl.get("seed", int, 0)
    kw["classify_after"] = cl.get("classify_after", int, 32, lambda v: None if v >= 2 else "must be >= 2")
    cl.finish()

    ed = top.section("edge")
    kw["escalation_threshold"] = ed.get("escalation_threshold", int, 10, _positive)
    kw["bucket_capacity"] = ed.get("bucket_capacity", float, 20.0, _positive)
    kw["bucket_refill"] = ed.get("bucket_refill", float, 1.0, _non_negative)
    kw["escalate_on_exhaustion"] = ed.get("escalate_on_exhaustion", bool, True)
    ed.finish()

    ex = top.section("expect")
    expect = {}
    for key in ex.data:
        if key.startswith("__"):
            continue
        if key not in _EXPECT_KEYS:
            raise ex.fail(key, f"unknown expectation; choose from {sorted(_EXPECT_KEYS)}")
        expect[key] = ex.get(key, _EXPECT_KEYS[key])
    ex.finish()
    kw["expect"] = expect
    top.finish()
    return ScenarioConfig(**kw)


def bundled_scenarios() -> list[str]:
    root = resources.files("poh.harness") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path_or_name: str | os.PathLike) -> ScenarioConfig:
    """Load a scenario file, or a bundled scenario by name.

    Raises:
        ConfigInvalid: the file is missing or does not validate.
    """
    p = Path(path_or_name)
    if p.exists():
        return parse_scenario(p.read_text(encoding="utf-8"), str(p))
    name = str(path_or_name)
    if name in bundled_scenarios():
        text = (resources.files("poh.harness") / "scenarios" / f"{name}.yaml").read_text(encoding="utf-8")
        return parse_scenario(text, name)
    raise ConfigInvalid(f"no scenario file or bundled scenario named {name!r}")
