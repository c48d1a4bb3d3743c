"""Payload-free behavioural features of packet flows, plus synthetic traces.

All timestamps are integer microseconds. Features only look at arrival
times and flow tuples; byte counts are carried for completeness.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import InvalidParams
from .packets import FlowId

US = 1_000_000


@dataclass(frozen=True)
class FeatureConfig:
    bin_lo_us: float = 100.0  # 0.1 ms
    bin_hi_us: float = 10.0 * US
    n_bins: int = 16
    burst_gap_us: float = 10_000.0
    reuse_window_s: float = 60.0

    def bin_edges(self) -> np.ndarray:
        return np.logspace(math.log10(self.bin_lo_us), math.log10(self.bin_hi_us), self.n_bins + 1)


DEFAULT_FEATURES = FeatureConfig()


@dataclass(frozen=True)
class FlowRecord:
    flow_id: FlowId
    packet_times: np.ndarray  # int64 µs, ascending
    byte_counts: np.ndarray | None = None
    start: int | None = None
    end: int | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.packet_times, dtype=np.int64)
        if times.ndim != 1:
            raise InvalidParams("packet_times must be one-dimensional")
        if times.size > 1 and np.any(np.diff(times) < 0):
            raise InvalidParams("packet_times must be sorted ascending")
        object.__setattr__(self, "packet_times", times)
        if self.byte_counts is not None:
            object.__setattr__(self, "byte_counts", np.asarray(self.byte_counts, dtype=np.int64))
        if self.start is None:
            object.__setattr__(self, "start", int(times[0]) if times.size else 0)
        if self.end is None:
            object.__setattr__(self, "end", int(times[-1]) if times.size else self.start)
        if self.end < self.start:
            raise InvalidParams("end precedes start")

    @property
    def n_packets(self) -> int:
        return int(self.packet_times.size)

    def head(self, n: int) -> "FlowRecord":
        """The first ``n`` packets as a flow of their own."""
        bc = None if self.byte_counts is None else self.byte_counts[:n]
        return FlowRecord(self.flow_id, self.packet_times[:n], bc)


@dataclass(frozen=True)
class FlowFeatures:
    iat_variance: float  # µs²
    iat_entropy: float  # bits
    burst_density: float  # bursts per second
    flow_lifetime: float  # seconds
    reuse_ratio: float

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.iat_variance, self.iat_entropy, self.burst_density, self.flow_lifetime, self.reuse_ratio],
            dtype=np.float64,
        )


def iat_histogram(iats_us: np.ndarray, config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """Counts per logarithmic bin; values outside the span clamp to the end bins."""
    inner = config.bin_edges()[1:-1]
    idx = np.searchsorted(inner, np.asarray(iats_us, dtype=np.float64), side="right")
    return np.bincount(idx, minlength=config.n_bins)


def entropy_bits(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    h = float(-(p * np.log2(p)).sum())
    return h if h > 0 else 0.0


def count_bursts(iats_us: np.ndarray, gap_us: float) -> int:
    """Number of maximal runs of consecutive sub-gap inter-arrivals."""
    short = np.asarray(iats_us) < gap_us
    if short.size == 0:
        return 0
    starts = short & ~np.concatenate(([False], short[:-1]))
    return int(starts.sum())


def reuse_ratio(flow: FlowRecord, context: Iterable[FlowRecord], window_s: float) -> float:
    """1 - distinct tuples / total flows among flows started in the window ending at this flow's end."""
    lo = flow.end - window_s * US
    tuples = [flow.flow_id]
    for other in context:
        if other is flow:
            continue
        if lo <= other.start <= flow.end:
            tuples.append(other.flow_id)
    return 1.0 - len(set(tuples)) / len(tuples)


def compute_features(
    flow: FlowRecord,
    context: Iterable[FlowRecord] = (),
    config: FeatureConfig = DEFAULT_FEATURES,
) -> FlowFeatures:
    lifetime = (flow.end - flow.start) / US
    reuse = reuse_ratio(flow, context, config.reuse_window_s)
    if flow.n_packets < 2:
        return FlowFeatures(0.0, 0.0, 0.0, lifetime, reuse)
    iats = np.diff(flow.packet_times).astype(np.float64)
    variance = float(np.var(iats, ddof=1)) if iats.size > 1 else 0.0
    entropy = entropy_bits(iat_histogram(iats, config))
    bursts = count_bursts(iats, config.burst_gap_us)
    density = bursts / lifetime if lifetime > 0 else 0.0
    return FlowFeatures(variance, entropy, density, lifetime, reuse)


# synthetic traces ----------------------------------------------------------


@dataclass(frozen=True)
class HumanParams:
    """Think-time / interaction-cluster model of interactive traffic."""

    n_packets: int = 200
    think_median_s: float = 1.2
    think_sigma: float = 1.0
    cluster_mean: float = 5.0  # packets per interaction (geometric)
    intra_median_ms: float = 4.0
    intra_sigma: float = 0.9
    size_median: float = 600.0


@dataclass(frozen=True)
class BotParams:
    """Machine cadence: fixed-period heartbeats or uniform machine-rate bursts."""

    n_packets: int = 200
    mode: Literal["heartbeat", "burst"] = "heartbeat"
    period_ms: float = 50.0
    jitter_ms: float = 0.5
    burst_size: int = 8
    burst_gap_ms: float = 2.0
    burst_period_s: float = 1.0
    size: int = 400


def _check_human(p: HumanParams) -> None:
    if p.n_packets < 1:
        raise InvalidParams("n_packets must be >= 1")
    for name in ("think_median_s", "cluster_mean", "intra_median_ms", "size_median"):
        if getattr(p, name) <= 0:
            raise InvalidParams(f"{name} must be > 0")
    if p.think_sigma < 0 or p.intra_sigma < 0:
        raise InvalidParams("sigmas must be >= 0")
    if p.cluster_mean < 1:
        raise InvalidParams("cluster_mean must be >= 1")


def _check_bot(p: BotParams) -> None:
    if p.n_packets < 1:
        raise InvalidParams("n_packets must be >= 1")
    if p.mode not in ("heartbeat", "burst"):
        raise InvalidParams(f"unknown bot mode {p.mode!r}")
    for name in ("period_ms", "burst_gap_ms", "burst_period_s", "size", "burst_size"):
        if getattr(p, name) <= 0:
            raise InvalidParams(f"{name} must be > 0")
    if not 0 <= p.jitter_ms <= 1.0:
        raise InvalidParams("jitter_ms must lie in [0, 1]")
    if p.mode == "heartbeat" and p.jitter_ms >= p.period_ms:
        raise InvalidParams("jitter must be smaller than the period")


def _human_iats(p: HumanParams, n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        out[i] = rng.lognormal(math.log(p.think_median_s * US), p.think_sigma)
        i += 1
        k = min(int(rng.geometric(1.0 / p.cluster_mean)) - 1, n - i)
        if k > 0:
            out[i : i + k] = rng.lognormal(math.log(p.intra_median_ms * 1000.0), p.intra_sigma, size=k)
            i += k
    return out


def _bot_iats(p: BotParams, n: int, rng: np.random.Generator) -> np.ndarray:
    jit = p.jitter_ms * 1000.0
    if p.mode == "heartbeat":
        return p.period_ms * 1000.0 + rng.uniform(-jit, jit, size=n)
    pos = np.arange(n) % p.burst_size
    gap = p.burst_gap_ms * 1000.0
    between = p.burst_period_s * US - (p.burst_size - 1) * gap
    iats = np.where(pos == 0, max(between, gap), gap)
    return iats + rng.uniform(-jit, jit, size=n)


def generate_trace(
    kind: Literal["human", "bot"],
    params: HumanParams | BotParams | None = None,
    seed: int = 0,
    flow_id: FlowId | None = None,
    start_us: int = 0,
) -> FlowRecord:
    """Deterministic synthetic flow for the given seed."""
    kind = kind.lower()
    rng = np.random.default_rng(seed)
    flow_id = flow_id or FlowId("10.0.0.1", "198.51.100.7", 40000 + seed % 20000, 443)
    if kind == "human":
        p = params or HumanParams()
        if not isinstance(p, HumanParams):
            raise InvalidParams("human traces need HumanParams")
        _check_human(p)
        iats = _human_iats(p, p.n_packets - 1, rng)
        sizes = np.clip(rng.lognormal(math.log(p.size_median), 0.8, size=p.n_packets), 40, 1500)
    elif kind == "bot":
        p = params or BotParams()
        if not isinstance(p, BotParams):
            raise InvalidParams("bot traces need BotParams")
        _check_bot(p)
        iats = _bot_iats(p, p.n_packets - 1, rng)
        sizes = np.full(p.n_packets, p.size)
    else:
        raise InvalidParams(f"unknown trace kind {kind!r}")
    iats = np.maximum(np.rint(iats), 1).astype(np.int64)
    times = start_us + np.concatenate(([0], np.cumsum(iats)))
    return FlowRecord(flow_id, times, sizes.astype(np.int64))


# labelled corpora ----------------------------------------------------------

CORPUS_FORMAT = "poh-corpus/v1"


@dataclass(frozen=True)
class LabeledFlow:
    flow: FlowRecord
    label: Literal["human", "bot"]


def generate_corpus(
    n_human: int,
    n_bot: int,
    seed: int = 0,
    flows_per_host: int = 5,
    human: HumanParams = HumanParams(),
    bot: BotParams = BotParams(),
    bot_burst_fraction: float = 0.5,
) -> list[LabeledFlow]:
    """Mixed corpus. Human hosts open each flow from a fresh ephemeral port;
    bot hosts reconnect on the same tuple, so connection reuse shows up in
    the context window."""
    rng = np.random.default_rng(seed)
    out: list[LabeledFlow] = []
    for label, count in (("human", n_human), ("bot", n_bot)):
        for i in range(count):
            host, slot = divmod(i, flows_per_host)
            src = f"10.{1 if label == 'human' else 2}.{host // 250}.{host % 250 + 1}"
            if label == "human":
                fid = FlowId(src, "198.51.100.7", 32768 + int(rng.integers(0, 28000)), 443)
                params = human
            else:
                fid = FlowId(src, "198.51.100.9", 50000 + host % 10000, 443)
                mode = "burst" if rng.random() < bot_burst_fraction else "heartbeat"
                params = BotParams(**{**bot.__dict__, "mode": mode})
            start = int(slot * 20 * US + rng.integers(0, 5 * US))
            out.append(LabeledFlow(generate_trace(label, params, seed=int(rng.integers(0, 2**31)), flow_id=fid, start_us=start), label))
    return out


def corpus_features(corpus: Sequence[LabeledFlow], config: FeatureConfig = DEFAULT_FEATURES) -> list[FlowFeatures]:
    """Features for every flow, using flows that share its endpoint pair as context."""
    by_pair: dict[tuple[str, str], list[FlowRecord]] = {}
    for lf in corpus:
        by_pair.setdefault((lf.flow.flow_id.src, lf.flow.flow_id.dst), []).append(lf.flow)
    return [
        compute_features(lf.flow, by_pair[(lf.flow.flow_id.src, lf.flow.flow_id.dst)], config)
        for lf in corpus
    ]


def write_corpus(path: str | os.PathLike, corpus: Iterable[LabeledFlow]) -> None:
    """One JSON object per line after a format header line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": CORPUS_FORMAT}) + "\n")
        for lf in corpus:
            rec = {
                "flow_id": list(lf.flow.flow_id),
                "label": lf.label,
                "times_us": lf.flow.packet_times.tolist(),
            }
            if lf.flow.byte_counts is not None:
                rec["bytes"] = lf.flow.byte_counts.tolist()
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_corpus(path: str | os.PathLike) -> list[LabeledFlow]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline() or "{}")
        if header.get("format") != CORPUS_FORMAT:
            raise InvalidParams(f"not a {CORPUS_FORMAT} file")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                fid = FlowId(*d["flow_id"])
                label = d["label"]
                if label not in ("human", "bot"):
                    raise ValueError(f"bad label {label!r}")
                out.append(LabeledFlow(FlowRecord(fid, d["times_us"], d.get("bytes")), label))
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidParams(f"line {lineno}: {exc}") from exc
    return out
