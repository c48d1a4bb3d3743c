"""Human-likelihood scoring of flow features.

An isolation forest is fitted on the human-labelled part of a corpus (all of
it, if no labels are human). Its anomaly score is mapped to a human
likelihood with a logistic anchored on the training baseline: the median
training anomaly maps to 0.8 and the 95th percentile to 0.5. Higher scores
mean more human-typical.
"""

from __future__ import annotations

import enum
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import EmptyCorpus, ModelFormatError, ModelNotReady
from .flows import FlowFeatures
from .iforest import IsolationForest
from .packets import FlowId, SimPacket

MODEL_FORMAT = "poh-iforest/v1"
THETA_LO = 0.4
THETA_HI = 0.6
BASELINE_QUANTILE = 0.95


class Label(str, enum.Enum):
    LIKELY_HUMAN = "LikelyHuman"
    LIKELY_SYNTHETIC = "LikelySynthetic"
    INDETERMINATE = "Indeterminate"


SESSION_TAGS = {Label.INDETERMINATE: 0, Label.LIKELY_HUMAN: 1, Label.LIKELY_SYNTHETIC: 2}
TAG_SCORES = {0: 0.5, 1: 1.0, 2: 0.0}


@dataclass(frozen=True)
class HumanLikelihoodScore:
    score: float
    label: Label
    model_id: str


def model_space(features: FlowFeatures | np.ndarray) -> np.ndarray:
    """Log-compress the heavy-tailed features before isolation."""
    v = features.as_vector() if isinstance(features, FlowFeatures) else np.asarray(features, dtype=np.float64)
    v = np.atleast_2d(v)
    return np.column_stack([
        np.log10(1.0 + v[:, 0]),
        v[:, 1],
        np.log10(1.0 + v[:, 2]),
        np.log10(1.0 + v[:, 3]),
        v[:, 4],
    ])


def corpus_digest(X: np.ndarray, labels: Sequence[str]) -> str:
    h = hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update("\x00".join(labels).encode())
    return h.hexdigest()


def label_for(score: float, theta_lo: float = THETA_LO, theta_hi: float = THETA_HI) -> Label:
    if not theta_lo < theta_hi:
        raise ValueError("theta_lo must be below theta_hi")
    if score >= theta_hi:
        return Label.LIKELY_HUMAN
    if score <= theta_lo:
        return Label.LIKELY_SYNTHETIC
    return Label.INDETERMINATE


class AnomalyModel:
    def __init__(self, forest: IsolationForest, corpus_digest: str, s_median: float, s_quantile: float,
                 theta_lo: float = THETA_LO, theta_hi: float = THETA_HI) -> None:
        self.forest = forest
        self.corpus_digest = corpus_digest
        self.s_median = float(s_median)
        self.s_quantile = float(s_quantile)
        self.theta_lo = theta_lo
        self.theta_hi = theta_hi

    @property
    def hyperparameters(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "n_trees": self.forest.n_trees,
            "subsample": self.forest.subsample,
            "seed": self.forest.seed,
            "baseline_quantile": BASELINE_QUANTILE,
        }

    @property
    def model_id(self) -> str:
        blob = json.dumps(self.hyperparameters, sort_keys=True).encode() + self.corpus_digest.encode()
        return hashlib.sha256(blob).hexdigest()[:24]

    def human_likelihood(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        spread = self.s_quantile - self.s_median
        if spread <= 1e-12:
            return np.where(s <= self.s_quantile + 1e-12, 1.0, 0.0)
        k = math.log(4.0) / spread
        return 1.0 / (1.0 + np.exp(np.clip(k * (s - self.s_quantile), -700, 700)))

    def score(self, features: FlowFeatures | np.ndarray) -> np.ndarray:
        return self.human_likelihood(self.forest.anomaly_score(model_space(features)))

    def with_thresholds(self, theta_lo: float, theta_hi: float) -> "AnomalyModel":
        label_for(0.5, theta_lo, theta_hi)  # validates ordering
        m = AnomalyModel(self.forest, self.corpus_digest, self.s_median, self.s_quantile, theta_lo, theta_hi)
        return m

    # persistence --------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        meta = {
            "hyperparameters": self.hyperparameters,
            "corpus_digest": self.corpus_digest,
            "model_id": self.model_id,
            "calibration": [self.s_median, self.s_quantile],
            "thresholds": [self.theta_lo, self.theta_hi],
        }
        buf = io.BytesIO()
        np.savez_compressed(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                            **self.forest.to_arrays())
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "AnomalyModel":
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(data["meta"].tobytes().decode())
                arrays = {k: data[k] for k in data.files if k != "meta"}
        except (OSError, ValueError, KeyError) as exc:
            raise ModelFormatError(str(exc)) from exc
        hp = meta.get("hyperparameters", {})
        if hp.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"unsupported model format {hp.get('format')!r}")
        forest = IsolationForest.from_arrays(arrays, hp["n_trees"], hp["subsample"], hp["seed"])
        lo, hi = meta["thresholds"]
        model = cls(forest, meta["corpus_digest"], *meta["calibration"], theta_lo=lo, theta_hi=hi)
        if model.model_id != meta["model_id"]:
            raise ModelFormatError("embedded model_id does not match hyperparameter digest")
        return model


def train_anomaly_model(
    features: Sequence[FlowFeatures],
    labels: Sequence[str] | None = None,
    seed: int = 0,
    n_trees: int = 100,
    subsample: int = 256,
) -> AnomalyModel:
    """Fit on human-labelled rows (or every row when none is labelled human)."""
    if len(features) == 0:
        raise EmptyCorpus("no flows to train on")
    labels = list(labels) if labels is not None else ["unlabeled"] * len(features)
    if len(labels) != len(features):
        raise ValueError("features and labels differ in length")
    X = model_space(np.array([f.as_vector() for f in features]))
    human = np.array([lab == "human" for lab in labels])
    train = X[human] if human.any() else X
    forest = IsolationForest(n_trees, subsample, seed).fit(train)
    s = forest.anomaly_score(train)
    return AnomalyModel(forest, corpus_digest(X, labels), float(np.median(s)), float(np.quantile(s, BASELINE_QUANTILE)))


def classify(features: FlowFeatures, model: AnomalyModel | None) -> HumanLikelihoodScore:
    if model is None or not model.forest.fitted:
        raise ModelNotReady("model is not trained")
    score = float(model.score(features)[0])
    return HumanLikelihoodScore(score, label_for(score, model.theta_lo, model.theta_hi), model.model_id)


def tag_session(flow_id: FlowId, score: HumanLikelihoodScore) -> int:
    """DSCP-style class: 1 likely human, 0 indeterminate, 2 likely synthetic."""
    return SESSION_TAGS[score.label]


def apply_tag(packet: SimPacket, tag: int) -> SimPacket:
    return replace(packet, poh_tag=tag)


def roc_auc(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Rank-based (Mann-Whitney) AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0  # 1-based average rank per distinct value
    ranks = avg_rank[inverse]
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class Evaluation:
    auc: float
    confusion: dict  # true label -> predicted label -> count
    scores: tuple[float, ...]


def evaluate(model: AnomalyModel, features: Sequence[FlowFeatures], labels: Sequence[str]) -> Evaluation:
    X = np.array([f.as_vector() for f in features])
    scores = model.score(X)
    confusion = {t: {lab.value: 0 for lab in Label} for t in ("human", "bot")}
    for sc, t in zip(scores, labels):
        confusion[t][label_for(float(sc), model.theta_lo, model.theta_hi).value] += 1
    auc = roc_auc(scores, [lab == "human" for lab in labels])
    return Evaluation(auc, confusion, tuple(float(x) for x in scores))
