"""Isolation forest in plain numpy.

Trees are stored flat (feature, threshold, children, node size) so a fitted
forest serialises to a handful of arrays. Anomaly score follows the usual
definition ``s(x) = 2 ** (-E[h(x)] / c(psi))`` where ``psi`` is the
subsample size and ``c`` the average unsuccessful-search path length of a
binary search tree.
"""

from __future__ import annotations

import math

import numpy as np

EULER_GAMMA = 0.5772156649015329


def average_path_length(n: np.ndarray | int) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + EULER_GAMMA) - 2.0 * (nb - 1.0) / nb
    return out


class IsolationForest:
    def __init__(self, n_trees: int = 100, subsample: int = 256, seed: int = 0) -> None:
        if n_trees < 1 or subsample < 2:
            raise ValueError("need n_trees >= 1 and subsample >= 2")
        self.n_trees = n_trees
        self.subsample = subsample
        self.seed = seed
        self.psi_: int | None = None
        self.feature_: np.ndarray | None = None
        self.threshold_: np.ndarray | None = None
        self.left_: np.ndarray | None = None
        self.right_: np.ndarray | None = None
        self.size_: np.ndarray | None = None
        self.roots_: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.roots_ is not None

    def fit(self, X: np.ndarray) -> "IsolationForest":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("X must be a non-empty 2-D array")
        rng = np.random.default_rng(self.seed)
        psi = min(self.subsample, X.shape[0])
        max_depth = max(1, math.ceil(math.log2(max(psi, 2))))
        feat, thr, left, right, size, roots = [], [], [], [], [], []
        for _ in range(self.n_trees):
            idx = rng.choice(X.shape[0], size=psi, replace=False) if X.shape[0] > psi else rng.permutation(X.shape[0])
            roots.append(len(feat))
            # iterative build: stack of (node index, rows, depth)
            feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1); size.append(len(idx))
            stack = [(roots[-1], X[idx], 0)]
            while stack:
                node, rows, depth = stack.pop()
                if depth >= max_depth or rows.shape[0] <= 1:
                    continue
                lo, hi = rows.min(axis=0), rows.max(axis=0)
                candidates = np.flatnonzero(hi > lo)
                if candidates.size == 0:
                    continue
                f = int(candidates[rng.integers(candidates.size)])
                t = float(rng.uniform(lo[f], hi[f]))
                mask = rows[:, f] < t
                if mask.all() or not mask.any():
                    # degenerate draw at the boundary
                    continue
                feat[node], thr[node] = f, t
                for side, part in ((left, rows[mask]), (right, rows[~mask])):
                    child = len(feat)
                    feat.append(-1); thr.append(0.0); left.append(-1); right.append(-1); size.append(part.shape[0])
                    side[node] = child
                    stack.append((child, part, depth + 1))
        self.psi_ = psi
        self.feature_ = np.asarray(feat, dtype=np.int32)
        self.threshold_ = np.asarray(thr, dtype=np.float64)
        self.left_ = np.asarray(left, dtype=np.int32)
        self.right_ = np.asarray(right, dtype=np.int32)
        self.size_ = np.asarray(size, dtype=np.int32)
        self.roots_ = np.asarray(roots, dtype=np.int32)
        return self

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        """Mean isolation depth per row, with the c(n) leaf correction."""
        if not self.fitted:
            raise RuntimeError("forest is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        rows = np.arange(X.shape[0])
        total = np.zeros(X.shape[0])
        for root in self.roots_:
            node = np.full(X.shape[0], root, dtype=np.int32)
            depth = np.zeros(X.shape[0])
            active = self.feature_[node] >= 0
            while active.any():
                n = node[active]
                f = self.feature_[n]
                go_left = X[rows[active], f] < self.threshold_[n]
                node[active] = np.where(go_left, self.left_[n], self.right_[n])
                depth[active] += 1
                active = self.feature_[node] >= 0
            total += depth + average_path_length(self.size_[node])
        return total / len(self.roots_)

    def anomaly_score(self, X: np.ndarray) -> np.ndarray:
        c = float(average_path_length(self.psi_))
        if c == 0:
            return np.full(np.atleast_2d(X).shape[0], 0.5)
        return np.power(2.0, -self.path_lengths(X) / c)

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "psi": np.asarray([self.psi_], dtype=np.int64),
            "feature": self.feature_,
            "threshold": self.threshold_,
            "left": self.left_,
            "right": self.right_,
            "size": self.size_,
            "roots": self.roots_,
        }

    @classmethod
    def from_arrays(cls, arrays, n_trees: int, subsample: int, seed: int) -> "IsolationForest":
        f = cls(n_trees, subsample, seed)
        f.psi_ = int(arrays["psi"][0])
        f.feature_ = np.asarray(arrays["feature"], dtype=np.int32)
        f.threshold_ = np.asarray(arrays["threshold"], dtype=np.float64)
        f.left_ = np.asarray(arrays["left"], dtype=np.int32)
        f.right_ = np.asarray(arrays["right"], dtype=np.int32)
        f.size_ = np.asarray(arrays["size"], dtype=np.int32)
        f.roots_ = np.asarray(arrays["roots"], dtype=np.int32)
        return f
