"""Short-term KNN and long-term linear SVM scorers.

Both map a feature vector to a score in [0, 1] that is thresholded at
``tau`` by the labeling rules. The KNN remembers only the last ``window``
frames; the SVM is retrained from scratch on every co-labeled sample seen
so far.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DegenerateTrainingSet(ValueError):
    """SVM training data contains a single class."""


class LabeledStore:
    """Labeled feature vectors stamped with the frame that produced them.

    ``window=None`` keeps everything; otherwise an entry stamped ``s`` is
    dropped once a later update at frame ``t`` has ``s <= t - window``.
    """

    def __init__(self, window: int | None = None, dtype=np.float64):
        if window is not None and window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        self.window = window
        self.dtype = dtype
        self._chunks: deque[tuple[int, np.ndarray, np.ndarray]] = deque()
        self._cache = None

    def __len__(self):
        return sum(len(c[2]) for c in self._chunks)

    def add(self, t: int, features: np.ndarray, labels) -> None:
        if self._chunks and t < self._chunks[-1][0]:
            raise ValueError(f"frame stamps must be nondecreasing: {t} after {self._chunks[-1][0]}")
        y = np.asarray(labels, dtype=np.int8).ravel()
        X = np.asarray(features, dtype=self.dtype)
        X = X.reshape(len(y), -1) if len(y) else X
        if not np.isin(y, (-1, 1)).all():
            raise ValueError("labels must be +1 or -1")
        if len(y):
            self._chunks.append((t, X, y))
        self.evict(t)
        self._cache = None

    def evict(self, t: int) -> None:
        if self.window is None:
            return
        while self._chunks and self._chunks[0][0] <= t - self.window:
            self._chunks.popleft()
            self._cache = None

    def _arrays(self):
        if self._cache is None:
            if not self._chunks:
                self._cache = (np.empty(0, np.int64), np.empty((0, 0), self.dtype), np.empty(0, np.int8))
            else:
                stamps = np.concatenate([np.full(len(y), t, np.int64) for t, _, y in self._chunks])
                self._cache = (
                    stamps,
                    np.concatenate([X for _, X, _ in self._chunks]),
                    np.concatenate([y for _, _, y in self._chunks]),
                )
        return self._cache

    @property
    def stamps(self) -> np.ndarray:
        return self._arrays()[0]

    @property
    def features(self) -> np.ndarray:
        return self._arrays()[1]

    @property
    def labels(self) -> np.ndarray:
        return self._arrays()[2]


class KnnModel:
    """k-nearest-neighbour vote over a sliding window of recent frames."""

    def __init__(self, k: int = 5, window: int | None = 10):
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        # single precision halves the cost of the per-frame distance matrix
        self.store = LabeledStore(window, dtype=np.float32)

    def __len__(self):
        return len(self.store)

    def update(self, t: int, features: np.ndarray, labels) -> KnnModel:
        self.store.add(t, features, labels)
        return self

    def score(self, x: np.ndarray) -> np.ndarray | float:
        """Fraction of positive labels among the k' = min(k, |store|) nearest entries.

        Equal distances are resolved in store order, which is frame order
        and then insertion order.
        """
        if len(self.store) == 0:
            raise RuntimeError("KNN store is empty; seed it before scoring")
        single = np.ndim(x) == 1
        X = np.atleast_2d(np.asarray(x, dtype=np.float32))
        F = self.store.features
        d = (X**2).sum(1)[:, None] - 2.0 * (X @ F.T) + (F**2).sum(1)[None, :]
        np.maximum(d, 0.0, out=d)
        kk = min(self.k, len(F))
        h = _count_nearest_positive(d, self.store.labels > 0, kk) / kk
        return float(h[0]) if single else h


def _count_nearest_positive(d: np.ndarray, positive: np.ndarray, kk: int) -> np.ndarray:
    """Positives among the kk smallest entries per row, ties taken in column order."""
    kth = np.partition(d, kk - 1, axis=1)[:, kk - 1:kk]
    below = d < kth
    tied = d == kth
    room = kk - below.sum(1, keepdims=True)
    take = tied & (np.cumsum(tied, axis=1) <= room)
    return ((below | take) & positive[None, :]).sum(1)


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -np.asarray(z, dtype=np.float64)))


@dataclass
class SvmModel:
    weights: np.ndarray
    bias: float
    lam: float
    trained_at: int

    def decision(self, x: np.ndarray):
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def score(self, x: np.ndarray):
        """Logistic squashing of the margin; 0.5 exactly on the decision boundary."""
        s = sigmoid(self.decision(x))
        return float(s) if np.ndim(s) == 0 else s


def class_weights(y: np.ndarray) -> np.ndarray:
    """Inverse class frequency, normalized to mean one."""
    n = len(y)
    n_pos = int((y > 0).sum())
    return np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def hinge_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float,
                    sample_weight: np.ndarray | None = None) -> float:
    """Weighted mean hinge loss plus ``lam * |w|^2`` (bias unregularized)."""
    y = np.asarray(y, dtype=np.float64)
    if sample_weight is None:
        sample_weight = class_weights(y)
    X = np.asarray(X)
    if X.dtype == np.float32:
        # keep the full-history matrix in single precision
        raw = (X @ w.astype(np.float32)).astype(np.float64)
    else:
        raw = X @ w
    margins = y * (raw + b)
    return float(np.mean(sample_weight * np.maximum(0.0, 1.0 - margins)) + lam * float(w @ w))


def svm_retrain(store: LabeledStore, lam: float = 1e-4, epochs: int = 20, seed: int = 0,
                lr: float = 0.1, batch_size: int = 64, trained_at: int = 0,
                history: list | None = None) -> SvmModel:
    """Minibatch subgradient descent on the class-weighted hinge objective.

    Step size decays as ``lr / (1 + epoch)``. At each epoch boundary the
    full objective is evaluated and the iterate is kept only if it does not
    increase, so the returned objective never exceeds the one at w = 0.
    Pass a list as ``history`` to collect the per-epoch objective.
    """
    X = np.asarray(store.features)
    y = store.labels.astype(np.float64)
    n_pos = int((y > 0).sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateTrainingSet(f"need both classes, got {n_pos} positive of {len(y)}")
    cw = class_weights(y)
    rng = np.random.default_rng(seed)
    n, dim = X.shape

    w = np.zeros(dim)
    b = 0.0
    best_w, best_b = w.copy(), b
    best_obj = hinge_objective(w, b, X, y, lam, cw)
    if history is not None:
        history.append(best_obj)
    for epoch in range(epochs):
        eta = lr / (1.0 + epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb, yb, cb = X[idx], y[idx], cw[idx]
            coef = cb * yb * (yb * (Xb @ w.astype(Xb.dtype) + b) < 1.0)
            w = w - eta * (2.0 * lam * w - (coef.astype(Xb.dtype) @ Xb) / len(idx))
            b = b + eta * coef.sum() / len(idx)
        obj = hinge_objective(w, b, X, y, lam, cw)
        if obj <= best_obj:
            best_w, best_b, best_obj = w.copy(), b, obj
        else:
            w, b = best_w.copy(), best_b
        if history is not None:
            history.append(best_obj)
    return SvmModel(best_w, float(best_b), lam, trained_at)


# --------------------------------------------------------------------------
# Snapshots: b"QACTSNAP", u16 version, u8 kind, u32 feature length, payload.
# Little endian throughout.

MAGIC = b"QACTSNAP"
SNAPSHOT_VERSION = 1
_KNN, _SVM = 1, 2


def save_model(model: KnnModel | SvmModel, path: str | Path) -> None:
    if isinstance(model, SvmModel):
        w = np.ascontiguousarray(model.weights, dtype="<f8")
        head = struct.pack("<8sHBI", MAGIC, SNAPSHOT_VERSION, _SVM, len(w))
        body = struct.pack("<ddq", model.bias, model.lam, model.trained_at) + w.tobytes()
    elif isinstance(model, KnnModel):
        st = model.store
        F = np.ascontiguousarray(st.features, dtype="<f8")
        dim = F.shape[1] if len(st) else 0
        head = struct.pack("<8sHBI", MAGIC, SNAPSHOT_VERSION, _KNN, dim)
        body = struct.pack("<IqQ", model.k, st.window or 0, len(st))
        body += st.stamps.astype("<i8").tobytes() + st.labels.astype("i1").tobytes() + F.tobytes()
    else:
        raise TypeError(f"cannot snapshot {type(model).__name__}")
    Path(path).write_bytes(head + body)


def load_model(path: str | Path) -> KnnModel | SvmModel:
    data = Path(path).read_bytes()
    hsize = struct.calcsize("<8sHBI")
    if len(data) < hsize:
        raise ValueError(f"{path}: truncated snapshot")
    magic, version, kind, dim = struct.unpack_from("<8sHBI", data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a model snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off = hsize
    if kind == _SVM:
        bias, lam, trained_at = struct.unpack_from("<ddq", data, off)
        off += struct.calcsize("<ddq")
        w = np.frombuffer(data, "<f8", dim, off).astype(np.float64)
        return SvmModel(w, bias, lam, trained_at)
    if kind == _KNN:
        k, window, n = struct.unpack_from("<IqQ", data, off)
        off += struct.calcsize("<IqQ")
        stamps = np.frombuffer(data, "<i8", n, off)
        off += 8 * n
        labels = np.frombuffer(data, "i1", n, off)
        off += n
        F = np.frombuffer(data, "<f8", n * dim, off).reshape(n, dim)
        model = KnnModel(k, window if window > 0 else None)
        for t in np.unique(stamps):
            sel = stamps == t
            model.store.add(int(t), F[sel], labels[sel])
        return model
    raise ValueError(f"{path}: unknown model kind {kind}")
