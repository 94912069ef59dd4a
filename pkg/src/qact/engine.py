"""The per-frame co-tracking loop.

Each frame: sample a deterministic grid around the last estimate, score
every candidate with the short-term KNN, label the candidates (alone, by
co-tracking vote, or actively consulting the SVM inside the uncertainty
margin), update the classifiers on their own schedules and take the
score-weighted mean of the positives as the new estimate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from qact.classifiers import DegenerateTrainingSet, KnnModel, LabeledStore, SvmModel, svm_retrain
from qact.config import ConfigError, DataError, TrackerConfig
from qact.features import extract_batch, make_grid
from qact.geometry import BoundingBox, iou
from qact.policy import QueryPolicy, UncertaintyHistogram, build_histogram
from qact.sequences import Frame, Sequence

MAIN, AUX, VOTE = "main", "aux", "vote"
_SOURCES = (MAIN, AUX, VOTE)
ALPHA_EPS = 1e-6
# |h - tau| == delta must query even when the subtraction rounds up (0.5 - 0.42 > 0.08 in floats)
MARGIN_EPS = 1e-12


# --------------------------------------------------------------------------
# Labeling rules (scalar forms; the tracker uses the vectorized twins below)


def label_single(h: float, tau: float = 0.5) -> int:
    """+1 above the threshold, -1 otherwise (ties go to background)."""
    return 1 if h > tau else -1


def label_cotrack(h1: float, h2: float, alpha1: float, alpha2: float, tau: float = 0.5) -> tuple[int, str]:
    """Two-classifier vote, guards tested in their listed order."""
    if h2 < tau:
        return label_single(h1, tau), MAIN
    if h1 < tau:
        return label_single(h2, tau), AUX
    return label_single(alpha1 * h1 + alpha2 * h2, tau), VOTE


def label_active(h1: float, tau: float, delta: float,
                 aux_scorer: Callable[[], float]) -> tuple[int, float | None, str]:
    """Keep the main label when it is outside the margin, else ask the aux scorer once."""
    if abs(h1 - tau) > delta + MARGIN_EPS:
        return label_single(h1, tau), None, MAIN
    h2 = aux_scorer()
    return label_single(h2, tau), h2, AUX


def labels_single(h1: np.ndarray, tau: float) -> np.ndarray:
    return np.where(h1 > tau, 1, -1).astype(np.int8)


def labels_cotrack(h1, h2, alpha1, alpha2, tau):
    """Vectorized ``label_cotrack``: (labels, source codes 0=main 1=aux 2=vote)."""
    first = h2 < tau
    second = ~first & (h1 < tau)
    score = np.where(first, h1, np.where(second, h2, alpha1 * h1 + alpha2 * h2))
    src = np.where(first, 0, np.where(second, 1, 2)).astype(np.int8)
    return labels_single(score, tau), src


def query_mask(h1: np.ndarray, tau: float, delta: float) -> np.ndarray:
    """Samples whose main score lies within ``delta`` of the threshold."""
    return ~(np.abs(h1 - tau) > delta + MARGIN_EPS)


def schedule_aux_update(t: int, window: int) -> bool:
    return t % window == 0


# --------------------------------------------------------------------------
# Per-frame records


@dataclass
class ScoredSample:
    box: BoundingBox
    features: np.ndarray | None
    h1: float
    h2: float | None
    label: int
    source: str


@dataclass
class FrameResult:
    index: int
    estimate: BoundingBox
    delta: float | None
    queried_fraction: float
    alpha: tuple[float, float]
    lost: bool
    action: int | None = None
    # per-sample arrays; h2 is NaN where the aux classifier was not asked
    boxes: np.ndarray = field(default_factory=lambda: np.empty((0, 4)), repr=False)
    h1: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    h2: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)
    labels: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8), repr=False)
    sources: np.ndarray = field(default_factory=lambda: np.empty(0, np.int8), repr=False)
    features: np.ndarray | None = field(default=None, repr=False)

    @property
    def samples(self) -> list[ScoredSample]:
        out = []
        for j in range(len(self.h1)):
            h2 = None if np.isnan(self.h2[j]) else float(self.h2[j])
            feats = None if self.features is None else self.features[j]
            out.append(ScoredSample(BoundingBox(*map(float, self.boxes[j])), feats, float(self.h1[j]), h2,
                                    int(self.labels[j]), _SOURCES[self.sources[j]]))
        return out

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "estimate": list(self.estimate.as_tuple()),
            "delta": self.delta,
            "action": self.action,
            "queried_fraction": self.queried_fraction,
            "alpha": list(self.alpha),
            "lost": self.lost,
            "n_positive": int((self.labels > 0).sum()),
        }


def write_results(results: list[FrameResult], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_results(path: str | Path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                row["estimate"] = BoundingBox(*row["estimate"])
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{n}: malformed result row ({exc})") from exc
            rows.append(row)
    return rows


# --------------------------------------------------------------------------


def update_alpha(samples: list[ScoredSample], previous: tuple[float, float] = (0.5, 0.5),
                 tau: float = 0.5) -> tuple[float, float]:
    """Voting weights from each classifier's agreement with the final labels."""
    dual = [s for s in samples if s.h2 is not None]
    if not dual:
        return previous
    h1 = np.array([s.h1 for s in dual])
    h2 = np.array([s.h2 for s in dual])
    lab = np.array([s.label for s in dual])
    return _alpha_from_arrays(h1, h2, lab, tau)


def _alpha_from_arrays(h1, h2, labels, tau) -> tuple[float, float]:
    c1 = float(np.mean(labels_single(h1, tau) == labels))
    c2 = float(np.mean(labels_single(h2, tau) == labels))
    a1 = (c1 + ALPHA_EPS) / (c1 + c2 + 2 * ALPHA_EPS)
    return a1, 1.0 - a1


def estimate_target(samples: list[ScoredSample], previous: BoundingBox) -> tuple[BoundingBox, bool]:
    """Score-weighted mean of the positive boxes in center/size space."""
    pos = [s for s in samples if s.label > 0]
    if not pos:
        return previous, True
    boxes = np.array([s.box.as_tuple() for s in pos])
    weights = np.array([s.h1 if s.source == MAIN else s.h2 for s in pos])
    return _weighted_box(boxes, weights), False


def _weighted_box(boxes: np.ndarray, weights: np.ndarray) -> BoundingBox:
    if weights.sum() <= 0:
        weights = np.ones(len(boxes))
    cx = boxes[:, 0] + boxes[:, 2] / 2
    cy = boxes[:, 1] + boxes[:, 3] / 2
    w = weights / weights.sum()
    return BoundingBox.from_center(float(w @ cx), float(w @ cy), float(w @ boxes[:, 2]), float(w @ boxes[:, 3]))


# --------------------------------------------------------------------------


class CoTracker:
    """Stateful single-target tracker; one instance per sequence, single-threaded.

    ``observe`` scores a new frame with the main classifier and returns the
    uncertainty histogram; ``commit`` finishes the frame with a margin.
    ``step`` does both, taking the margin from the mode or the policy.
    """

    def __init__(self, config: TrackerConfig | None = None, policy: QueryPolicy | None = None,
                 keep_features: bool = False):
        self.cfg = config or TrackerConfig()
        if self.cfg.mode == "active-qlearn" and policy is None:
            raise ConfigError("mode active-qlearn needs a trained Q-table policy")
        self.policy = policy
        self.keep_features = keep_features
        self.knn = KnnModel(self.cfg.k, self.cfg.window)
        self.history = LabeledStore(None, dtype=np.float32)
        self.svm: SvmModel | None = None
        self.alpha = (0.5, 0.5)
        self.t = 0
        self.estimate: BoundingBox | None = None
        self._pending = None

    @property
    def uses_aux(self) -> bool:
        return self.cfg.mode != "single"

    def _retrain(self, t: int) -> None:
        c = self.cfg.svm
        try:
            self.svm = svm_retrain(self.history, c.lam, c.epochs, seed=[self.cfg.seed, t], lr=c.lr,
                                   batch_size=c.batch_size, trained_at=t)
        except DegenerateTrainingSet:
            if self.svm is None:
                raise

    def initialize(self, frame: Frame, box: BoundingBox) -> FrameResult:
        cfg, fc = self.cfg, self.cfg.features
        grid = make_grid(box, (frame.width, frame.height), fc.n_samples, fc.scales, fc.search_factor)
        boxes = np.vstack([grid.boxes(), [box.as_tuple()]])
        X = extract_batch(frame, boxes, fc)
        overlaps = np.array([iou(BoundingBox(*map(float, b)), box) for b in boxes])
        overlaps[-1] = 1.0
        keep = (overlaps > cfg.init_pos_iou) | (overlaps < cfg.init_neg_iou)
        labels = np.where(overlaps > cfg.init_pos_iou, 1, -1).astype(np.int8)[keep]
        self.t = frame.index
        self.knn.update(self.t, X[keep], labels)
        if self.uses_aux:
            self.history.add(self.t, X[keep], labels)
            self._retrain(self.t)
        self.estimate = box
        return FrameResult(self.t, box, None, 0.0, self.alpha, False)

    def observe(self, frame: Frame) -> UncertaintyHistogram:
        if self.estimate is None:
            raise RuntimeError("tracker not initialized")
        fc = self.cfg.features
        grid = make_grid(self.estimate, (frame.width, frame.height), fc.n_samples, fc.scales, fc.search_factor)
        boxes = grid.boxes()
        X = extract_batch(frame, boxes, fc)
        h1 = self.knn.score(X)
        self._pending = (frame.index, boxes, X, h1)
        return build_histogram(h1, self.cfg.tau, self.cfg.policy.n_bins)

    def commit(self, delta: float | None = None, action: int | None = None) -> FrameResult:
        if self._pending is None:
            raise RuntimeError("commit() without observe()")
        t, boxes, X, h1 = self._pending
        self._pending = None
        cfg, tau, mode = self.cfg, self.cfg.tau, self.cfg.mode
        n = len(h1)
        h2 = np.full(n, np.nan)

        if mode == "single":
            labels, src = labels_single(h1, tau), np.zeros(n, np.int8)
            delta = None
        elif mode == "cotrack":
            h2 = self.svm.score(X)
            labels, src = labels_cotrack(h1, h2, *self.alpha, tau)
            delta = None
        else:
            if delta is None:
                delta = cfg.delta
            ask = query_mask(h1, tau, delta)
            labels = labels_single(h1, tau)
            src = np.zeros(n, np.int8)
            if ask.any():
                h2[ask] = self.svm.score(X[ask])
                labels[ask] = labels_single(h2[ask], tau)
                src[ask] = 1

        dual = ~np.isnan(h2)
        if dual.any():
            self.alpha = _alpha_from_arrays(h1[dual], h2[dual], labels[dual], tau)

        pos = labels > 0
        lost = not pos.any()
        if lost:
            estimate = self.estimate
        else:
            weight = np.where(src == 0, h1, h2)
            estimate = _weighted_box(boxes[pos], weight[pos])
            self.knn.update(t, X, labels)
            if self.uses_aux:
                self.history.add(t, X, labels)
                if schedule_aux_update(t, cfg.window):
                    self._retrain(t)
        self.t = t
        self.estimate = estimate
        return FrameResult(
            t, estimate, None if delta is None else float(delta), float(dual.mean()), self.alpha, lost, action,
            boxes, h1, h2, labels, src, X if self.keep_features else None,
        )

    def step(self, frame: Frame) -> FrameResult:
        hist = self.observe(frame)
        if self.cfg.mode == "active-qlearn":
            delta, action = self.policy.select(hist)
            return self.commit(delta, action)
        return self.commit()


def track_sequence(seq: Sequence, config: TrackerConfig | None = None, policy: QueryPolicy | None = None,
                   keep_samples: bool = False) -> list[FrameResult]:
    """Track from the frame-1 ground truth to the end of ``seq``.

    Per-sample arrays are dropped from the returned results unless
    ``keep_samples`` is set, to bound memory on long sequences.
    """
    init = seq.gt(1)
    if init is None:
        raise DataError(f"{seq.name}: frame 1 has no ground truth to initialize from")
    tracker = CoTracker(config, policy)
    results = [tracker.initialize(seq.frame(1), init)]
    for i in range(2, len(seq) + 1):
        r = tracker.step(seq.frame(i))
        if not keep_samples:
            r = _strip(r)
        results.append(r)
    return results


def _strip(r: FrameResult) -> FrameResult:
    return FrameResult(r.index, r.estimate, r.delta, r.queried_fraction, r.alpha, r.lost, r.action,
                       labels=r.labels)
