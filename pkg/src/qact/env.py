"""Episode sources for policy training.

A tracking episode runs the co-tracker over one sequence: each tracked
frame is one decision (choose the margin for that frame); the reward is
the shaped overlap at annotated frames and zero elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from qact.config import TrackerConfig
from qact.engine import CoTracker
from qact.geometry import iou
from qact.policy import StateKey, action_values, featurize_state, reward
from qact.sequences import Frame, Sequence, generate_synthetic, load_otb_sequence, random_script


class TrackingEpisode:
    def __init__(self, seq: Sequence, config: TrackerConfig):
        if seq.gt(1) is None:
            raise ValueError(f"{seq.name}: episode needs ground truth on frame 1")
        if len(seq) < 2:
            raise ValueError(f"{seq.name}: episode needs at least two frames")
        self.seq = seq
        self.cfg = config.with_(mode="active-qlearn") if config.mode != "active-qlearn" else config
        self.deltas = action_values(self.cfg.policy.n_actions)
        self.tracker: CoTracker | None = None
        self.results = []
        self.streak = 0
        self.ious: list[float] = []

    def _observe(self) -> StateKey:
        return featurize_state(self.tracker.observe(self.seq.frame(self.t)))

    def reset(self) -> StateKey:
        # the policy is driven from outside through commit(); no table needed here
        self.tracker = CoTracker(self.cfg.with_(mode="active-fixed"))
        self.results = [self.tracker.initialize(self.seq.frame(1), self.seq.gt(1))]
        self.streak = 0
        self.ious = []
        self.t = 2
        return self._observe()

    def step(self, action: int) -> tuple[float, StateKey | None, bool]:
        res = self.tracker.commit(float(self.deltas[action]), action)
        self.results.append(res)
        gt = self.seq.gt(self.t)
        r = 0.0
        if gt is not None:
            overlap = iou(res.estimate, gt)
            self.ious.append(overlap)
            # consecutive annotated frames below one half
            self.streak = self.streak + 1 if overlap < 0.5 else 0
            pc = self.cfg.policy
            r = reward(overlap, self.streak, pc.loss_streak, pc.reward_mode)
        self.t += 1
        if self.t > len(self.seq):
            return r, None, True
        return r, self._observe(), False

    def summary(self) -> dict:
        tracked = self.results[1:]
        return {
            "mean_iou": float(np.mean(self.ious)) if self.ious else math.nan,
            "queried_fraction": float(np.mean([r.queried_fraction for r in tracked])) if tracked else math.nan,
        }


@dataclass
class SyntheticEnv:
    """Endless stream of random synthetic episodes; episode ``i`` depends only on (seed, i)."""

    config: TrackerConfig
    seed: int = 0
    length: int = 400
    annotation_stride: int = 25
    occlusion_prob: float = 0.7
    illumination_prob: float = 0.3
    start: int = 0

    def script(self, i: int):
        rng = np.random.default_rng([self.seed, i])
        return random_script(rng, self.length, self.annotation_stride, self.occlusion_prob,
                             self.illumination_prob, name=f"train{i}")

    def __iter__(self) -> Iterator[TrackingEpisode]:
        i = self.start
        while True:
            yield TrackingEpisode(generate_synthetic(self.script(i)), self.config)
            i += 1


@dataclass
class ClipEnv:
    """Random clips of user-supplied OTB sequences, sparsely re-annotated."""

    config: TrackerConfig
    paths: list[Path]
    seed: int = 0
    length: int = 400
    annotation_stride: int = 25
    start: int = 0

    def __post_init__(self):
        self.sequences = [load_otb_sequence(p) for p in self.paths]

    def clip(self, i: int) -> Sequence:
        rng = np.random.default_rng([self.seed, i])
        seq = self.sequences[int(rng.integers(len(self.sequences)))]
        usable = [j for j in seq.annotated if j + 1 <= len(seq)]
        first = int(rng.choice(usable[: max(1, len(usable) - 1)]))
        last = min(len(seq), first + self.length - 1)
        frames = [seq.frame(j) for j in range(first, last + 1)]
        gts = []
        for k, j in enumerate(range(first, last + 1), start=1):
            keep = k == 1 or k % self.annotation_stride == 0
            gts.append(seq.gt(j) if keep else None)
        frames = [Frame(k, f.pixels) for k, f in enumerate(frames, start=1)]
        return Sequence(f"{seq.name}@{first}", frames, gts, seq.attributes)

    def __iter__(self) -> Iterator[TrackingEpisode]:
        i = self.start
        while True:
            yield TrackingEpisode(self.clip(i), self.config)
            i += 1


@dataclass
class MixedEnv:
    """Alternate synthetic and clip episodes by a seeded coin."""

    synthetic: SyntheticEnv
    clips: ClipEnv
    real_fraction: float = 0.5
    seed: int = 0
    start: int = 0

    def __iter__(self):
        i = self.start
        while True:
            rng = np.random.default_rng([self.seed, i, 1])
            if rng.random() < self.real_fraction:
                yield TrackingEpisode(self.clips.clip(i), self.clips.config)
            else:
                yield TrackingEpisode(generate_synthetic(self.synthetic.script(i)), self.synthetic.config)
            i += 1
