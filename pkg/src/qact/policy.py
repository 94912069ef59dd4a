"""Tabular Q-learning over uncertainty-histogram states.

The agent looks at how uncertain the short-term classifier is about the
current frame's candidates, picks the uncertainty margin (the action), and
is rewarded by the overlap of the resulting estimate with ground truth.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Protocol

import numpy as np

from qact.config import PolicyConfig

QTABLE_VERSION = 1
N_MEAN_BINS = 10
N_VAR_BINS = 5
MAX_VARIANCE = 0.25  # of any variable confined to [0, 1]


class Shape(enum.IntEnum):
    CERTAIN_SKEWED = 0
    UNCERTAIN_SKEWED = 1
    BIMODAL = 2
    FLAT = 3


class StateKey(NamedTuple):
    mean_bin: int
    var_bin: int
    shape: Shape


ALL_STATES = tuple(
    StateKey(m, v, s) for m in range(N_MEAN_BINS) for v in range(N_VAR_BINS) for s in Shape
)


def uncertainty(h, tau: float = 0.5):
    """1 - 2|h - tau|, clamped to [0, 1]; 1 on the decision threshold."""
    u = np.clip(1.0 - 2.0 * np.abs(np.asarray(h, dtype=np.float64) - tau), 0.0, 1.0)
    return float(u) if u.ndim == 0 else u


@dataclass(frozen=True)
class UncertaintyHistogram:
    bins: np.ndarray  # integer counts; bin b covers [b/n, (b+1)/n), last bin closed

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) / self.n_bins


def build_histogram(scores, tau: float = 0.5, n_bins: int = 100) -> UncertaintyHistogram:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("cannot build an uncertainty histogram from zero scores")
    u = np.atleast_1d(uncertainty(scores, tau))
    idx = np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
    return UncertaintyHistogram(np.bincount(idx, minlength=n_bins))


def _peaks(smooth: np.ndarray, floor: float) -> list[float]:
    """Centers of plateau-aware local maxima strictly above ``floor``."""
    peaks = []
    n = len(smooth)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and smooth[j + 1] == smooth[i]:
            j += 1
        left = smooth[i - 1] if i > 0 else -np.inf
        right = smooth[j + 1] if j + 1 < n else -np.inf
        if smooth[i] > left and smooth[i] > right and smooth[i] > floor:
            peaks.append((i + j) / 2.0)
        i = j + 1
    return peaks


def classify_shape(hist: UncertaintyHistogram, peak_mass: float = 0.05, min_separation: int = 20,
                   skew_mass: float = 0.6) -> Shape:
    counts = hist.bins.astype(np.float64)
    total = counts.sum()
    n = len(counts)
    smooth = np.convolve(counts, np.ones(5) / 5.0, mode="same")
    peaks = _peaks(smooth, peak_mass * total)
    if len(peaks) >= 2 and max(peaks) - min(peaks) >= min_separation:
        return Shape.BIMODAL
    low = counts[: int(round(0.3 * n))].sum()
    high = counts[int(round(0.7 * n)):].sum()
    if low >= skew_mass * total:
        return Shape.CERTAIN_SKEWED
    if high >= skew_mass * total:
        return Shape.UNCERTAIN_SKEWED
    return Shape.FLAT


def featurize_state(hist: UncertaintyHistogram) -> StateKey:
    """Discretized mean, variance and shape of the uncertainty distribution."""
    c = hist.centers()
    p = hist.bins / hist.total
    mean = float(p @ c)
    var = float(p @ (c - mean) ** 2)
    mean_bin = min(int(mean * N_MEAN_BINS), N_MEAN_BINS - 1)
    var_bin = min(int(var / MAX_VARIANCE * N_VAR_BINS), N_VAR_BINS - 1)
    return StateKey(mean_bin, var_bin, classify_shape(hist))


def action_values(n_actions: int = 25) -> np.ndarray:
    """Candidate margins: n_actions equi-spaced values from 0 to 0.5 inclusive."""
    return np.arange(n_actions) * 0.5 / (n_actions - 1)


def reward(iou: float, streak_below_half: int, streak_limit: int = 5, mode: str = "scaled") -> float:
    """Overlap reward: tripled above 0.9, nothing below 0.5, -3 after a long loss streak."""
    if iou > 0.9:
        return 3.0 * iou if mode == "scaled" else 3.0
    if iou >= 0.5:
        return float(iou)
    return -3.0 if streak_below_half >= streak_limit else 0.0


class QTable:
    """Action values per visited state, materialized lazily with small positive noise."""

    def __init__(self, n_actions: int = 25, gamma: float = 0.99, seed: int = 0, init_noise: float = 0.01):
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
        self.n_actions = n_actions
        self.gamma = gamma
        self.seed = seed
        self.init_noise = init_noise
        self.values: dict[StateKey, np.ndarray] = {}
        self.counts: dict[StateKey, np.ndarray] = {}
        self.episodes = 0

    def initial_row(self, state: StateKey) -> np.ndarray:
        rng = np.random.default_rng([self.seed, state.mean_bin, state.var_bin, int(state.shape)])
        return np.abs(rng.normal(0.0, self.init_noise, self.n_actions))

    def row(self, state: StateKey) -> np.ndarray:
        if state not in self.values:
            self.values[state] = self.initial_row(state)
            self.counts[state] = np.zeros(self.n_actions, dtype=np.int64)
        return self.values[state]

    def visits(self, state: StateKey) -> np.ndarray:
        self.row(state)
        return self.counts[state]

    def __contains__(self, state):
        return state in self.values

    def __eq__(self, other):
        if not isinstance(other, QTable):
            return NotImplemented
        return (
            (self.n_actions, self.gamma, self.seed, self.episodes)
            == (other.n_actions, other.gamma, other.seed, other.episodes)
            and self.values.keys() == other.values.keys()
            and all(np.array_equal(self.values[s], other.values[s]) for s in self.values)
            and all(np.array_equal(self.counts[s], other.counts[s]) for s in self.counts)
        )

    def to_json(self) -> dict:
        rows = []
        for s in sorted(self.values):
            rows.append({
                "state": [s.mean_bin, s.var_bin, s.shape.name],
                "q": [float(v) for v in self.values[s]],
                "n": [int(v) for v in self.counts[s]],
            })
        return {
            "version": QTABLE_VERSION, "n_a": self.n_actions, "gamma": self.gamma,
            "seed": self.seed, "init_noise": self.init_noise, "episodes": self.episodes, "rows": rows,
        }

    @classmethod
    def from_json(cls, data: dict) -> QTable:
        if data.get("version") != QTABLE_VERSION:
            raise ValueError(f"unsupported Q-table version {data.get('version')!r}")
        table = cls(int(data["n_a"]), float(data["gamma"]), int(data["seed"]), float(data.get("init_noise", 0.01)))
        table.episodes = int(data.get("episodes", 0))
        for row in data["rows"]:
            m, v, shape = row["state"]
            key = StateKey(int(m), int(v), Shape[shape] if isinstance(shape, str) else Shape(shape))
            q = np.array(row["q"], dtype=np.float64)
            n = np.array(row["n"], dtype=np.int64)
            if len(q) != table.n_actions or len(n) != table.n_actions:
                raise ValueError(f"row for {key} does not have {table.n_actions} actions")
            table.values[key] = q
            table.counts[key] = n
        return table

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> QTable:
        return cls.from_json(json.loads(Path(path).read_text()))


def init_qtable(seed: int = 0, n_actions: int = 25, gamma: float = 0.99, init_noise: float = 0.01) -> QTable:
    return QTable(n_actions, gamma, seed, init_noise)


def q_update(table: QTable, state: StateKey, action: int, r: float, next_state: StateKey | None,
             terminal: bool, lr: float, next_action: int | None = None) -> float:
    """One temporal-difference step; returns the bootstrapped target.

    With ``next_action`` the target uses that action's value (SARSA),
    otherwise the greedy maximum.
    """
    if terminal or next_state is None:
        target = r
    elif next_action is None:
        target = r + table.gamma * float(np.max(table.row(next_state)))
    else:
        target = r + table.gamma * float(table.row(next_state)[next_action])
    q = table.row(state)
    q[action] += lr * (target - q[action])
    table.counts[state][action] += 1
    return target


def select_action_bge(table: QTable, state: StateKey, scale: float, rng: np.random.Generator) -> int:
    """Argmax of values perturbed by Gumbel noise of size scale / sqrt(visits + 1)."""
    q = table.row(state)
    beta = scale / np.sqrt(table.counts[state] + 1.0)
    return int(np.argmax(q + beta * rng.gumbel(size=len(q))))


def select_action_greedy(table: QTable, state: StateKey) -> int:
    """Highest-valued action; unseen states and flat rows fall back to the middle margin."""
    q = table.values.get(state)
    # rows materialized only as a bootstrap target count as unseen
    if q is None or not table.counts[state].any() or np.all(q == q[0]):
        return table.n_actions // 2
    return int(np.argmax(q))


class QueryPolicy:
    """Run-time margin selection from a trained table (read-only)."""

    def __init__(self, table: QTable, tau: float = 0.5):
        self.table = table
        self.tau = tau
        self.deltas = action_values(table.n_actions)

    def select(self, hist: UncertaintyHistogram) -> tuple[float, int]:
        a = select_action_greedy(self.table, featurize_state(hist))
        return float(self.deltas[a]), a


# --------------------------------------------------------------------------
# Training


class Episode(Protocol):
    def reset(self) -> StateKey: ...

    def step(self, action: int) -> tuple[float, StateKey | None, bool]: ...

    def summary(self) -> dict: ...


@dataclass
class EpisodeLog:
    episode: int
    total_reward: float
    mean_iou: float
    queried_fraction: float


def learning_rate(visits: int, power: float = 0.6) -> float:
    return 1.0 / (1.0 + visits) ** power


def train_policy(env: Iterable[Episode], episodes: int, cfg: PolicyConfig | None = None,
                 table: QTable | None = None, seed: int = 0) -> tuple[QTable, list[EpisodeLog]]:
    """Run ``episodes`` episodes from ``env`` and learn the table in place.

    Exploration randomness for global episode ``i`` comes from
    ``default_rng([seed, i])``, so training resumed from a saved table
    continues the same stream.
    """
    cfg = cfg or PolicyConfig()
    if table is None:
        table = init_qtable(seed, cfg.n_actions, cfg.gamma, cfg.init_noise)
    sarsa = cfg.update_rule == "sarsa"
    log = []
    it = iter(env)
    for _ in range(episodes):
        try:
            ep = next(it)
        except StopIteration:
            raise RuntimeError(f"environment exhausted after {len(log)} of {episodes} episodes") from None
        rng = np.random.default_rng([seed, table.episodes])
        state = ep.reset()
        action = select_action_bge(table, state, cfg.bge_scale, rng)
        total = 0.0
        while True:
            r, nxt, done = ep.step(action)
            total += r
            lr = learning_rate(int(table.counts[state][action]), cfg.lr_power)
            next_action = None
            if not done:
                next_action = select_action_bge(table, nxt, cfg.bge_scale, rng)
            q_update(table, state, action, r, nxt, done, lr, next_action if sarsa else None)
            if done:
                break
            state, action = nxt, next_action
        info = ep.summary()
        log.append(EpisodeLog(table.episodes, total, float(info.get("mean_iou", math.nan)),
                              float(info.get("queried_fraction", math.nan))))
        table.episodes += 1
    return table, log


def write_training_log(log: list[EpisodeLog], path: str | Path, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["episode", "total_reward", "mean_iou", "queried_fraction"])
        for row in log:
            w.writerow([row.episode, repr(row.total_reward), repr(row.mean_iou), repr(row.queried_fraction)])
