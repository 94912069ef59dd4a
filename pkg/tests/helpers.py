"""Shared test fixtures that are plain code rather than pytest fixtures."""

import numpy as np

from qact.policy import ALL_STATES


class ContextBanditEpisode:
    """Fixed-length episode over random states; exactly one action per state pays 1."""

    def __init__(self, rng, optimal, length=5):
        self.rng = rng
        self.optimal = optimal
        self.length = length

    def _draw(self):
        return ALL_STATES[int(self.rng.integers(len(ALL_STATES)))]

    def reset(self):
        self.t = 0
        self.total = 0.0
        self.state = self._draw()
        return self.state

    def step(self, action):
        r = 1.0 if action == self.optimal[self.state] else 0.0
        self.total += r
        self.t += 1
        if self.t >= self.length:
            return r, None, True
        self.state = self._draw()
        return r, self.state, False

    def summary(self):
        return {"mean_iou": self.total / self.length, "queried_fraction": 0.0}


class ContextBanditEnv:
    def __init__(self, seed=0, n_actions=25, length=5, limit=None, start=0):
        rng = np.random.default_rng([seed, 99])
        self.optimal = {s: int(rng.integers(n_actions)) for s in ALL_STATES}
        self.seed = seed
        self.length = length
        self.limit = limit
        self.start = start

    def __iter__(self):
        i = self.start
        while self.limit is None or i < self.limit:
            yield ContextBanditEpisode(np.random.default_rng([self.seed, i]), self.optimal, self.length)
            i += 1


# acceptance outcomes, printed one line per criterion at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return ok
