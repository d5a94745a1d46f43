"""A one-dimensional "move toward the origin" task for smoke-testing PPO."""

from __future__ import annotations

import numpy as np


class ToyLine:
    """Point on a line; the action nudges it, reward is ``-|x|``.

    Episodes start uniformly in ``[-start, start]`` and are cut (not
    terminated) after ``horizon`` steps.
    """

    obs_dim = 1
    act_dim = 1

    def __init__(self, rng: np.random.Generator, horizon: int = 50, start: float = 1.0, gain: float = 0.1):
        self.rng = rng
        self.horizon = horizon
        self.start = start
        self.gain = gain

    def reset(self) -> np.ndarray:
        self.x = self.rng.uniform(-self.start, self.start)
        self.k = 0
        return np.array([self.x])

    def step(self, action):
        self.x += float(np.clip(action[0], -1.0, 1.0)) * self.gain
        self.k += 1
        done = self.k >= self.horizon
        return np.array([self.x]), -abs(self.x), done, {"terminal": False}
