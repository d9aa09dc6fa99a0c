"""Observation container shared by losses, the pipeline, and the benchmark."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ObservationSet:
    """Sparse, possibly noisy samples of one trajectory.

    `x0` is the (noise-free) initial condition the trajectory was launched
    from at `t0`; the observed `states` may carry noise, so states[0] need
    not equal x0 even when times[0] == t0.
    """

    times: np.ndarray
    states: np.ndarray
    x0: np.ndarray
    sigma: float = 0.0
    seed: int = 0
    t0: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("need at least 2 observation times")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("observation times must be strictly ascending")
        if self.states.shape != (self.times.size, self.x0.size):
            raise ValueError("states must be (N, n) with n = len(x0)")
        if self.times[0] < self.t0:
            raise ValueError("observations cannot precede t0")
        if not (np.isfinite(self.times).all() and np.isfinite(self.states).all()
                and np.isfinite(self.x0).all()):
            raise ValueError("observations must be finite")
        self.sigma = float(self.sigma)
        self.seed = int(self.seed)
        self.t0 = float(self.t0)

    @property
    def n_dim(self):
        return self.x0.size

    @property
    def n_obs(self):
        return self.times.size
