"""Fixed-step RK4 integration of autonomous systems.

The integrator is written against the arithmetic in :mod:`odefit.duals`,
so the same stepping code propagates plain states, batches of states, and
dual states carrying parameter tangents.  Step sizes are chosen by the
caller; nothing here is adaptive, which keeps every run reproducible and
lets whole candidate populations march in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .duals import all_finite


class NonFinite(ValueError):
    """An input that must be finite contained NaN or infinity."""


class Diverged(RuntimeError):
    """The state left finite range during integration."""

    def __init__(self, at_time):
        self.at_time = float(at_time)
        super().__init__(f"state became non-finite near t={self.at_time:g}")


@dataclass
class Ivp:
    """Autonomous initial value problem: dx/dt = rhs(params, x), x(t0) = x0."""

    rhs: Callable
    params: np.ndarray
    x0: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.ndim != 1 or self.x0.size == 0:
            raise NonFinite("x0 must be a non-empty 1-d vector")
        if not np.isfinite(self.x0).all():
            raise NonFinite("x0 must be finite")
        self.t0 = float(self.t0)


@dataclass
class Trajectory:
    """States sampled at strictly ascending times; states[k] is x(times[k])."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or np.any(np.diff(self.times) <= 0.0):
            raise NonFinite("times must be 1-d and strictly ascending")
        if self.states.shape[0] != self.times.size:
            raise NonFinite("states must have one row per time")
        if not (np.isfinite(self.times).all() and np.isfinite(self.states).all()):
            raise NonFinite("trajectory entries must be finite")


def bound_rhs(rhs, params):
    """Close over params once; models may pre-compute solves/slices in bind()."""
    bind = getattr(rhs, "bind", None)
    if bind is not None:
        return bind(params)

    def f(x):
        return rhs(params, x)

    return f


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(rhs, params, x, h):
    """One classical Runge-Kutta step of size h (h may be scalar or (B,1))."""
    return _rk4(bound_rhs(rhs, params), x, h)


def solve(ivp: Ivp, output_times, substeps: int) -> Trajectory:
    """March RK4 from t0 through output_times, recording the state at each.

    Every pair of consecutive output times (and the stretch from t0 to the
    first output time, when they differ) is covered with `substeps` equal
    internal steps.  Any non-finite state aborts with :class:`Diverged`;
    states are never clamped or repaired.
    """
    times = np.asarray(output_times, dtype=float)
    if times.ndim != 1 or times.size == 0 or not np.isfinite(times).all():
        raise NonFinite("output_times must be a finite 1-d vector")
    if np.any(np.diff(times) <= 0.0):
        raise NonFinite("output_times must be strictly ascending")
    if times[0] < ivp.t0:
        raise NonFinite("output_times must start at or after t0")
    if not isinstance(substeps, (int, np.integer)) or substeps < 1:
        raise NonFinite("substeps must be a positive integer")

    f = bound_rhs(ivp.rhs, ivp.params)
    x = ivp.x0
    t = ivp.t0
    out = np.empty((times.size, x.size))
    start = 0
    if times[0] == ivp.t0:
        out[0] = x
        start = 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(start, times.size):
            h = (times[k] - t) / substeps
            for _ in range(substeps):
                x = _rk4(f, x, h)
                if not all_finite(x):
                    raise Diverged(at_time=t)
                t += h
            t = times[k]  # kill accumulated roundoff at output points
            out[k] = x
    return Trajectory(times=times, states=out)


def substeps_for(dt: float, h_max: float) -> int:
    """Fewest equal sub-intervals of dt whose width does not exceed h_max."""
    if dt <= 0.0:
        return 1
    return max(1, int(np.ceil(dt / h_max - 1e-12)))


def march_batch(rhs, params, x, schedule):
    """March a batch of states through a shared step schedule, no checks.

    Parameters
    ----------
    x : array or Dual, shape (B, n)
    params : shared (p,), per-row (B, p), or Dual (p,)
    schedule : sequence of (h, substeps, record)
        h is a scalar or a (B, 1) column (rows with h=0 stand still, which
        is how shorter segments pad out a lockstep march).

    Returns the recorded states as a list (one (B, n) entry per recorded
    interval).  Non-finite rows are left to poison themselves; callers
    screen the collected values.
    """
    f = bound_rhs(rhs, params)
    recorded = []
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for h, nsub, record in schedule:
            for _ in range(nsub):
                x = _rk4(f, x, h)
            if record:
                recorded.append(x)
    return recorded


@dataclass(frozen=True)
class SegmentPlan:
    """Inclusive (start, end) index pairs; consecutive pairs share an index."""

    bounds: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.bounds)


def segment_grid(times, target_points_per_segment: int) -> SegmentPlan:
    """Partition observation indices into overlapping shooting segments.

    Segments hold `target_points_per_segment` observations and share their
    boundary index with the next segment.  A trailing piece that would end
    up with fewer than 2 points is folded into the previous segment.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise NonFinite("times must be a 1-d vector with at least 2 entries")
    if np.any(np.diff(times) <= 0.0):
        raise NonFinite("times must be strictly ascending")
    target = target_points_per_segment
    if not isinstance(target, (int, np.integer)) or target < 2:
        raise NonFinite("target_points_per_segment must be an integer >= 2")

    last = times.size - 1
    stride = target - 1
    bounds = []
    s = 0
    while s < last:
        e = min(s + stride, last)
        if last - e == 0:
            bounds.append((s, e))
            break
        bounds.append((s, e))
        s = e
    return SegmentPlan(bounds=tuple(bounds))
