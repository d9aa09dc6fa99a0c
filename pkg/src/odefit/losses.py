"""Shooting losses over the discretized solve, and their exact gradients.

Both shooting modes reduce to the same structure: a set of segments, each
anchored at a known state, marched across its observation times.  Single
shooting is one segment anchored at the initial condition; multiple
shooting anchors every segment at the observed state where it starts and
adds a continuity penalty on the mismatch at interior boundaries.

All segments march in lockstep as rows of one batch.  Each lockstep
interval uses that row's exact time gap, split into a substep count shared
across rows (the largest any interval needs to keep internal steps at or
under h_max), so rows of different lengths and phases stay synchronized;
exhausted rows idle with h = 0.  Candidate populations stack extra row
blocks onto the same march, and gradients run the identical code with
parameter tangents attached, which keeps the primal values bit-identical
to the plain evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ObservationSet
from .duals import Dual, all_finite
from .integrate import SegmentPlan, bound_rhs, _rk4, substeps_for


class DivergedNoGradient(RuntimeError):
    """The primal solve left finite range; no gradient exists at this point."""


@dataclass
class DivergencePolicy:
    penalty_loss: float = 1e12

    def __post_init__(self):
        if not (np.isfinite(self.penalty_loss) and self.penalty_loss > 0):
            raise ValueError("penalty_loss must be a positive finite real")


@dataclass
class LossSpec:
    """What to compare against what, and how to integrate in between."""

    data: ObservationSet
    rhs: object
    mode: str = "single_shooting"
    plan: SegmentPlan | None = None
    continuity_weight: float = 1.0
    h_max: float = 0.01
    policy: DivergencePolicy = field(default_factory=DivergencePolicy)

    def __post_init__(self):
        if self.mode not in ("single_shooting", "multiple_shooting"):
            raise ValueError(f"unknown shooting mode {self.mode!r}")
        if self.mode == "multiple_shooting" and self.plan is None:
            raise ValueError("multiple_shooting requires a SegmentPlan")
        if self.continuity_weight < 0:
            raise ValueError("continuity_weight must be non-negative")
        if not self.h_max > 0:
            raise ValueError("h_max must be positive")
        self._comp = None

    def compiled(self):
        if self._comp is None:
            self._comp = _compile(self)
        return self._comp


class _Compiled:
    """Padded lockstep tensors for one LossSpec (see module docstring)."""

    __slots__ = (
        "x_init", "anchor_err2", "h_cols", "targets", "mask", "cont",
        "nsub", "denom", "n_rows", "n_int", "weight",
    )


def _compile(spec: LossSpec) -> _Compiled:
    data = spec.data
    times = data.times
    states = data.states
    n = data.n_dim

    if spec.mode == "single_shooting":
        prefix = data.t0 < times[0]
        segs = [(0, times.size - 1)]
        inits = [data.x0]
        # row 0 of the only segment: marched when there is a prefix gap,
        # otherwise it is x0 itself compared against the first observation.
        anchored = [not prefix]
    else:
        segs = list(spec.plan.bounds)
        inits = [states[a] for a, _ in segs]
        anchored = [True] * len(segs)
        prefix = False

    n_rows = len(segs)
    lens = np.array([b - a + 1 for a, b in segs])
    n_int = int(lens.max() - 1) + (1 if prefix else 0)

    x_init = np.stack(inits)
    h_cols = np.zeros((n_int, n_rows, 1))
    targets = np.zeros((n_int, n_rows, n))
    mask = np.zeros((n_int, n_rows, 1))
    cont = np.zeros((n_int, n_rows, 1))

    dt_all = []
    for r, (a, b) in enumerate(segs):
        ks = 0
        if r == 0 and prefix:
            dt = times[0] - data.t0
            h_cols[0, r, 0] = dt
            targets[0, r] = states[0]
            mask[0, r, 0] = 1.0
            dt_all.append(dt)
            ks = 1
        for j in range(a, b):
            dt = times[j + 1] - times[j]
            k = ks + (j - a)
            h_cols[k, r, 0] = dt
            targets[k, r] = states[j + 1]
            mask[k, r, 0] = 1.0
            dt_all.append(dt)
        if spec.mode == "multiple_shooting" and r < n_rows - 1:
            cont[ks + (b - a) - 1, r, 0] = 1.0

    nsub = max(substeps_for(dt, spec.h_max) for dt in dt_all)
    h_cols /= nsub

    comp = _Compiled()
    comp.x_init = x_init
    comp.h_cols = h_cols
    comp.targets = targets
    comp.mask = mask
    comp.cont = cont
    comp.nsub = nsub
    comp.n_rows = n_rows
    comp.n_int = n_int
    comp.weight = float(spec.continuity_weight)
    # anchor rows contribute their (fixed) error against the observation at
    # the segment start; for plain multiple shooting that error is zero by
    # construction but still counts toward the entry total.
    if all(anchored):
        err0 = x_init - states[[a for a, _ in segs]]
        comp.anchor_err2 = float(np.sum(err0 * err0))
        anchor_points = n_rows
    else:
        comp.anchor_err2 = 0.0
        anchor_points = 0
    comp.denom = float((int(mask.sum()) + anchor_points) * n)
    return comp


def _march_terms(f, comp, x):
    """March the segment rows, returning (data_sse, continuity_sse) scalars.

    Generic over plain arrays and duals; the dual path repeats the exact
    plain operation sequence on the value part.
    """
    tot = 0.0
    con = 0.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(comp.n_int):
            h = comp.h_cols[k]
            for _ in range(comp.nsub):
                x = _rk4(f, x, h)
            err = x - comp.targets[k]
            sq = err * err
            tot = tot + (sq * comp.mask[k]).sum()
            if comp.weight > 0.0:
                con = con + (sq * comp.cont[k]).sum()
    return tot, con


def _march_terms_rows(f, comp, x, pop):
    """Population variant: per-candidate (data_sse, continuity_sse) vectors."""
    rows = pop * comp.n_rows
    tot = np.zeros(rows)
    con = np.zeros(rows)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(comp.n_int):
            h = np.tile(comp.h_cols[k], (pop, 1))
            for _ in range(comp.nsub):
                x = _rk4(f, x, h)
            err = x - np.tile(comp.targets[k], (pop, 1))
            sq = err * err
            tot += (sq * np.tile(comp.mask[k], (pop, 1))).sum(axis=-1)
            con += (sq * np.tile(comp.cont[k], (pop, 1))).sum(axis=-1)
    return tot.reshape(pop, -1).sum(axis=1), con.reshape(pop, -1).sum(axis=1)


def loss(spec: LossSpec, params) -> float:
    """Shooting loss at one parameter vector; divergence maps to the penalty."""
    comp = spec.compiled()
    f = bound_rhs(spec.rhs, np.asarray(params, dtype=float))
    tot, con = _march_terms(f, comp, comp.x_init)
    val = (tot + comp.anchor_err2) / comp.denom + comp.weight * con
    if not np.isfinite(val):
        return spec.policy.penalty_loss
    return float(val)


def loss_batch(spec: LossSpec, pop_params) -> np.ndarray:
    """Losses for a (pop, p) block of candidates, marched together."""
    p = np.asarray(pop_params, dtype=float)
    if p.ndim != 2:
        raise ValueError("loss_batch expects a (pop, p) matrix")
    comp = spec.compiled()
    pop = p.shape[0]
    rows = np.repeat(p, comp.n_rows, axis=0)
    f = bound_rhs(spec.rhs, rows)
    x0 = np.tile(comp.x_init, (pop, 1))
    tot, con = _march_terms_rows(f, comp, x0, pop)
    vals = (tot + comp.anchor_err2) / comp.denom + comp.weight * con
    return np.where(np.isfinite(vals), vals, spec.policy.penalty_loss)


def value_and_grad(spec: LossSpec, params):
    """Loss and its exact gradient under the fixed discretization.

    The march repeats the plain-value operation sequence with parameter
    tangents attached, so the returned value matches loss() bit for bit on
    feasible points.  Raises DivergedNoGradient when the primal diverges.
    """
    comp = spec.compiled()
    theta = Dual.seed(np.asarray(params, dtype=float))
    f = bound_rhs(spec.rhs, theta)
    x0 = Dual(comp.x_init, np.zeros((theta.nq,) + comp.x_init.shape))
    tot, con = _march_terms(f, comp, x0)
    out = (tot + comp.anchor_err2) / comp.denom + comp.weight * con
    if not all_finite(out):
        raise DivergedNoGradient("primal solve diverged; no gradient at this point")
    if not np.isfinite(out.tan).all():
        raise DivergedNoGradient("parameter tangents overflowed during the solve")
    return float(out.val), np.asarray(out.tan, dtype=float)


def gradient(spec: LossSpec, params) -> np.ndarray:
    return value_and_grad(spec, params)[1]
