"""Lotka-Volterra benchmark: data generation, evaluation setups, scenario sweeps.

The predator-prey system

    x1' = alpha*x1 - beta*x1*x2
    x2' = gamma*x1*x2 - delta*x2

with (alpha, beta, gamma, delta) = (1.5, 1.0, 1.0, 3.0) serves as the ground
truth everywhere.  Training data are equidistant samples of the exact solution
(computed once with a very fine reference integrator and cached) plus optional
i.i.d. Gaussian noise.  Trained models are scored by the mean squared error
against the exact solution on three held-out setups: inside the training
window, beyond it, and from an unseen initial condition.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import apce, integrate
from .data import ObservationSet
from .pipeline import AllStagesFailed, PipelineConfig, TrainedModel, train, \
    build_rhs, pretrain_perfect_information

LV_PARAMS = (1.5, 1.0, 1.0, 3.0)

#: MSE at or below this value counts as a successful reconstruction.
SUCCESS_THRESHOLD = 10.0

#: Step bound for the ground-truth reference integrator.
REFERENCE_H = 1e-4


def lv_rhs(x, alpha=1.5, beta=1.0, gamma=1.0, delta=3.0):
    """Lotka-Volterra field.  Works on (..., 2) arrays and on dual numbers."""
    x1 = x[..., 0]
    x2 = x[..., 1]
    cross = x1 * x2
    d1 = alpha * x1 - beta * cross
    d2 = gamma * cross - delta * x2
    from .duals import Dual, stack_last

    if isinstance(d1, Dual):
        return stack_last((d1, d2))
    return np.stack((np.asarray(d1), np.asarray(d2)), axis=-1)


class LvTrueRhs:
    """Parameterless right-hand-side wrapper around the exact field.

    Lets the true dynamics flow through the same integration helpers as the
    learned models (``params`` is accepted and ignored).
    """

    kind = "lv_true"
    n_params = 0

    def __init__(self, alpha=1.5, beta=1.0, gamma=1.0, delta=3.0):
        self.coeffs = (alpha, beta, gamma, delta)

    def __call__(self, params, x):
        return lv_rhs(x, *self.coeffs)

    def bind(self, params):
        coeffs = self.coeffs
        return lambda x: lv_rhs(x, *coeffs)


def _lv_reference_states(times: tuple, x0: tuple) -> np.ndarray:
    """Exact-solution proxy: scalar RK4 with step <= REFERENCE_H.

    Plain-float inner loop; roughly 1e5 steps per call, so results are cached
    by ``lv_reference``.
    """
    a, b, g, d = LV_PARAMS
    x, y = float(x0[0]), float(x0[1])
    t = times[0]
    out = np.empty((len(times), 2))
    out[0] = (x, y)
    for k in range(1, len(times)):
        dt = times[k] - t
        nsub = max(1, math.ceil(dt / REFERENCE_H - 1e-12))
        h = dt / nsub
        h2 = 0.5 * h
        for _ in range(nsub):
            k1x = a * x - b * x * y
            k1y = g * x * y - d * y
            xx, yy = x + h2 * k1x, y + h2 * k1y
            k2x = a * xx - b * xx * yy
            k2y = g * xx * yy - d * yy
            xx, yy = x + h2 * k2x, y + h2 * k2y
            k3x = a * xx - b * xx * yy
            k3y = g * xx * yy - d * yy
            xx, yy = x + h * k3x, y + h * k3y
            k4x = a * xx - b * xx * yy
            k4y = g * xx * yy - d * yy
            x += h * (k1x + 2.0 * (k2x + k3x) + k4x) / 6.0
            y += h * (k1y + 2.0 * (k2y + k3y) + k4y) / 6.0
        t = times[k]
        out[k] = (x, y)
    return out


@lru_cache(maxsize=64)
def _lv_reference_cached(times: tuple, x0: tuple) -> np.ndarray:
    states = _lv_reference_states(times, x0)
    states.setflags(write=False)
    return states


def lv_reference(times: np.ndarray, x0: Sequence[float] = (1.0, 1.0)) -> np.ndarray:
    """Ground-truth trajectory sampled at ``times`` (read-only, cached)."""
    return _lv_reference_cached(tuple(float(t) for t in times),
                                (float(x0[0]), float(x0[1])))


def generate_data(n_obs: int, sigma: float, seed: int,
                  x0: Sequence[float] = (1.0, 1.0),
                  span: Sequence[float] = (0.0, 7.0)) -> ObservationSet:
    """Equidistant noisy observations of the exact solution.

    Noise is additive N(0, sigma^2) per entry, drawn from a generator seeded
    with ``seed``; sigma = 0 reproduces the clean samples bit for bit.
    """
    if n_obs < 2:
        raise ValueError("need at least two observations")
    times = np.linspace(float(span[0]), float(span[1]), int(n_obs))
    clean = lv_reference(times, x0)
    if sigma > 0.0:
        rng = np.random.default_rng(seed)
        states = clean + sigma * rng.standard_normal(clean.shape)
    else:
        states = clean.copy()
    return ObservationSet(times=times, states=states,
                          x0=np.asarray(x0, dtype=float),
                          sigma=float(sigma), seed=int(seed),
                          t0=float(span[0]))


# ---------------------------------------------------------------------------
# evaluation setups


@dataclass(frozen=True)
class EvalSetup:
    """A held-out trajectory on which reconstruction error is measured."""

    name: str
    span: tuple
    x0: tuple

    def times(self, n_eval: int) -> np.ndarray:
        return np.linspace(self.span[0], self.span[1], n_eval)


SETUPS = {
    "ex_it": EvalSetup("ex_it", (0.0, 7.0), (1.0, 1.0)),
    "ex_oot": EvalSetup("ex_oot", (0.0, 14.0), (1.0, 1.0)),
    "ex_ood": EvalSetup("ex_ood", (0.0, 14.0), (0.5, 0.5)),
}


def evaluate_rhs(rhs, params: np.ndarray, setup: EvalSetup,
                 n_eval: int = 200, h_max: float = 0.01) -> float:
    """MSE of the model trajectory against ground truth on one setup.

    Both trajectories start from the setup's exact initial state.  A diverged
    model integration scores ``inf``.
    """
    times = setup.times(n_eval)
    truth = lv_reference(times, setup.x0)
    dt = times[1] - times[0]
    nsub = integrate.substeps_for(dt, h_max)
    ivp = integrate.Ivp(rhs=rhs, params=np.asarray(params, dtype=float),
                        x0=np.asarray(setup.x0, dtype=float), t0=times[0])
    try:
        traj = integrate.solve(ivp, times, nsub)
    except integrate.Diverged:
        return float("inf")
    err = traj.states - truth
    if not np.all(np.isfinite(err)):
        return float("inf")
    return float(np.mean(err * err))


def evaluate(model: TrainedModel, setup: EvalSetup,
             n_eval: int = 200, h_max: float = 0.01) -> float:
    """Score a trained model on one evaluation setup."""
    return evaluate_rhs(model.rhs(), model.params, setup, n_eval, h_max)


# ---------------------------------------------------------------------------
# scenario records


RECORD_CSV_COLUMNS = (
    "scenario", "method", "basis_variant", "n_train", "sigma", "seed",
    "mse_ex_it", "mse_ex_oot", "mse_ex_ood",
    "success_ex_it", "success_ex_oot", "success_ex_ood",
    "wall_time_s",
)


@dataclass
class ScenarioRecord:
    """One benchmark cell: a (scenario, method, variant, N, sigma, seed) run."""

    scenario: str
    method: str
    basis_variant: str
    n_train: int
    sigma: float
    seed: int
    mse_ex_it: float
    mse_ex_oot: float
    mse_ex_ood: float
    success_ex_it: bool
    success_ex_oot: bool
    success_ex_ood: bool
    wall_time_s: float
    gram_cond: float | None = None
    error: str | None = None
    config: dict = field(default_factory=dict)

    def key(self) -> tuple:
        return (self.scenario, self.method, self.basis_variant,
                self.n_train, self.sigma, self.seed)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioRecord":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def success(mse: float) -> bool:
    """A run succeeds when its MSE does not exceed the threshold."""
    return mse <= SUCCESS_THRESHOLD


# ---------------------------------------------------------------------------
# scenario settings and sweeps


def _default_pipeline() -> PipelineConfig:
    return PipelineConfig()


@dataclass
class ScenarioSettings:
    """Sweep axes plus the shared pipeline configuration for one scenario."""

    scenario: str = "S2"
    methods: tuple = ("chaos", "kernel", "neural")
    variants: tuple = ("orthonormal",)
    n_grid: tuple = (35,)
    sigma_grid: tuple = (0.0,)
    seeds: tuple = tuple(range(10))
    x0: tuple = (1.0, 1.0)
    span: tuple = (0.0, 7.0)
    n_eval: int = 200
    eval_h_max: float = 0.01
    workers: int = 1
    # S1 only: perfect-information pretraining controls.
    pretrain_region: tuple = ((0.25, 0.25), (7.0, 7.0))
    pretrain_grid: int = 50
    pipeline: PipelineConfig = field(default_factory=_default_pipeline)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name != "pipeline"}
        d["pipeline"] = self.pipeline.to_dict()
        return d


def default_settings(scenario: str, **overrides) -> ScenarioSettings:
    """Per-scenario sweep defaults.

    S1: pretrain + fine-tune on a single clean N=144 record per method.
    S2: training-set-size sweep at sigma = 0.
    S3: noise-level sweep crossed with four set sizes.
    S4: chaos-only orthonormal-vs-monomial comparison on the S3 axes.
    """
    if scenario == "S1":
        base = ScenarioSettings(scenario="S1", n_grid=(144,),
                                sigma_grid=(0.0,), seeds=(0,))
    elif scenario == "S2":
        base = ScenarioSettings(scenario="S2",
                                n_grid=(10, 18, 35, 70, 100, 250, 500),
                                sigma_grid=(0.0,), seeds=tuple(range(10)))
    elif scenario == "S3":
        base = ScenarioSettings(scenario="S3",
                                n_grid=(10, 35, 100, 500),
                                sigma_grid=(0.0, 0.001, 0.01, 0.1, 1.0),
                                seeds=tuple(range(10)))
    elif scenario == "S4":
        base = ScenarioSettings(scenario="S4", methods=("chaos",),
                                variants=("orthonormal", "monomial"),
                                n_grid=(10, 35, 100, 500),
                                sigma_grid=(0.0, 0.001, 0.01, 0.1, 1.0),
                                seeds=tuple(range(10)))
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    for name, value in overrides.items():
        base = replace(base, **{name: value})
    return base


def scenario_cells(settings: ScenarioSettings) -> list[dict]:
    """Expand the sweep axes into one dict per benchmark cell."""
    cells = []
    for variant in settings.variants:
        for method in settings.methods:
            if variant != "orthonormal" and method != "chaos":
                continue
            for n in settings.n_grid:
                for sigma in settings.sigma_grid:
                    for seed in settings.seeds:
                        cells.append({
                            "scenario": settings.scenario,
                            "method": method,
                            "basis_variant": variant if method == "chaos"
                            else "n/a",
                            "n_train": int(n),
                            "sigma": float(sigma),
                            "seed": int(seed),
                        })
    return cells


def run_cell(settings: ScenarioSettings, cell: dict) -> ScenarioRecord:
    """Train one model for one cell and score it on all three setups."""
    started = time.perf_counter()
    pcfg = replace(settings.pipeline,
                   rhs_kind=cell["method"],
                   basis_variant=cell["basis_variant"]
                   if cell["method"] == "chaos" else
                   settings.pipeline.basis_variant,
                   seed=cell["seed"])
    data = generate_data(cell["n_train"], cell["sigma"], cell["seed"],
                         x0=settings.x0, span=settings.span)
    error = None
    gram_cond = None
    trained = None
    try:
        if settings.scenario == "S1":
            trained = _run_pretrained(settings, pcfg, data)
        else:
            trained = train(data, pcfg)
    except AllStagesFailed as exc:
        error = str(exc)
    if trained is not None:
        rhs = trained.rhs()
        if settings.scenario == "S4" and cell["method"] == "chaos":
            # Basis was built from the training states, so the Gram matrix
            # over those states is the conditioning the fit actually saw.
            g = apce.gram(rhs.basis, data.states)
            gram_cond = float(np.linalg.cond(g))
        mses = {name: evaluate_rhs(rhs, trained.params, setup,
                                   settings.n_eval, settings.eval_h_max)
                for name, setup in SETUPS.items()}
    else:
        mses = {name: float("inf") for name in SETUPS}
    wall = time.perf_counter() - started
    return ScenarioRecord(
        scenario=cell["scenario"], method=cell["method"],
        basis_variant=cell["basis_variant"], n_train=cell["n_train"],
        sigma=cell["sigma"], seed=cell["seed"],
        mse_ex_it=mses["ex_it"], mse_ex_oot=mses["ex_oot"],
        mse_ex_ood=mses["ex_ood"],
        success_ex_it=success(mses["ex_it"]),
        success_ex_oot=success(mses["ex_oot"]),
        success_ex_ood=success(mses["ex_ood"]),
        wall_time_s=wall, gram_cond=gram_cond, error=error,
        config=settings.to_dict(),
    )


def _run_pretrained(settings: ScenarioSettings, pcfg: PipelineConfig,
                    data: ObservationSet) -> TrainedModel:
    """S1 path: fit the exact field on a dense grid, then fine-tune on data.

    The representation (basis sample, kernel pilots) is built from the dense
    grid so it covers the whole pretraining region, not just the trajectory.
    """
    (lo1, lo2), (hi1, hi2) = settings.pretrain_region
    g = settings.pretrain_grid
    ax1 = np.linspace(lo1, hi1, g)
    ax2 = np.linspace(lo2, hi2, g)
    mesh = np.meshgrid(ax1, ax2, indexing="ij")
    grid_states = np.stack([m.ravel() for m in mesh], axis=-1)
    rhs = build_rhs(grid_states, pcfg)
    p0 = pretrain_perfect_information(
        rhs, lambda x: lv_rhs(x), region=settings.pretrain_region,
        grid_per_dim=g, config=pcfg, seed=pcfg.seed)
    return train(data, pcfg, rhs=rhs, initial_params=p0)


def _cell_worker(payload: tuple) -> dict:
    settings_dict, cell = payload
    settings = _settings_from_dict(settings_dict)
    return run_cell(settings, cell).to_dict()


def _settings_from_dict(d: dict) -> ScenarioSettings:
    d = dict(d)
    pipeline = PipelineConfig.from_dict(d.pop("pipeline"))
    known = {f.name for f in fields(ScenarioSettings)}
    kwargs = {}
    for k, v in d.items():
        if k not in known:
            continue
        kwargs[k] = tuple(tuple(e) if isinstance(e, list) else e for e in v) \
            if isinstance(v, list) else v
    return ScenarioSettings(pipeline=pipeline, **kwargs)


def run_scenario(settings: ScenarioSettings,
                 skip_keys: set | None = None,
                 progress: Callable[[str], None] | None = None
                 ) -> list[ScenarioRecord]:
    """Run all cells of a scenario, optionally skipping completed ones.

    Cells are independent: each builds its data and model from its own seed,
    so a record is identical whether its cell runs alone, in sequence, or in
    a worker pool.  Results come back sorted by cell key.
    """
    cells = scenario_cells(settings)
    if skip_keys:
        cells = [c for c in cells
                 if (c["scenario"], c["method"], c["basis_variant"],
                     c["n_train"], c["sigma"], c["seed"]) not in skip_keys]
    records: list[ScenarioRecord] = []
    if settings.workers > 1 and len(cells) > 1:
        import concurrent.futures as cf

        payloads = [(settings.to_dict(), c) for c in cells]
        with cf.ProcessPoolExecutor(max_workers=settings.workers) as pool:
            for i, rec_dict in enumerate(pool.map(_cell_worker, payloads)):
                records.append(ScenarioRecord.from_dict(rec_dict))
                if progress:
                    progress(f"[{i + 1}/{len(cells)}] {records[-1].key()}")
    else:
        for i, cell in enumerate(cells):
            records.append(run_cell(settings, cell))
            if progress:
                progress(f"[{i + 1}/{len(cells)}] {records[-1].key()}")
    records.sort(key=lambda r: r.key())
    return records


# ---------------------------------------------------------------------------
# aggregation and serialization


class EmptyGroup(ValueError):
    """Raised when an aggregation has no records to reduce."""


_STATISTICS = {
    "median": lambda vals: float(np.median(vals)),
    "min": lambda vals: float(np.min(vals)),
    "mean": lambda vals: float(np.mean(vals)),
    "success_rate": lambda vals: float(np.mean([bool(v) for v in vals])),
}


def aggregate(records: Sequence[ScenarioRecord], group_by: Sequence[str],
              statistic: str, value: str) -> list[dict]:
    """Reduce ``value`` over record groups.

    ``group_by`` names record fields; ``statistic`` is one of
    median | min | mean | success_rate.  Returns one dict per group with the
    group fields plus ``value``, sorted by group key.
    """
    if statistic not in _STATISTICS:
        raise ValueError(f"unknown statistic {statistic!r}")
    if not records:
        raise EmptyGroup("no records to aggregate")
    groups: dict[tuple, list] = {}
    for rec in records:
        key = tuple(getattr(rec, g) for g in group_by)
        groups.setdefault(key, []).append(getattr(rec, value))
    reduce = _STATISTICS[statistic]
    out = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        row = dict(zip(group_by, key))
        row["value"] = reduce(groups[key])
        out.append(row)
    return out


def write_jsonl(path, records: Sequence[ScenarioRecord]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True))
            fh.write("\n")


def read_jsonl(path) -> list[ScenarioRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ScenarioRecord.from_dict(json.loads(line)))
    return records


def write_csv(path, records: Sequence[ScenarioRecord]) -> None:
    """Flat summary table; fixed column order, no config echo."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_CSV_COLUMNS)
        for rec in records:
            d = rec.to_dict()
            writer.writerow([d[c] for c in RECORD_CSV_COLUMNS])


def merge_resume(existing: Sequence[ScenarioRecord],
                 settings: ScenarioSettings,
                 progress: Callable[[str], None] | None = None
                 ) -> tuple[list[ScenarioRecord], int]:
    """Run only the cells missing from ``existing``; return merged, sorted.

    The merged list is what a clean full run would have produced, so a resumed
    sweep and an uninterrupted one serialize identically.
    """
    done = {rec.key() for rec in existing}
    fresh = run_scenario(settings, skip_keys=done, progress=progress)
    merged = list(existing) + fresh
    merged.sort(key=lambda r: r.key())
    return merged, len(fresh)
