"""End-to-end training: surrogate warm start, then four optimization stages.

The stage order is fixed: particle swarm on the single-shooting loss,
CMA-ES on the multiple-shooting loss, quasi-Newton on multiple shooting,
and a final quasi-Newton polish on single shooting.  Every stage starts
from the previous stage's best parameters and can only improve its own
objective; a stage that cannot take a feasible step is recorded and
skipped.  Everything is deterministic under the config seed.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses
from .apce import ApceBasis, ChaosRhs, build_basis
from .data import ObservationSet
from .duals import value
from .integrate import segment_grid
from .kernels import (CollocationSet, KernelRhs, KernelSpec, fit_time_surrogate,
                      median_lengthscale, pilot_grid, spacing_lengthscale)
from .neural import MlpSpec, NeuralRhs, fit_regression, mlp_init
from .optimizers import (CmaesConfig, PsoConfig, QuasiNewtonConfig,
                         StalledAtInfeasible, cmaes_minimize, pso_minimize,
                         quasi_newton_minimize)


class AllStagesFailed(RuntimeError):
    """No stage (including the warm start) produced a feasible trajectory."""


@dataclass
class PipelineConfig:
    rhs_kind: str = "chaos"
    # chaos options
    n_max: int = 3
    basis_variant: str = "orthonormal"
    # neural options
    widths: tuple = (2, 32, 32, 2)
    # kernel options
    kernel_lengthscale: float | None = None
    kernel_lam: float = 1e-8
    pilots_per_dim: int = 5
    pilot_inflate: float = 0.1
    # surrogate warm start
    surrogate_lengthscale: float | None = None
    surrogate_spacing_factor: float = 4.0
    surrogate_lam: float = 1e-6
    warm_steps: int = 500
    warm_lr: float = 1e-2
    ridge: float = 1e-8
    # loss assembly
    segment_target: int = 8
    continuity_weight: float = 1.0
    h_max: float = 0.01
    penalty_loss: float = 1e12
    # stage toggles and budgets
    run_pso: bool = True
    run_cmaes: bool = True
    run_qn_ms: bool = True
    run_qn_ss: bool = True
    pso: PsoConfig = field(default_factory=PsoConfig)
    cmaes: CmaesConfig = field(default_factory=CmaesConfig)
    qn: QuasiNewtonConfig = field(default_factory=QuasiNewtonConfig)
    seed: int = 0

    def __post_init__(self):
        if self.rhs_kind not in ("chaos", "kernel", "neural"):
            raise ValueError(f"unknown rhs_kind {self.rhs_kind!r}")
        if self.basis_variant not in ("orthonormal", "monomial"):
            raise ValueError(f"unknown basis_variant {self.basis_variant!r}")
        if self.segment_target < 2:
            raise ValueError("segment_target must be at least 2")

    def to_dict(self) -> dict:
        from dataclasses import asdict

        d = asdict(self)
        d["widths"] = list(self.widths)
        # Runtime-only fields (set per stage from the warm start) do not
        # belong in a serialized config.
        d["pso"].pop("init_center", None)
        d["cmaes"].pop("x0", None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        pso = PsoConfig(**d.pop("pso", {}))
        cmaes = CmaesConfig(**d.pop("cmaes", {}))
        qn = QuasiNewtonConfig(**d.pop("qn", {}))
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        return cls(pso=pso, cmaes=cmaes, qn=qn, **d)


@dataclass
class StageReport:
    name: str
    mode: str
    start_loss: float | None
    end_loss: float
    iterations: int
    evals: int
    converged: bool
    seconds: float
    note: str = ""

    def to_dict(self, include_timing=True):
        d = {
            "name": self.name,
            "mode": self.mode,
            "start_loss": self.start_loss,
            "end_loss": self.end_loss,
            "iterations": int(self.iterations),
            "evals": int(self.evals),
            "converged": bool(self.converged),
            "note": self.note,
        }
        if include_timing:
            d["seconds"] = float(self.seconds)
        return d


@dataclass
class TrainedModel:
    rhs_kind: str
    model: dict
    params: np.ndarray
    stages: list
    final_loss: float

    def to_json(self, include_timing=True) -> str:
        doc = {
            "rhs_kind": self.rhs_kind,
            "model": self.model,
            "params": [float(v) for v in np.asarray(self.params).ravel()],
            "stages": [s.to_dict(include_timing=include_timing) for s in self.stages],
            "final_loss": float(self.final_loss),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "TrainedModel":
        doc = json.loads(text)
        stages = [
            StageReport(
                name=s["name"], mode=s["mode"], start_loss=s["start_loss"],
                end_loss=s["end_loss"], iterations=s["iterations"], evals=s["evals"],
                converged=s["converged"], seconds=s.get("seconds", 0.0),
                note=s.get("note", ""),
            )
            for s in doc["stages"]
        ]
        return TrainedModel(
            rhs_kind=doc["rhs_kind"], model=doc["model"],
            params=np.asarray(doc["params"], dtype=float),
            stages=stages, final_loss=doc["final_loss"],
        )

    def rhs(self):
        from .models import rhs_from_dict

        return rhs_from_dict(self.model)


def build_rhs(states, config: PipelineConfig):
    """Construct the untrained RHS model the config asks for."""
    states = np.asarray(states, dtype=float)
    if config.rhs_kind == "chaos":
        basis = build_basis(states, config.n_max)
        if config.basis_variant == "monomial":
            from .apce import monomial_basis

            basis = monomial_basis(states.shape[1], config.n_max, build_sample=states)
        return ChaosRhs(basis)
    if config.rhs_kind == "kernel":
        pilots = pilot_grid(states, per_dim=config.pilots_per_dim, inflate=config.pilot_inflate)
        ell = config.kernel_lengthscale
        if ell is None:
            ell = median_lengthscale(pilots)
        spec = KernelSpec(lengthscale=ell, lam=config.kernel_lam)
        return KernelRhs(spec, CollocationSet(pilots))
    widths = tuple(config.widths)
    n = states.shape[1]
    if widths[0] != n or widths[-1] != n:
        widths = (n,) + tuple(widths[1:-1]) + (n,)
    return NeuralRhs(MlpSpec(widths))


def _fit_field(rhs, xs, ys, config: PipelineConfig, seed: int) -> np.ndarray:
    """Fit RHS params to (state, derivative) pairs by plain regression."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if isinstance(rhs, ChaosRhs):
        phi = rhs.basis.eval_many(xs)
        a = phi.T @ phi + config.ridge * np.eye(phi.shape[1])
        theta = np.linalg.solve(a, phi.T @ ys)  # (M, n)
        return theta.T.ravel()
    if isinstance(rhs, KernelRhs):
        feats = rhs._kvec(xs)  # (N, P)
        a = feats.T @ feats + config.ridge * np.eye(rhs.p)
        c = np.linalg.solve(a, feats.T @ ys)  # (P, n)
        k = _kernel_matrix(rhs)
        return (k @ c).ravel()
    params0 = mlp_init(rhs.spec, seed)
    return fit_regression(rhs.spec, params0, xs, ys, steps=config.warm_steps, lr=config.warm_lr)


def _kernel_matrix(rhs: KernelRhs) -> np.ndarray:
    d2 = np.sum((rhs.pilots[:, None, :] - rhs.pilots[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * rhs.spec.lengthscale**2)) + rhs.spec.lam * np.eye(rhs.p)


def estimate_initial_params(data: ObservationSet, rhs, config: PipelineConfig,
                            seed: int | None = None) -> np.ndarray:
    """Warm start: smooth the data in time, read off derivative targets, regress."""
    if data.n_obs < 4:
        raise ValueError("initial estimation needs at least 4 observations")
    ell = config.surrogate_lengthscale
    if ell is None:
        ell = spacing_lengthscale(data.times, config.surrogate_spacing_factor)
    spec = KernelSpec(lengthscale=ell, lam=config.surrogate_lam)
    surr = fit_time_surrogate(data.times, data.states, spec)
    xs = surr.value(data.times)
    ys = surr.derivative(data.times)
    return _fit_field(rhs, xs, ys, config, config.seed if seed is None else seed)


def pretrain_perfect_information(rhs, true_field, region, grid_per_dim: int,
                                 config: PipelineConfig | None = None,
                                 seed: int = 0) -> np.ndarray:
    """Fit the RHS to the true field sampled on a uniform grid over `region`.

    `region` is (lo, hi) per-dimension vectors; `true_field` maps a (B, n)
    block of states to (B, n) derivatives.
    """
    lo, hi = (np.asarray(v, dtype=float) for v in region)
    if lo.shape != hi.shape or np.any(hi <= lo):
        raise ValueError("region must be a non-degenerate box")
    axes = [np.linspace(lo[i], hi[i], grid_per_dim) for i in range(lo.size)]
    mesh = np.meshgrid(*axes, indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=-1)
    ys = np.asarray(true_field(xs), dtype=float)
    cfg = config if config is not None else PipelineConfig()
    return _fit_field(rhs, xs, ys, cfg, seed)


def _stage_seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(4)]


def train(data: ObservationSet, config: PipelineConfig, rhs=None,
          initial_params=None) -> TrainedModel:
    """Run the full stage chain on one observation set."""
    if data.n_obs < 4:
        raise ValueError("training needs at least 4 observations")
    seeds = _stage_seeds(config.seed)
    if rhs is None:
        rhs = build_rhs(data.states, config)

    policy = losses.DivergencePolicy(penalty_loss=config.penalty_loss)
    ls_ss = losses.LossSpec(data=data, rhs=rhs, mode="single_shooting",
                            h_max=config.h_max, policy=policy)
    plan = segment_grid(data.times, min(config.segment_target, data.n_obs))
    ls_ms = losses.LossSpec(data=data, rhs=rhs, mode="multiple_shooting", plan=plan,
                            continuity_weight=config.continuity_weight,
                            h_max=config.h_max, policy=policy)

    stages = []
    t0 = time.perf_counter()
    if initial_params is None:
        params = estimate_initial_params(data, rhs, config, seed=seeds[0])
        note = "surrogate warm start"
    else:
        params = np.asarray(initial_params, dtype=float).copy()
        note = "caller-supplied start"
    def _feasible(p):
        return (losses.loss(ls_ss, p) < config.penalty_loss
                and losses.loss(ls_ms, p) < config.penalty_loss)

    init_ss = losses.loss(ls_ss, params)
    if not _feasible(params):
        # A wildly wrong start (sparse/noisy data) can blow up the solve
        # under either objective.  Contract toward the zero field until both
        # stay finite; the search stages take it from there.
        for _ in range(60):
            params = 0.5 * params
            if _feasible(params):
                break
        init_ss = losses.loss(ls_ss, params)
        note += ", damped to feasibility"
    stages.append(StageReport(
        name="init", mode="single_shooting", start_loss=None, end_loss=init_ss,
        iterations=0, evals=1, converged=True,
        seconds=time.perf_counter() - t0, note=note,
    ))
    feasible_ever = init_ss < config.penalty_loss

    incumbents = [params.copy()]

    def run_stage(name, mode, ls, runner, seed):
        nonlocal params, feasible_ever
        t1 = time.perf_counter()
        # Hand each stage the best point seen so far *under its own
        # objective* — an earlier stage's win on one loss may be useless or
        # even divergent under the other.
        scores = [losses.loss(ls, p) for p in incumbents]
        pick = int(np.argmin(scores))
        start_params = incumbents[pick]
        start = scores[pick]
        note = "" if pick == len(incumbents) - 1 else f"start from stage {pick}"
        try:
            report = runner(ls, start_params, seed)
            params = np.asarray(report.best_params, dtype=float)
            incumbents.append(params.copy())
            stages.append(StageReport(
                name=name, mode=mode, start_loss=start, end_loss=report.best_loss,
                iterations=report.iterations, evals=report.evals,
                converged=report.converged, seconds=time.perf_counter() - t1,
                note=note,
            ))
            if report.best_loss < config.penalty_loss and losses.loss(ls_ss, params) < config.penalty_loss:
                feasible_ever = True
        except StalledAtInfeasible as exc:
            stages.append(StageReport(
                name=name, mode=mode, start_loss=start, end_loss=start,
                iterations=0, evals=0, converged=False,
                seconds=time.perf_counter() - t1, note=f"skipped: {exc}",
            ))

    if config.run_pso:
        def _pso(ls, p0, seed):
            cfg = replace(config.pso, init_center=p0, seed=seed)
            return pso_minimize(lambda th: losses.loss(ls, th), p0.size, cfg,
                                objective_batch=lambda block: losses.loss_batch(ls, block))
        run_stage("pso", "single_shooting", ls_ss, _pso, seeds[1])

    if config.run_cmaes:
        def _cma(ls, p0, seed):
            # Step size relative to the RMS parameter scale, floored so a
            # near-zero start (e.g. after damping) still explores.
            scale = max(0.3, 0.1 + float(np.linalg.norm(p0)) / np.sqrt(p0.size))
            cfg = replace(config.cmaes, x0=p0, seed=seed,
                          sigma0=config.cmaes.sigma0 * scale)
            return cmaes_minimize(lambda th: losses.loss(ls, th), p0.size, cfg,
                                  objective_batch=lambda block: losses.loss_batch(ls, block))
        run_stage("cmaes", "multiple_shooting", ls_ms, _cma, seeds[2])

    def _qn(ls, p0, seed):
        return quasi_newton_minimize(
            lambda th: losses.loss(ls, th), lambda th: losses.gradient(ls, th),
            p0, config.qn, value_and_grad=lambda th: losses.value_and_grad(ls, th))

    if config.run_qn_ms:
        run_stage("qn_ms", "multiple_shooting", ls_ms, _qn, seeds[3])
    if config.run_qn_ss:
        run_stage("qn_ss", "single_shooting", ls_ss, _qn, seeds[3])

    # The returned model is the best single-shooting point the chain saw,
    # which the final polish stage normally is.
    finals = [losses.loss(ls_ss, p) for p in incumbents]
    pick = int(np.argmin(finals))
    params = incumbents[pick]
    final_loss = finals[pick]
    if not feasible_ever and final_loss >= config.penalty_loss:
        raise AllStagesFailed("no stage produced a feasible single-shooting trajectory")

    payload = _model_payload(rhs, params)
    return TrainedModel(rhs_kind=rhs.kind, model=payload, params=params,
                        stages=stages, final_loss=final_loss)


def _model_payload(rhs, params):
    if isinstance(rhs, ChaosRhs):
        return rhs.to_dict()
    if isinstance(rhs, KernelRhs):
        return rhs.to_dict(theta=params)
    return rhs.to_dict(params=params)
