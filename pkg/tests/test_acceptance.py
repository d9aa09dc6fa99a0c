"""Acceptance battery: eleven end-to-end checks with pinned tolerances.

Each test prints one ``criterion NN: PASS/FAIL`` line carrying the measured
numbers, so a run of this file doubles as the acceptance record.  Criteria
1-6 and 11 are fast unit-level gates; criteria 7-10 run the four benchmark
scenarios at reduced desk scale (5 seeds, trimmed grids) through session
fixtures and dominate the runtime.
"""

import json
import time

import numpy as np
import pytest

from odefit.apce import MomentTable, apce_univariate, build_basis, gram
from odefit.bench import (LvTrueRhs, default_settings, generate_data,
                          lv_reference, lv_rhs, run_cell, run_scenario,
                          scenario_cells)
from odefit.integrate import Ivp, segment_grid, solve
from odefit.losses import LossSpec, gradient, loss
from odefit.optimizers import (CmaesConfig, PsoConfig, QuasiNewtonConfig,
                               cmaes_minimize, pso_minimize,
                               quasi_newton_minimize)
from odefit.pipeline import (PipelineConfig, build_rhs,
                             pretrain_perfect_information, train)


def verdict(num, ok, detail):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


def med(records, field, **match):
    vals = [getattr(r, field) for r in records
            if all(getattr(r, k) == v for k, v in match.items())]
    assert vals, f"no records match {match}"
    return float(np.median(vals))


# ---------------------------------------------------------------------------
# desk-scale training budgets (tuned once, then frozen)


def s1_pipeline(method):
    """Per-method budget for the pretrain-then-finetune scenario."""
    if method == "neural":
        return PipelineConfig(
            rhs_kind="neural", widths=(2, 16, 2), h_max=0.02,
            segment_target=2,
            pso=PsoConfig(swarm=10, iters=15),
            cmaes=CmaesConfig(sigma0=0.3, popsize=12, max_evals=800),
            qn=QuasiNewtonConfig(max_iters=40, ftol=1e-12))
    return PipelineConfig(
        rhs_kind=method, n_max=2, h_max=0.02, segment_target=2,
        pso=PsoConfig(swarm=20, iters=20),
        cmaes=CmaesConfig(sigma0=1.0, popsize=12, max_evals=2000),
        qn=QuasiNewtonConfig(max_iters=120, ftol=1e-13))


def sweep_pipeline():
    """Shared budget for the size (S2) and noise (S3) sweeps."""
    return PipelineConfig(
        n_max=2, h_max=0.02, segment_target=2, widths=(2, 16, 2),
        pso=PsoConfig(swarm=40, iters=60),
        cmaes=CmaesConfig(sigma0=1.0, popsize=24, max_evals=10000),
        qn=QuasiNewtonConfig(max_iters=300, ftol=1e-13))


def s4_pipeline():
    """Budget for the basis ablation (chaos only, both variants)."""
    return PipelineConfig(
        rhs_kind="chaos", n_max=2, h_max=0.02, segment_target=2,
        pso=PsoConfig(swarm=40, iters=40),
        cmaes=CmaesConfig(sigma0=1.0, popsize=24, max_evals=2500),
        qn=QuasiNewtonConfig(max_iters=50, ftol=1e-13))


FIVE_SEEDS = tuple(range(5))


@pytest.fixture(scope="session")
def s1_results():
    started = time.perf_counter()
    records = {}
    for method in ("chaos", "kernel", "neural"):
        settings = default_settings(
            "S1", methods=(method,), seeds=FIVE_SEEDS, eval_h_max=0.02,
            pipeline=s1_pipeline(method))
        records[method] = run_scenario(settings)
    return records, time.perf_counter() - started


@pytest.fixture(scope="session")
def s2_results():
    started = time.perf_counter()
    settings = default_settings(
        "S2", n_grid=(10, 35, 100), seeds=FIVE_SEEDS, eval_h_max=0.02,
        pipeline=sweep_pipeline())
    return run_scenario(settings), time.perf_counter() - started


@pytest.fixture(scope="session")
def s3_results():
    started = time.perf_counter()
    settings = default_settings(
        "S3", n_grid=(10, 100), sigma_grid=(0.0, 0.01), seeds=FIVE_SEEDS,
        eval_h_max=0.02, pipeline=sweep_pipeline())
    return run_scenario(settings), time.perf_counter() - started


@pytest.fixture(scope="session")
def s4_results():
    started = time.perf_counter()
    settings = default_settings(
        "S4", n_grid=(10, 35), sigma_grid=(0.0, 0.01), seeds=FIVE_SEEDS,
        eval_h_max=0.02, pipeline=s4_pipeline())
    return run_scenario(settings), time.perf_counter() - started


# ---------------------------------------------------------------------------
# 1. orthonormal polynomials from exact moments


def test_criterion_01_polynomials_from_exact_moments():
    started = time.perf_counter()
    gauss = np.zeros(9)
    gauss[0] = 1.0
    for k in range(2, 9, 2):
        gauss[k] = gauss[k - 2] * (k - 1)  # E[x^k] = (k-1)!! for N(0,1)
    unif = np.array([(1.0 / (k + 1)) if k % 2 == 0 else 0.0
                     for k in range(9)])  # E[x^k] for U(-1,1)
    hermite = {
        0: np.array([1.0]),
        1: np.array([0.0, 1.0]),
        2: np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0),
        3: np.array([0.0, -3.0, 0.0, 1.0]) / np.sqrt(6.0),
        4: np.array([3.0, 0.0, -6.0, 0.0, 1.0]) / np.sqrt(24.0),
    }
    legendre = {
        0: np.array([1.0]),
        1: np.array([0.0, 1.0]) * np.sqrt(3.0),
        2: np.array([-0.5, 0.0, 1.5]) * np.sqrt(5.0),
        3: np.array([0.0, -1.5, 0.0, 2.5]) * np.sqrt(7.0),
        4: np.array([3.0, 0.0, -30.0, 0.0, 35.0]) * (3.0 / 8.0),
    }
    worst = 0.0
    for moments, oracle in ((gauss, hermite), (unif, legendre)):
        table = MomentTable(moments=moments, sample_size=0)
        for degree, want in oracle.items():
            got = apce_univariate(table, degree).coeffs
            worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - started
    verdict(1, worst < 1e-10 and elapsed < 1.0,
            f"max coefficient error {worst:.2e} (tol 1e-10), {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. orthonormality on the build sample


def test_criterion_02_gram_identity_on_build_sample():
    started = time.perf_counter()
    states = generate_data(2000, 0.0, 0).states
    basis = build_basis(states, 3)
    g = gram(basis, states)
    dev = float(np.max(np.abs(g - np.eye(basis.size))))
    elapsed = time.perf_counter() - started
    verdict(2, dev < 1e-8 and elapsed < 1.0,
            f"N=2000 states, degree<=3: max |G - I| = {dev:.2e} "
            f"(tol 1e-8), {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 3. exact representability of the benchmark field


def test_criterion_03_perfect_information_recovery():
    started = time.perf_counter()
    region = ((0.25, 0.25), (7.0, 7.0))
    grid_per_dim = 50
    ax = [np.linspace(region[0][i], region[1][i], grid_per_dim)
          for i in range(2)]
    mesh = np.meshgrid(*ax, indexing="ij")
    grid_states = np.stack([m.ravel() for m in mesh], axis=-1)
    config = PipelineConfig(rhs_kind="chaos", n_max=2)
    rhs = build_rhs(grid_states, config)
    params = pretrain_perfect_information(
        rhs, lambda x: lv_rhs(x), region=region, grid_per_dim=grid_per_dim,
        config=config, seed=0)
    err = float(np.max(np.abs(rhs(params, grid_states) - lv_rhs(grid_states))))
    elapsed = time.perf_counter() - started
    verdict(3, err < 1e-8 and elapsed < 5.0,
            f"degree-2 fit of the quadratic field: max RHS error {err:.2e} "
            f"(tol 1e-8), {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 4. integrator convergence order


def test_criterion_04_rk4_convergence_order():
    started = time.perf_counter()
    times = np.linspace(0.0, 7.0, 15)
    truth = lv_reference(times, (1.0, 1.0))
    ivp = Ivp(rhs=LvTrueRhs(), params=np.zeros(0),
              x0=np.array([1.0, 1.0]), t0=0.0)
    steps, errors = [], []
    for nsub in (2, 4, 8, 16):
        traj = solve(ivp, times, nsub)
        errors.append(float(np.max(np.abs(traj.states - truth))))
        steps.append((times[1] - times[0]) / nsub)
    slope = float(np.polyfit(np.log(steps), np.log(errors), 1)[0])
    elapsed = time.perf_counter() - started
    verdict(4, 3.7 <= slope <= 4.3 and elapsed < 10.0,
            f"empirical order {slope:.3f} on [0, 7] "
            f"(window [3.7, 4.3]), {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 5. forward-mode gradients against central differences


def test_criterion_05_gradients_match_finite_differences():
    started = time.perf_counter()
    data = generate_data(8, 0.0, 0, span=(0.0, 1.5))
    plan = segment_grid(data.times, 3)
    cases = (
        ("chaos", build_rhs(data.states,
                            PipelineConfig(rhs_kind="chaos", n_max=2))),
        ("kernel", build_rhs(data.states,
                             PipelineConfig(rhs_kind="kernel",
                                            pilots_per_dim=4,
                                            kernel_lam=1e-5))),
        ("neural", build_rhs(data.states,
                             PipelineConfig(rhs_kind="neural",
                                            widths=(2, 8, 2)))),
    )
    worst = 0.0
    combo = 0
    for kind, rhs in cases:
        for mode in ("single_shooting", "multiple_shooting"):
            spec = LossSpec(
                data=data, rhs=rhs, mode=mode,
                plan=plan if mode == "multiple_shooting" else None,
                h_max=0.05)
            rng = np.random.default_rng(100 + combo)
            combo += 1
            checked = 0
            draws = 0
            while checked < 20:
                draws += 1
                assert draws < 400, f"{kind}/{mode}: feasible draws too rare"
                theta = 0.15 * rng.standard_normal(rhs.n_params)
                base = loss(spec, theta)
                if not np.isfinite(base) or base >= spec.policy.penalty_loss:
                    continue
                g = gradient(spec, theta)
                fd = np.empty_like(g)
                for i in range(theta.size):
                    h = 1e-6 * max(1.0, abs(theta[i]))
                    up, down = theta.copy(), theta.copy()
                    up[i] += h
                    down[i] -= h
                    fd[i] = (loss(spec, up) - loss(spec, down)) / (2.0 * h)
                rel = float(np.linalg.norm(g - fd)
                            / max(np.linalg.norm(fd), 1e-12))
                worst = max(worst, rel)
                checked += 1
    elapsed = time.perf_counter() - started
    verdict(5, worst < 1e-5 and elapsed < 120.0,
            f"3 kinds x 2 modes x 20 points: worst relative gradient "
            f"error {worst:.2e} (tol 1e-5), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 6. optimizer unit targets


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2
                        + (1.0 - x[:-1]) ** 2))


def rosenbrock_grad(x):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    g[:-1] = -400.0 * x[:-1] * (x[1:] - x[:-1] ** 2) - 2.0 * (1.0 - x[:-1])
    g[1:] += 200.0 * (x[1:] - x[:-1] ** 2)
    return g


def test_criterion_06_optimizer_units():
    started = time.perf_counter()
    cma = cmaes_minimize(rosenbrock, dim=5,
                         config=CmaesConfig(x0=np.zeros(5), sigma0=0.5,
                                            max_evals=100_000, seed=0))
    pso = pso_minimize(rosenbrock, dim=2,
                       config=PsoConfig(swarm=40, iters=300, seed=0,
                                        init_center=np.zeros(2),
                                        init_spread=2.0))
    qn = quasi_newton_minimize(rosenbrock, rosenbrock_grad,
                               np.array([-1.2, 1.0]),
                               QuasiNewtonConfig(max_iters=200))
    elapsed = time.perf_counter() - started
    ok = (cma.best_loss < 1e-8 and cma.evals <= 100_000
          and pso.best_loss < 1e-4 and qn.best_loss < 1e-8
          and elapsed < 60.0)
    verdict(6, ok,
            f"CMA-ES 5-D {cma.best_loss:.1e} in {cma.evals} evals "
            f"(<1e-8, <=1e5); PSO 2-D {pso.best_loss:.1e} (<1e-4); "
            f"BFGS {qn.best_loss:.1e} (<1e-8); {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 7. pretrain-then-finetune method ranking (5 seeds)


def test_criterion_07_s1_method_ranking(s1_results):
    records, elapsed = s1_results
    chaos_it = med(records["chaos"], "mse_ex_it")
    chaos_ood = med(records["chaos"], "mse_ex_ood")
    kernel_ood = med(records["kernel"], "mse_ex_ood")
    neural_ood = med(records["neural"], "mse_ex_ood")
    kernel_ok = (chaos_ood < kernel_ood < neural_ood
                 or kernel_ood >= 10.0 * chaos_ood)
    ok = (chaos_it <= 1e-4 and chaos_ood <= 0.1
          and neural_ood >= 10.0 * chaos_ood
          and kernel_ok and elapsed <= 1800.0)
    verdict(7, ok,
            f"medians: chaos ex-it {chaos_it:.2e} (<=1e-4), "
            f"chaos ex-ood {chaos_ood:.2e} (<=0.1), "
            f"kernel ex-ood {kernel_ood:.2e} (between or >=10x chaos), "
            f"neural ex-ood {neural_ood:.2e} (>=10x chaos); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 8. extrapolation vs training-set size (5 seeds)


def test_criterion_08_s2_chaos_extrapolates_best(s2_results):
    records, elapsed = s2_results
    pieces = []
    ok = elapsed <= 3600.0
    for n in (10, 35, 100):
        cell = {m: med(records, "mse_ex_ood", method=m, n_train=n)
                for m in ("chaos", "kernel", "neural")}
        lowest = cell["chaos"] < cell["kernel"] and cell["chaos"] < cell["neural"]
        ok = ok and lowest
        pieces.append(f"N={n}: chaos {cell['chaos']:.1e} "
                      f"kernel {cell['kernel']:.1e} "
                      f"neural {cell['neural']:.1e} "
                      f"{'ok' if lowest else 'VIOLATED'}")
    verdict(8, ok, "median ex-ood " + "; ".join(pieces) + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 9. training-window stability under noise (5 seeds)


def test_criterion_09_s3_success_rate(s3_results):
    records, elapsed = s3_results
    rate = float(np.mean([r.success_ex_it for r in records]))
    per_cell = []
    for sigma in (0.0, 0.01):
        for n in (10, 100):
            hits = [r.success_ex_it for r in records
                    if r.sigma == sigma and r.n_train == n]
            per_cell.append(f"sigma={sigma:g},N={n}: {np.mean(hits):.2f}")
    ok = rate >= 0.9 and elapsed <= 3600.0
    verdict(9, ok,
            f"pooled ex-it success {rate:.3f} over {len(records)} runs "
            f"(>=0.90); cells " + "; ".join(per_cell) + f"; {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 10. orthonormal-vs-monomial basis ablation (5 seeds)


def test_criterion_10_s4_basis_ablation(s4_results):
    records, elapsed = s4_results
    pieces = []
    ok = elapsed <= 2700.0
    for n in (10, 35):
        for sigma in (0.0, 0.01):
            ortho = med(records, "mse_ex_ood", basis_variant="orthonormal",
                        n_train=n, sigma=sigma)
            mono = med(records, "mse_ex_ood", basis_variant="monomial",
                       n_train=n, sigma=sigma)
            good = ortho <= mono
            ok = ok and good
            pieces.append(f"N={n},sigma={sigma:g}: {ortho:.2e} vs {mono:.2e} "
                          f"{'ok' if good else 'VIOLATED'}")
    ortho_cond = med(records, "gram_cond", basis_variant="orthonormal",
                     n_train=35, sigma=0.0)
    mono_cond = med(records, "gram_cond", basis_variant="monomial",
                    n_train=35, sigma=0.0)
    cond_ok = ortho_cond <= mono_cond / 100.0
    ok = ok and cond_ok
    verdict(10, ok,
            "median ex-ood ortho vs mono " + "; ".join(pieces)
            + f"; Gram cond {ortho_cond:.2e} vs {mono_cond:.2e} "
            f"(need <=1/100: {'ok' if cond_ok else 'VIOLATED'}); "
            f"{elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 11. bitwise determinism


def test_criterion_11_determinism():
    started = time.perf_counter()
    config = PipelineConfig(
        rhs_kind="chaos", n_max=2, h_max=0.05, segment_target=2,
        pso=PsoConfig(swarm=8, iters=8),
        cmaes=CmaesConfig(sigma0=0.5, popsize=8, max_evals=300),
        qn=QuasiNewtonConfig(max_iters=25, ftol=1e-12), seed=11)
    data = generate_data(12, 0.01, 3)
    first = train(data, config).to_json(include_timing=False)
    second = train(data, config).to_json(include_timing=False)
    model_ok = first.encode() == second.encode()

    settings = default_settings(
        "S2", methods=("chaos",), n_grid=(10,), sigma_grid=(0.01,),
        seeds=(2,), eval_h_max=0.05, pipeline=config)
    cell = scenario_cells(settings)[0]

    def record_bytes(record):
        payload = record.to_dict()
        payload.pop("wall_time_s")  # timing measures the host, not the run
        return json.dumps(payload, sort_keys=True).encode()

    record_ok = (record_bytes(run_cell(settings, cell))
                 == record_bytes(run_cell(settings, cell)))
    elapsed = time.perf_counter() - started
    verdict(11, model_ok and record_ok,
            f"repeat training byte-identical: model={model_ok}, "
            f"record={record_ok} (timing fields excluded); {elapsed:.1f}s")
