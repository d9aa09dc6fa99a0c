"""Derivative-free and quasi-Newton minimizers used by the training stages.

All three are deterministic under their seeds, track the best point ever
evaluated (so a stage can never report worse than its start), and treat
penalty-valued candidates as ordinary finite losses that simply never win.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


class StalledAtInfeasible(RuntimeError):
    """Quasi-Newton could not take any feasible step from its start point."""


@dataclass
class OptimizerReport:
    best_params: np.ndarray
    best_loss: float
    iterations: int
    evals: int
    converged: bool
    wall_time: float

    def __post_init__(self):
        if not np.isfinite(self.best_loss):
            raise ValueError("best_loss must be finite")
        if self.evals < self.iterations:
            raise ValueError("evals cannot be smaller than iterations")


# --------------------------------------------------------------------------
# Particle swarm


@dataclass
class PsoConfig:
    swarm: int = 40
    iters: int = 300
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    init_center: np.ndarray | None = None
    init_spread: float | None = None
    seed: int = 0


def pso_minimize(objective, dim: int, config: PsoConfig, objective_batch=None) -> OptimizerReport:
    """Global-best PSO with velocity clamping at the init spread.

    Particle 0 starts exactly at the init center, so the report can never
    be worse than the incoming point.
    """
    t0 = time.perf_counter()
    cfg = config
    if cfg.swarm < 2:
        raise ValueError("swarm must be at least 2")
    center = np.zeros(dim) if cfg.init_center is None else np.asarray(cfg.init_center, dtype=float)
    spread = cfg.init_spread
    if spread is None:
        spread = 0.5 * float(np.linalg.norm(center)) + 0.1
    rng = np.random.default_rng(cfg.seed)

    if objective_batch is None:
        def objective_batch(block):
            return np.array([objective(row) for row in block])

    pos = center + rng.uniform(-spread, spread, size=(cfg.swarm, dim))
    pos[0] = center
    vel = np.zeros((cfg.swarm, dim))
    vmax = spread

    fit = np.asarray(objective_batch(pos), dtype=float)
    evals = cfg.swarm
    pbest = pos.copy()
    pbest_fit = fit.copy()
    g = int(np.argmin(pbest_fit))
    gbest = pbest[g].copy()
    gbest_fit = float(pbest_fit[g])

    for _ in range(cfg.iters):
        r1 = rng.uniform(size=(cfg.swarm, dim))
        r2 = rng.uniform(size=(cfg.swarm, dim))
        vel = cfg.inertia * vel + cfg.c1 * r1 * (pbest - pos) + cfg.c2 * r2 * (gbest - pos)
        np.clip(vel, -vmax, vmax, out=vel)
        pos = pos + vel
        fit = np.asarray(objective_batch(pos), dtype=float)
        evals += cfg.swarm
        improved = fit < pbest_fit
        pbest[improved] = pos[improved]
        pbest_fit[improved] = fit[improved]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit:
            gbest_fit = float(pbest_fit[g])
            gbest = pbest[g].copy()

    return OptimizerReport(
        best_params=gbest, best_loss=gbest_fit, iterations=cfg.iters,
        evals=evals, converged=True, wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# CMA-ES


@dataclass
class CmaesConfig:
    x0: np.ndarray | None = None
    sigma0: float = 0.3
    popsize: int | None = None
    max_evals: int = 20000
    max_iters: int | None = None
    seed: int = 0
    ftol: float = 1e-14


def cmaes_minimize(objective, dim: int, config: CmaesConfig, objective_batch=None) -> OptimizerReport:
    """(mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates
    and cumulative step-size adaptation.

    Penalty-valued samples sort worst through their plain loss values; the
    eigendecomposition is refreshed lazily for large dimensions.
    """
    t0 = time.perf_counter()
    cfg = config
    if not cfg.sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    n = dim
    xmean = np.zeros(n) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).copy()
    sigma = float(cfg.sigma0)
    rng = np.random.default_rng(cfg.seed)

    if objective_batch is None:
        def objective_batch(block):
            return np.array([objective(row) for row in block])

    lam = cfg.popsize if cfg.popsize else 4 + int(3 * np.log(n))
    lam = max(lam, 4)
    mu = lam // 2
    w = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / np.sum(w**2)

    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2.0 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = np.sqrt(n) * (1 - 1.0 / (4 * n) + 1.0 / (21 * n**2))

    pc = np.zeros(n)
    ps = np.zeros(n)
    cov = np.eye(n)
    eig_b = np.eye(n)
    eig_d = np.ones(n)
    evals_since_eig = 0
    # matrix decompositions are only worth refreshing every so many evals
    lazy_gap = 0.5 * lam / ((c1 + cmu) * n) if n > 64 else 0.0

    best_x = xmean.copy()
    best_f = float(objective(xmean))
    evals = 1
    iters = 0
    converged = False

    max_evals = cfg.max_evals if cfg.max_evals else np.inf
    max_iters = cfg.max_iters if cfg.max_iters else np.inf

    while evals + lam <= max_evals and iters < max_iters:
        if evals_since_eig <= 0:
            cov = (cov + cov.T) / 2.0
            dd, eig_b = np.linalg.eigh(cov)
            eig_d = np.sqrt(np.maximum(dd, 1e-30))
            evals_since_eig = lazy_gap
        z = rng.standard_normal((lam, n))
        y = (z * eig_d) @ eig_b.T
        xs = xmean + sigma * y
        fs = np.asarray(objective_batch(xs), dtype=float)
        evals += lam
        evals_since_eig -= lam
        iters += 1

        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < best_f:
            best_f = float(fs[order[0]])
            best_x = xs[order[0]].copy()

        sel = order[:mu]
        y_w = w @ y[sel]
        xmean = xmean + sigma * y_w

        # whitened mean step for step-size control
        c_inv_y = eig_b @ ((eig_b.T @ y_w) / eig_d)
        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * c_inv_y
        ps_norm = float(np.linalg.norm(ps))
        hsig = ps_norm / np.sqrt(1 - (1 - cs) ** (2 * iters)) / chi_n < 1.4 + 2 / (n + 1)
        pc = (1 - cc) * pc + (np.sqrt(cc * (2 - cc) * mueff) * y_w if hsig else 0.0)

        rank1 = np.outer(pc, pc)
        rankmu = (y[sel] * w[:, None]).T @ y[sel]
        delta_hsig = (1 - int(hsig)) * cc * (2 - cc)
        cov = (1 - c1 - cmu) * cov + c1 * (rank1 + delta_hsig * cov) + cmu * rankmu
        sigma = sigma * float(np.exp((cs / damps) * (ps_norm / chi_n - 1)))

        spread = float(fs[order[-1]] - fs[order[0]])
        if spread <= cfg.ftol * max(1.0, abs(float(fs[order[0]]))) or sigma <= 1e-16:
            converged = True
            break

    return OptimizerReport(
        best_params=best_x, best_loss=best_f, iterations=iters,
        evals=evals, converged=converged, wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------------
# Quasi-Newton (BFGS / L-BFGS) with a strong-Wolfe line search


@dataclass
class QuasiNewtonConfig:
    max_iters: int = 500
    grad_tol: float = 1e-10
    c1: float = 1e-4
    c2: float = 0.9
    max_line_iters: int = 30
    lbfgs_threshold: int = 500
    memory: int = 10
    # Optional early stop on relative function decrease (0 disables): quit
    # after `ftol_iters` consecutive iterations with
    # |f_prev - f| <= ftol * max(1, |f|).
    ftol: float = 0.0
    ftol_iters: int = 3


def quasi_newton_minimize(objective, gradient_fn, x0, config: QuasiNewtonConfig,
                          value_and_grad=None) -> OptimizerReport:
    """BFGS (L-BFGS above `lbfgs_threshold` dims) with strong-Wolfe steps.

    `objective` must return +inf (or a huge penalty) at divergent points;
    `gradient_fn` may raise there, and is only ever called at points whose
    objective came back finite.  If the very first point admits no feasible
    descent step, StalledAtInfeasible is raised.
    """
    t0 = time.perf_counter()
    cfg = config
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    use_lbfgs = n > cfg.lbfgs_threshold
    counts = {"f": 0, "g": 0}

    if value_and_grad is None:
        def value_and_grad(p):
            return objective(p), gradient_fn(p)

    def f_only(p):
        counts["f"] += 1
        v = objective(p)
        return float(v) if np.isfinite(v) else np.inf

    def f_and_g(p):
        """(value, gradient); (inf, None) when the solve diverges there."""
        counts["f"] += 1
        counts["g"] += 1
        try:
            v, g = value_and_grad(p)
        except (RuntimeError, FloatingPointError):
            return np.inf, None
        return float(v), np.asarray(g, dtype=float)

    f0 = f_only(x)
    if not np.isfinite(f0):
        raise StalledAtInfeasible("objective is infeasible at the start point")
    fx, gx = f_and_g(x)
    if gx is None:
        raise StalledAtInfeasible("gradient unavailable at the start point")

    best_x = x.copy()
    best_f = fx
    hist_s, hist_y = [], []
    h_inv = np.eye(n) if not use_lbfgs else None
    gamma = 1.0
    converged = bool(np.max(np.abs(gx)) < cfg.grad_tol)
    iters = 0

    def direction(g):
        if not use_lbfgs:
            return -(h_inv @ g)
        q = g.copy()
        alphas = []
        for s, yv in reversed(list(zip(hist_s, hist_y))):
            rho = 1.0 / (yv @ s)
            a = rho * (s @ q)
            alphas.append((a, rho, s, yv))
            q -= a * yv
        q *= gamma
        for a, rho, s, yv in reversed(alphas):
            b = rho * (yv @ q)
            q += (a - b) * s
        return -q

    def wolfe_search(xk, fk, gk, d):
        """Strong-Wolfe line search (bracket + zoom); infeasible trials are +inf."""
        d_phi0 = float(gk @ d)
        phi0 = fk
        a_prev, phi_prev = 0.0, phi0
        a = 1.0
        a_max = 1e10
        result = None
        for _ in range(cfg.max_line_iters):
            phi_a = f_only(xk + a * d)
            if phi_a > phi0 + cfg.c1 * a * d_phi0 or (phi_prev < phi_a and a_prev > 0.0) or not np.isfinite(phi_a):
                result = _zoom(a_prev, phi_prev, a, xk, d, phi0, d_phi0)
                break
            fa, ga = f_and_g(xk + a * d)
            if ga is None:
                result = _zoom(a_prev, phi_prev, a, xk, d, phi0, d_phi0)
                break
            d_phi_a = float(ga @ d)
            if abs(d_phi_a) <= -cfg.c2 * d_phi0:
                result = (a, fa, ga)
                break
            if d_phi_a >= 0:
                result = _zoom(a, fa, a_prev, xk, d, phi0, d_phi0)
                break
            a_prev, phi_prev = a, phi_a
            a = min(2.0 * a, a_max)
        return result

    def _zoom(a_lo, phi_lo, a_hi, xk, d, phi0, d_phi0):
        for _ in range(cfg.max_line_iters):
            a = 0.5 * (a_lo + a_hi)
            phi_a = f_only(xk + a * d)
            if phi_a > phi0 + cfg.c1 * a * d_phi0 or phi_a >= phi_lo or not np.isfinite(phi_a):
                a_hi = a
            else:
                fa, ga = f_and_g(xk + a * d)
                if ga is None:
                    a_hi = a
                    continue
                d_phi_a = float(ga @ d)
                if abs(d_phi_a) <= -cfg.c2 * d_phi0:
                    return (a, fa, ga)
                if d_phi_a * (a_hi - a_lo) >= 0:
                    a_hi = a_lo
                a_lo, phi_lo = a, phi_a
            if abs(a_hi - a_lo) < 1e-16:
                break
        if phi_lo < phi0 and a_lo > 0.0:  # settle for sufficient decrease
            fa, ga = f_and_g(xk + a_lo * d)
            if ga is None:
                return None
            return (a_lo, fa, ga)
        return None

    flat_run = 0
    while not converged and iters < cfg.max_iters:
        d = direction(gx)
        if not np.isfinite(d).all() or float(gx @ d) >= 0.0:
            # reset a corrupted metric and retry with steepest descent
            hist_s.clear()
            hist_y.clear()
            if not use_lbfgs:
                h_inv = np.eye(n)
            gamma = 1.0
            d = -gx
        hit = wolfe_search(x, fx, gx, d)
        if hit is None:
            if iters == 0 and best_f >= f0:
                raise StalledAtInfeasible("no feasible step from the start point")
            break
        a, f_new, g_new = hit
        s = a * d
        yv = g_new - gx
        if cfg.ftol > 0.0:
            flat_run = flat_run + 1 if abs(fx - f_new) <= cfg.ftol * max(1.0, abs(f_new)) else 0
        x = x + s
        fx, gx = f_new, g_new
        iters += 1
        if fx < best_f:
            best_f = fx
            best_x = x.copy()
        sy = float(s @ yv)
        if sy > 1e-14 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            if use_lbfgs:
                hist_s.append(s)
                hist_y.append(yv)
                if len(hist_s) > cfg.memory:
                    hist_s.pop(0)
                    hist_y.pop(0)
                gamma = sy / float(yv @ yv)
            else:
                rho = 1.0 / sy
                v = np.eye(n) - rho * np.outer(s, yv)
                h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)
        if np.max(np.abs(gx)) < cfg.grad_tol:
            converged = True
        elif cfg.ftol > 0.0 and flat_run >= cfg.ftol_iters:
            converged = True

    return OptimizerReport(
        best_params=best_x, best_loss=best_f, iterations=iters,
        evals=counts["f"] + counts["g"], converged=converged,
        wall_time=time.perf_counter() - t0,
    )
