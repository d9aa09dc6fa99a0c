"""Fixed-step RK4 marching: hand oracles, order, divergence, segments."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from odefit import integrate
from odefit.bench import lv_rhs
from odefit.duals import Dual
from odefit.integrate import (Diverged, Ivp, NonFinite, rk4_step, segment_grid,
                              solve, substeps_for)


def expo_rhs(params, x):
    return params[0] * x


def test_rk4_single_step_hand_value():
    # dx/dt = x, x0 = 1, h = 0.1: the classical tableau gives
    # x1 = 1 + h/6 (k1 + 2 k2 + 2 k3 + k4) with k1=1, k2=1.05, k3=1.0525,
    # k4=1.10525 -- evaluated here independently of the implementation.
    k1 = 1.0
    k2 = 1.0 + 0.05 * k1
    k3 = 1.0 + 0.05 * k2
    k4 = 1.0 + 0.1 * k3
    oracle = 1.0 + 0.1 / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    got = rk4_step(expo_rhs, np.array([1.0]), np.array([1.0]), 0.1)
    assert got[0] == pytest.approx(oracle, rel=1e-15)
    assert got[0] == pytest.approx(1.1051708333333332, rel=1e-15)


def test_rk4_step_matches_truncated_matrix_exponential():
    # For a linear field Ax one RK4 step equals sum_{k<=4} (hA)^k/k! x.
    rng = np.random.default_rng(7)
    a = rng.normal(size=(3, 3))
    x = rng.normal(size=3)
    h = 0.05
    series = np.eye(3)
    term = np.eye(3)
    for k in range(1, 5):
        term = term @ (h * a) / k
        series = series + term
    got = rk4_step(lambda p, s: s @ a.T, None, x, h)
    np.testing.assert_allclose(got, series @ x, rtol=1e-13)


def test_solve_records_output_times_exactly():
    times = np.linspace(0.0, 2.0, 9)
    ivp = Ivp(rhs=expo_rhs, params=np.array([-1.0]), x0=np.array([1.0]), t0=0.0)
    traj = solve(ivp, times, substeps=4)
    np.testing.assert_array_equal(traj.times, times)
    assert traj.states[0, 0] == 1.0  # t0 == times[0] copies x0 verbatim
    np.testing.assert_allclose(traj.states[:, 0], np.exp(-times), rtol=1e-6)


def test_solve_empirical_order_four():
    # Halving h must shrink the endpoint error ~16x on a smooth problem.
    ivp = Ivp(rhs=expo_rhs, params=np.array([1.0]), x0=np.array([1.0]), t0=0.0)
    errs = []
    for sub in (4, 8, 16, 32):
        traj = solve(ivp, np.array([2.0]), substeps=sub)
        errs.append(abs(traj.states[-1, 0] - np.e**2))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(slopes > 3.7) and np.all(slopes < 4.3)


def test_solve_raises_diverged_on_finite_time_blowup():
    ivp = Ivp(rhs=lambda p, x: x * x, params=None,
              x0=np.array([3.0]), t0=0.0)
    with pytest.raises(Diverged):
        solve(ivp, np.array([5.0]), substeps=8)


def test_solve_validates_output_times():
    ivp = Ivp(rhs=expo_rhs, params=np.array([1.0]), x0=np.array([1.0]), t0=0.5)
    with pytest.raises(NonFinite):
        solve(ivp, np.array([0.0, 1.0]), substeps=1)  # precedes t0
    with pytest.raises(NonFinite):
        solve(ivp, np.array([1.0, 1.0]), substeps=1)  # not ascending
    with pytest.raises(NonFinite):
        solve(ivp, np.array([1.0]), substeps=0)


def test_substeps_for_ceiling():
    assert substeps_for(0.049, 0.02) == 3
    assert substeps_for(0.02, 0.02) == 1
    assert substeps_for(0.021, 0.02) == 2
    assert substeps_for(-1.0, 0.02) == 1


def test_lv_trajectory_conserves_first_integral():
    # V = gamma x - delta ln x + beta y - alpha ln y is constant along exact
    # Lotka-Volterra orbits; a fine RK4 solve must hold it to high accuracy.
    alpha, beta, gamma, delta = 1.5, 1.0, 1.0, 3.0
    ivp = Ivp(rhs=lambda p, s: lv_rhs(s), params=None,
              x0=np.array([1.0, 1.0]), t0=0.0)
    traj = solve(ivp, np.linspace(0.01, 7.0, 100), substeps=80)
    x, y = traj.states[:, 0], traj.states[:, 1]
    v = gamma * x - delta * np.log(x) + beta * y - alpha * np.log(y)
    assert np.max(np.abs(v - v[0])) < 1e-8


def test_dual_parameters_propagate_through_rk4_steps():
    # Gradient of the endpoint wrt the decay rate: d/da exp(a t) = t exp(a t).
    # Marching rk4_step with a seeded parameter must reproduce the plain
    # trajectory bitwise in the value part while carrying the sensitivity.
    t_end = 1.5
    a = -0.8
    n_steps = 96
    h = t_end / n_steps

    x_plain = np.array([1.0])
    x_dual = np.array([1.0])
    p_plain = np.array([a])
    p_dual = Dual.seed(np.array([a]))
    for _ in range(n_steps):
        x_plain = rk4_step(expo_rhs, p_plain, x_plain, h)
        x_dual = rk4_step(expo_rhs, p_dual, x_dual, h)

    assert isinstance(x_dual, Dual)
    np.testing.assert_array_equal(x_dual.val, x_plain)
    np.testing.assert_allclose(x_plain[0], np.exp(a * t_end), rtol=1e-9)
    np.testing.assert_allclose(x_dual.tan[0, 0], t_end * np.exp(a * t_end),
                               rtol=1e-6)


def test_segment_grid_pairwise():
    plan = segment_grid(np.linspace(0, 1, 7), 2)
    assert plan.bounds == ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6))


def test_segment_grid_folds_trailing_piece():
    plan = segment_grid(np.linspace(0, 1, 10), 8)
    assert plan.bounds == ((0, 7), (7, 9))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), target=st.integers(2, 12))
def test_segment_grid_covers_and_overlaps(n, target):
    plan = segment_grid(np.linspace(0.0, 1.0, n), target)
    bounds = plan.bounds
    assert bounds[0][0] == 0 and bounds[-1][1] == n - 1
    for (s0, e0), (s1, e1) in zip(bounds, bounds[1:]):
        assert e0 == s1  # shared anchor index
    for s, e in bounds:
        assert e - s >= 1  # every segment spans at least one interval
