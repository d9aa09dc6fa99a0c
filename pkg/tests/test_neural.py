"""Small tanh network RHS: shapes, hand oracle, batching, regression fit."""

import numpy as np
import pytest

from odefit.duals import Dual
from odefit.neural import (MlpSpec, NeuralRhs, fit_regression, mlp_eval,
                           mlp_init, mlp_param_count)


def test_param_count_formula():
    #   (in+1)*h1 + (h1+1)*h2 + ... packed weights-then-bias per layer
    assert mlp_param_count(MlpSpec((2, 16, 2))) == 16 * 2 + 16 + 2 * 16 + 2
    assert mlp_param_count(MlpSpec((2, 32, 32, 2))) == (
        32 * 2 + 32 + 32 * 32 + 32 + 2 * 32 + 2)


def test_widths_validation():
    with pytest.raises(ValueError):
        MlpSpec((2,))
    with pytest.raises(ValueError):
        MlpSpec((2, 0, 2))


def test_hand_computed_single_neuron():
    # widths (1, 1, 1): y = w2 * tanh(w1 * x + b1) + b2
    spec = MlpSpec((1, 1, 1))
    w1, b1, w2, b2 = 0.7, -0.2, 1.3, 0.4
    params = np.array([w1, b1, w2, b2])
    x = np.array([[0.5]])
    want = w2 * np.tanh(w1 * 0.5 + b1) + b2
    got = NeuralRhs(spec)(params, x)
    assert got[0, 0] == pytest.approx(want, rel=1e-14)
    assert mlp_eval(spec, params, x)[0, 0] == pytest.approx(want, rel=1e-14)


def test_init_is_deterministic_and_sized():
    spec = MlpSpec((2, 16, 2))
    p1 = mlp_init(spec, seed=11)
    p2 = mlp_init(spec, seed=11)
    np.testing.assert_array_equal(p1, p2)
    assert p1.shape == (mlp_param_count(spec),)
    assert not np.array_equal(p1, mlp_init(spec, seed=12))


def test_batch_rows_match_scalar_eval():
    # Population eval is lockstep: parameter row b rides state row b, the
    # shape the simultaneous multi-trajectory march needs.
    spec = MlpSpec((2, 8, 2))
    rhs = NeuralRhs(spec)
    rng = np.random.default_rng(0)
    pop = rng.normal(size=(4, rhs.n_params))
    x = rng.normal(size=(4, 2))
    batch = rhs(pop, x)
    assert batch.shape == (4, 2)
    for b in range(4):
        np.testing.assert_allclose(batch[b], rhs(pop[b], x[b]), rtol=1e-9,
                                   atol=1e-12)


def test_dual_params_match_finite_differences():
    spec = MlpSpec((2, 6, 2))
    rhs = NeuralRhs(spec)
    rng = np.random.default_rng(3)
    params = 0.5 * rng.normal(size=rhs.n_params)
    x = np.array([[0.8, -0.3]])
    out = rhs(Dual.seed(params), x)
    h = 1e-6
    for k in rng.choice(rhs.n_params, size=8, replace=False):
        e = np.zeros_like(params)
        e[k] = h
        fd = (rhs(params + e, x) - rhs(params - e, x)) / (2 * h)
        np.testing.assert_allclose(out.tan[k], fd, rtol=2e-5, atol=1e-9)


def test_fit_regression_reduces_field_error():
    spec = MlpSpec((2, 16, 2))
    rng = np.random.default_rng(1)
    x = rng.uniform(-1.0, 1.0, size=(200, 2))
    y = np.stack([np.tanh(x[:, 0] + x[:, 1]), x[:, 0] * x[:, 1]], axis=1)
    p0 = mlp_init(spec, seed=0)
    before = float(np.mean((mlp_eval(spec, p0, x) - y) ** 2))
    p1 = fit_regression(spec, p0, x, y, steps=2000, lr=5e-2)
    after = float(np.mean((mlp_eval(spec, p1, x) - y) ** 2))
    assert after < 0.2 * before
    assert after < 1e-2
