"""Small tanh multilayer perceptron as a learnable right-hand side.

Parameters live in one flat vector, laid out layer by layer as the weight
matrix in row-major order followed by that layer's biases.  Evaluation is
generic over plain arrays, parameter batches (one row per candidate), and
duals carrying tangents in either the state or the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .duals import Dual, tanh as dtanh


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 3:
            raise ValueError("need at least one hidden layer")
        if self.widths[0] != self.widths[-1]:
            raise ValueError("input and output widths must both equal the state dimension")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")


def mlp_param_count(spec: MlpSpec) -> int:
    return sum(i * o + o for i, o in zip(spec.widths[:-1], spec.widths[1:]))


def mlp_init(spec: MlpSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic under seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_out * fan_in))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _slice_layers(spec: MlpSpec, params):
    """Split a flat parameter vector into [(W, b), ...] views."""
    layers = []
    off = 0
    per_row = (not isinstance(params, Dual)) and params.ndim == 2
    for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
        nw = fan_out * fan_in
        if per_row:
            w = params[:, off : off + nw].reshape(-1, fan_out, fan_in)
            b = params[:, off + nw : off + nw + fan_out]
        else:
            w = params[off : off + nw].reshape((fan_out, fan_in))
            b = params[off + nw : off + nw + fan_out]
        layers.append((w, b))
        off += nw + fan_out
    return layers


def _affine(x, w, b, per_row):
    """x @ W.T + b with dual support on either side."""
    if per_row:
        return np.einsum("bi,boi->bo", x, w) + b
    xd = isinstance(x, Dual)
    wd = isinstance(w, Dual)
    if not xd and not wd:
        return x @ w.T + b
    if xd and not wd:
        return Dual(x.val @ w.T + b, x.tan @ w.T)
    if not xd and wd:
        val = x @ w.val.T + b.val
        tan = np.einsum("qoi,bi->qbo", w.tan, x) + b.tan[:, None, :]
        return Dual(val, tan)
    val = x.val @ w.val.T + b.val
    tan = x.tan @ w.val.T + np.einsum("qoi,bi->qbo", w.tan, x.val) + b.tan[:, None, :]
    return Dual(val, tan)


class NeuralRhs:
    """RHS given by an affine-tanh chain with identity output layer."""

    kind = "neural"

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self.n = spec.widths[0]

    @property
    def n_params(self):
        return mlp_param_count(self.spec)

    def bind(self, params):
        if not isinstance(params, Dual):
            params = np.asarray(params, dtype=float)
        layers = _slice_layers(self.spec, params)
        per_row = (not isinstance(params, Dual)) and params.ndim == 2

        def f(x):
            single = (x.ndim == 1)
            a = x.reshape((1, -1)) if single else x
            last = len(layers) - 1
            for i, (w, b) in enumerate(layers):
                a = _affine(a, w, b, per_row)
                if i < last:
                    a = dtanh(a)
            return a[0] if single else a

        return f

    def __call__(self, params, x):
        if not isinstance(x, Dual):
            x = np.asarray(x, dtype=float)
        return self.bind(params)(x)

    def to_dict(self, params=None):
        d = {"kind": self.kind, "widths": list(self.spec.widths), "activation": self.spec.activation}
        if params is not None:
            d["params"] = [float(v) for v in np.asarray(params, dtype=float).ravel()]
        return d

    @staticmethod
    def from_dict(payload):
        return NeuralRhs(MlpSpec(widths=tuple(payload["widths"]), activation=payload.get("activation", "tanh")))


def mlp_eval(spec: MlpSpec, params, x):
    """Functional form of the forward pass (spec-level convenience)."""
    return NeuralRhs(spec)(params, x)


def fit_regression(spec: MlpSpec, params0, x, y, steps: int = 500, lr: float = 1e-2):
    """Plain full-batch gradient descent on mean squared error.

    Used only to warm-start training from surrogate derivative targets, so
    simplicity and determinism beat convergence finesse here.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    params = np.asarray(params0, dtype=float).copy()
    n_entries = y.size
    for _ in range(steps):
        layers = _slice_layers(spec, params)
        acts = [x]
        a = x
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            z = a @ w.T + b
            a = np.tanh(z) if i < last else z
            acts.append(a)
        delta = 2.0 * (a - y) / n_entries
        grads = []
        for i in range(last, -1, -1):
            w, _ = layers[i]
            gw = delta.T @ acts[i]
            gb = delta.sum(axis=0)
            grads.append((gw, gb))
            if i > 0:
                delta = (delta @ w) * (1.0 - acts[i] ** 2)
        grads.reverse()
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
        params -= lr * flat
    return params
