"""Gaussian-RBF kernel machinery: collocation RHS and a time-regression surrogate.

The state-space RHS is a kernel expansion over fixed pilot points whose
trainable parameters are the field values at those points; coefficients
come from one ridge-regularized linear solve against a factorization that
is computed once per pilot set.  The same kernel, applied over observation
times, gives a smooth surrogate of each state coordinate whose analytic
derivative seeds the training pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .duals import Dual, exp as dexp


class FactorizationFailed(ValueError):
    """(K + lambda I) could not be factorized (coincident points or tiny lambda)."""


@dataclass
class KernelSpec:
    kind: str = "gaussian_rbf"
    lengthscale: float = 1.0
    lam: float = 1e-8

    def __post_init__(self):
        if self.kind != "gaussian_rbf":
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if self.lam < 0:
            raise ValueError("regularization must be non-negative")

    def to_dict(self):
        return {"kind": self.kind, "lengthscale": float(self.lengthscale), "lam": float(self.lam)}


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """k(a, b) = exp(-||a - b||^2 / (2 l^2))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("kernel arguments must have equal dimension")
    d2 = float(np.sum((a - b) ** 2))
    return float(np.exp(-d2 / (2.0 * spec.lengthscale**2)))


def median_lengthscale(points) -> float:
    """Median pairwise distance; the usual deterministic bandwidth heuristic."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise FactorizationFailed("need at least 2 points for the median heuristic")
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(x.shape[0], k=1)
    med = float(np.median(np.sqrt(d2[iu])))
    if not med > 0:
        raise FactorizationFailed("degenerate point set: median pairwise distance is zero")
    return med


def spacing_lengthscale(times, factor: float = 4.0) -> float:
    """Bandwidth for smoothing a time series: a few observation gaps wide.

    The all-pairs median scales with the window, not the resolution, and
    oversmooths any signal with more than one oscillation per window; the
    median *consecutive* gap tracks what the samples can actually resolve.
    """
    t = np.sort(np.asarray(times, dtype=float).ravel())
    if t.size < 2:
        raise FactorizationFailed("need at least 2 points for a spacing bandwidth")
    med = float(np.median(np.diff(t)))
    if not med > 0:
        raise FactorizationFailed("degenerate time grid: median spacing is zero")
    return factor * med


def _gram(spec: KernelSpec, points) -> np.ndarray:
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * spec.lengthscale**2))


def pilot_grid(states, per_dim: int = 5, inflate: float = 0.1) -> np.ndarray:
    """Uniform grid over the bounding box of `states`, inflated per side.

    Rows are ordered by row-major grid index so pilot layout (and with it
    the parameter layout) is reproducible.
    """
    x = np.asarray(states, dtype=float)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    width = hi - lo
    pad = np.where(width > 0, inflate * width, inflate * np.maximum(1.0, np.abs(hi)))
    axes = [np.linspace(lo[i] - pad[i], hi[i] + pad[i], per_dim) for i in range(x.shape[1])]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass
class CollocationSet:
    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValueError("pilot points must form a (P, n) matrix")
        d2 = np.sum((self.points[:, None, :] - self.points[None, :, :]) ** 2, axis=-1)
        iu = np.triu_indices(self.points.shape[0], k=1)
        if iu[0].size and float(d2[iu].min()) <= 0.0:
            raise ValueError("pilot points must be pairwise distinct")


class KernelRhs:
    """RHS f_d(x) = sum_i c_i^d k(x, x_i), c = (K + lambda I)^{-1} theta.

    Trainable parameters are the pilot values theta, a (P, n) matrix
    flattened row-major (pilot-major).  The regularized kernel matrix is
    factorized once here and only triangular solves repeat per update.
    """

    kind = "kernel"

    def __init__(self, spec: KernelSpec, colloc: CollocationSet):
        self.spec = spec
        self.colloc = colloc
        self.pilots = colloc.points
        self.p, self.n = self.pilots.shape
        k = _gram(spec, self.pilots) + spec.lam * np.eye(self.p)
        try:
            self._factor = cho_factor(k, lower=True)
        except np.linalg.LinAlgError as exc:
            raise FactorizationFailed("kernel matrix is not positive definite") from exc
        self._inv_two_l2 = 1.0 / (2.0 * spec.lengthscale**2)

    @property
    def n_params(self):
        return self.p * self.n

    def coefficients(self, params):
        """c = (K + lambda I)^{-1} theta, shaped like the (P, n) pilot values."""
        if isinstance(params, Dual):
            theta = params.reshape((self.p, self.n))
            val = cho_solve(self._factor, theta.val)
            q = theta.tan.shape[0]
            tan = cho_solve(self._factor, theta.tan.transpose(1, 0, 2).reshape(self.p, -1))
            return Dual(val, tan.reshape(self.p, q, self.n).transpose(1, 0, 2))
        params = np.asarray(params, dtype=float)
        if params.ndim == 2:  # (B, P*n) rows
            b = params.shape[0]
            theta = params.reshape(b, self.p, self.n).transpose(1, 0, 2).reshape(self.p, -1)
            c = cho_solve(self._factor, theta)
            return c.reshape(self.p, b, self.n).transpose(1, 0, 2)
        return cho_solve(self._factor, params.reshape(self.p, self.n))

    def _kvec(self, x):
        """k(x, pilots) for a batch: (B, P), plain or dual."""
        if isinstance(x, Dual):
            b = x.shape[0]
            sq = None
            for i in range(self.n):
                diff = x[:, i].reshape((b, 1)) - self.pilots[:, i]
                term = diff * diff
                sq = term if sq is None else sq + term
            return dexp(sq * (-self._inv_two_l2))
        d2 = np.sum((x[:, None, :] - self.pilots[None, :, :]) ** 2, axis=-1)
        return np.exp(-d2 * self._inv_two_l2)

    def bind(self, params):
        c = self.coefficients(params)
        per_row = (not isinstance(c, Dual)) and c.ndim == 3

        def f(x):
            single = (x.ndim == 1)
            xb = x.reshape((1, -1)) if single else x
            kv = self._kvec(xb)
            if isinstance(c, Dual) or isinstance(kv, Dual):
                cval = c.val if isinstance(c, Dual) else c
                kval = kv.val if isinstance(kv, Dual) else kv
                val = kval @ cval
                if isinstance(kv, Dual):
                    tan = kv.tan @ cval
                    if isinstance(c, Dual):
                        tan = tan + np.einsum("qpn,bp->qbn", c.tan, kval)
                else:
                    tan = np.einsum("qpn,bp->qbn", c.tan, kval)
                out = Dual(val, tan)
            elif per_row:
                out = np.einsum("bp,bpn->bn", kv, c)
            else:
                out = kv @ c
            return out[0] if single else out

        return f

    def __call__(self, params, x):
        if not isinstance(x, Dual):
            x = np.asarray(x, dtype=float)
        return self.bind(params)(x)

    def to_dict(self, theta=None):
        d = {
            "kind": self.kind,
            "spec": self.spec.to_dict(),
            "pilot_points": [[float(v) for v in row] for row in self.pilots],
        }
        if theta is not None:
            d["theta"] = [float(v) for v in np.asarray(theta, dtype=float).ravel()]
        return d

    @staticmethod
    def from_dict(payload):
        spec = KernelSpec(
            kind=payload["spec"]["kind"],
            lengthscale=payload["spec"]["lengthscale"],
            lam=payload["spec"]["lam"],
        )
        rhs = KernelRhs(spec, CollocationSet(np.asarray(payload["pilot_points"], dtype=float)))
        return rhs


def fit_coefficients(rhs: KernelRhs, pilot_values) -> np.ndarray:
    """Coefficients for explicit (P, n) pilot values (plain-array utility)."""
    theta = np.asarray(pilot_values, dtype=float)
    if theta.shape != (rhs.p, rhs.n):
        raise ValueError("pilot values must be (P, n)")
    return rhs.coefficients(theta.ravel())


class TimeSurrogate:
    """Kernel ridge regression of each state coordinate against time."""

    def __init__(self, spec: KernelSpec, times, coeffs):
        self.spec = spec
        self.times = np.asarray(times, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._inv_l2 = 1.0 / spec.lengthscale**2

    def value(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.exp(-((t[:, None] - self.times[None, :]) ** 2) * (0.5 * self._inv_l2))
        return k @ self.coeffs

    def derivative(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        diff = t[:, None] - self.times[None, :]
        k = np.exp(-(diff**2) * (0.5 * self._inv_l2))
        return (k * (-diff * self._inv_l2)) @ self.coeffs


def fit_time_surrogate(times, values, spec: KernelSpec | None = None) -> TimeSurrogate:
    """Fit the per-dimension time regression; lengthscale defaults to the
    median pairwise gap between observation times, lambda to 1e-6."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if t.size < 2:
        raise FactorizationFailed("time surrogate needs at least 2 observations")
    if spec is None:
        spec = KernelSpec(lengthscale=median_lengthscale(t), lam=1e-6)
    k = np.exp(-((t[:, None] - t[None, :]) ** 2) / (2.0 * spec.lengthscale**2))
    try:
        factor = cho_factor(k + spec.lam * np.eye(t.size), lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailed("time kernel matrix is not positive definite") from exc
    coeffs = cho_solve(factor, y)
    return TimeSurrogate(spec, t, coeffs)
