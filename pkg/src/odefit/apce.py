"""Data-driven orthonormal polynomial bases (arbitrary polynomial chaos).

Each state dimension gets its own family of univariate polynomials,
orthonormal with respect to that coordinate's empirical distribution.  The
degree-d member comes from a (d+1) x (d+1) moment (Hankel) system: rows
k = 0..d-1 enforce orthogonality to x^k, the last row pins the leading
coefficient to 1, and the solution is then rescaled to unit empirical norm.
Multivariate basis functions are tensor products over a total-degree
multi-index set, so they are orthonormal for the product of the
per-dimension marginals.

Numerics: the moment system is solved on the rescaled variable u = x/s
(s = max(1, max |sample|)) and the coefficients mapped back, which keeps
the Hankel matrix well conditioned for state values far from unit scale.
The resulting polynomial is mathematically the same one the raw-variable
system defines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from .duals import Dual, value


class SingularMoments(ValueError):
    """Moment system is unsolvable (degenerate sample or bad table)."""


@dataclass
class MomentTable:
    """Raw moments mu_0..mu_K of one scalar sample.

    `scale` records the rescaling used when solving moment systems; tables
    built from exact analytic moments keep scale = 1.
    """

    moments: np.ndarray
    sample_size: int
    scale: float = 1.0

    def __post_init__(self):
        self.moments = np.asarray(self.moments, dtype=float)
        if self.moments.ndim != 1 or self.moments.size == 0:
            raise SingularMoments("moments must be a non-empty vector")
        if not np.isfinite(self.moments).all():
            raise SingularMoments("moments must be finite")

    @property
    def max_order(self):
        return self.moments.size - 1


@dataclass
class UnivariatePoly:
    """Polynomial sum_i coeffs[i] * x**i (coefficients after normalization)."""

    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.size != self.degree + 1:
            raise ValueError("coeffs must have length degree + 1")

    def __call__(self, x):
        y = np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)
        return y


def empirical_moments(sample, max_moment: int) -> MomentTable:
    """Raw empirical moments mu_k = (1/N) sum_j x_j^k for k = 0..max_moment."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise SingularMoments("empty sample")
    if max_moment < 0:
        raise SingularMoments("max_moment must be non-negative")
    pw = np.ones((x.size, max_moment + 1))
    for k in range(1, max_moment + 1):
        pw[:, k] = pw[:, k - 1] * x
    mu = pw.mean(axis=0)
    if not np.isfinite(mu).all():
        raise SingularMoments("sample moments overflowed")
    return MomentTable(moments=mu, sample_size=x.size, scale=max(1.0, float(np.abs(x).max())))


def apce_univariate(moments: MomentTable, degree: int) -> UnivariatePoly:
    """Orthonormal polynomial of the given degree for the moment table.

    Needs moments through order 2*degree (orthogonality rows use 2d-1, the
    closing norm uses 2d).
    """
    d = int(degree)
    if d < 0:
        raise SingularMoments("degree must be non-negative")
    if d == 0:
        return UnivariatePoly(degree=0, coeffs=np.array([1.0]))
    if moments.max_order < 2 * d:
        raise SingularMoments(
            f"degree {d} needs moments through order {2 * d}, table has {moments.max_order}"
        )
    s = moments.scale if moments.scale > 0 else 1.0
    mu_u = moments.moments[: 2 * d + 1] / s ** np.arange(2 * d + 1)

    a = np.zeros((d + 1, d + 1))
    b = np.zeros(d + 1)
    for k in range(d):
        a[k] = mu_u[k : k + d + 1]
    a[d, d] = 1.0
    b[d] = 1.0
    try:
        cu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularMoments(f"moment system singular at degree {d}") from exc
    if not np.isfinite(cu).all():
        raise SingularMoments(f"moment system produced non-finite coefficients at degree {d}")

    # ||Phi_d||^2 = sum_{i,j} c_i c_j mu_{i+j}, evaluated in the scaled variable.
    norm2 = float(cu @ np.array([[mu_u[i + j] for j in range(d + 1)] for i in range(d + 1)]) @ cu)
    if not np.isfinite(norm2) or norm2 <= 0.0:
        raise SingularMoments(f"degenerate norm at degree {d}")
    coeffs = cu / (np.sqrt(norm2) * s ** np.arange(d + 1))
    return UnivariatePoly(degree=d, coeffs=coeffs)


def multi_indices(n: int, n_max: int):
    """All alpha with |alpha| <= n_max, graded and lex-descending in a grade."""
    out = []
    for total in range(n_max + 1):
        grade = []
        # compositions of `total` into n parts
        for cuts in combinations_with_replacement(range(n), total):
            alpha = [0] * n
            for c in cuts:
                alpha[c] += 1
            grade.append(tuple(alpha))
        grade.sort(reverse=True)
        out.extend(grade)
    return out


@dataclass
class ApceBasis:
    """Tensor-product polynomial basis over a total-degree index set.

    `coeff_mats[i]` is a (N_max+1, N_max+1) matrix whose row d holds the
    degree-d member of dimension i in ascending powers; `variant` is
    "orthonormal" (moment-built) or "monomial" (raw powers).
    """

    n: int
    n_max: int
    alphas: np.ndarray
    coeff_mats: list
    variant: str = "orthonormal"
    build_sample: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self):
        return self.alphas.shape[0]

    def eval_many(self, x):
        """Basis values at a batch of states; x is (B, n), plain or dual."""
        fams = []
        for i in range(self.n):
            pw = _power_stack(x[:, i], self.n_max)
            if isinstance(pw, Dual):
                fams.append(Dual(pw.val @ self.coeff_mats[i].T, pw.tan @ self.coeff_mats[i].T))
            else:
                fams.append(pw @ self.coeff_mats[i].T)
        cols = self.alphas[:, 0]
        phi = fams[0][:, cols]
        for i in range(1, self.n):
            phi = phi * fams[i][:, self.alphas[:, i]]
        return phi

    def eval(self, x):
        """Basis values at a single state, shape (M,)."""
        if isinstance(x, Dual):
            return self.eval_many(x.reshape((1, -1)))[0]
        return self.eval_many(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def to_dict(self):
        return {
            "n": int(self.n),
            "n_max": int(self.n_max),
            "multi_indices": [list(map(int, a)) for a in self.alphas],
            "per_dim_coeffs": [
                [[float(c) for c in mat[d, : d + 1]] for d in range(self.n_max + 1)]
                for mat in self.coeff_mats
            ],
            "variant": self.variant,
        }

    @staticmethod
    def from_dict(payload):
        n = int(payload["n"])
        n_max = int(payload["n_max"])
        alphas = np.asarray(payload["multi_indices"], dtype=int)
        mats = []
        for dim_coeffs in payload["per_dim_coeffs"]:
            mat = np.zeros((n_max + 1, n_max + 1))
            for d, row in enumerate(dim_coeffs):
                mat[d, : len(row)] = row
            mats.append(mat)
        return ApceBasis(
            n=n, n_max=n_max, alphas=alphas, coeff_mats=mats,
            variant=payload.get("variant", "orthonormal"),
        )


def _power_stack(xi, dmax):
    """Columns (x^0, x^1, ..., x^dmax) for a (B,) coordinate, plain or dual."""
    if isinstance(xi, Dual):
        vals = [np.ones_like(xi.val)]
        tans = [np.zeros_like(xi.tan)]
        cur = xi
        for _ in range(dmax):
            vals.append(cur.val)
            tans.append(cur.tan)
            cur = cur * xi
        return Dual(np.stack(vals, axis=-1), np.stack(tans, axis=-1))
    xi = np.asarray(xi, dtype=float)
    pw = np.ones(xi.shape + (dmax + 1,))
    for k in range(1, dmax + 1):
        pw[..., k] = pw[..., k - 1] * xi
    return pw


def build_basis(states, n_max: int) -> ApceBasis:
    """Orthonormal basis adapted to the empirical distribution of `states`."""
    x = np.asarray(states, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise SingularMoments("states must be a non-empty (N, n) matrix")
    if not np.isfinite(x).all():
        raise SingularMoments("states must be finite")
    n = x.shape[1]
    if n_max < 0:
        raise SingularMoments("N_max must be non-negative")
    mats = []
    for i in range(n):
        col = x[:, i]
        if np.unique(col).size < n_max + 1:
            raise SingularMoments(f"dimension {i}: fewer than N_max+1 distinct values")
        table = empirical_moments(col, 2 * n_max)
        mat = np.zeros((n_max + 1, n_max + 1))
        for d in range(n_max + 1):
            poly = apce_univariate(table, d)
            mat[d, : d + 1] = poly.coeffs
        mats.append(mat)
    alphas = np.asarray(multi_indices(n, n_max), dtype=int)
    return ApceBasis(n=n, n_max=n_max, alphas=alphas, coeff_mats=mats, build_sample=x)


def monomial_basis(n: int, n_max: int, build_sample=None) -> ApceBasis:
    """Raw-monomial variant over the same index set (no orthonormalization)."""
    mats = [np.eye(n_max + 1) for _ in range(n)]
    alphas = np.asarray(multi_indices(n, n_max), dtype=int)
    sample = None if build_sample is None else np.asarray(build_sample, dtype=float)
    return ApceBasis(n=n, n_max=n_max, alphas=alphas, coeff_mats=mats,
                     variant="monomial", build_sample=sample)


def gram(basis: ApceBasis, sample) -> np.ndarray:
    """Gram matrix of the basis under the product of per-dimension marginals.

    G[p, q] = prod_i (1/N) sum_j Phi_{alpha_p_i}(x_j_i) Phi_{alpha_q_i}(x_j_i),
    the inner product the tensor construction orthonormalizes against.
    """
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2 or x.shape[1] != basis.n:
        raise SingularMoments("sample must be (N, n) matching the basis")
    g = np.ones((basis.size, basis.size))
    for i in range(basis.n):
        pw = _power_stack(x[:, i], basis.n_max)
        vals = pw @ basis.coeff_mats[i].T
        gi = vals.T @ vals / x.shape[0]
        idx = basis.alphas[:, i]
        g = g * gi[np.ix_(idx, idx)]
    return g


def basis_size(n: int, n_max: int) -> int:
    return comb(n + n_max, n)


class ChaosRhs:
    """Right-hand side f_i(x) = sum_a theta[i, a] * Phi_a(x).

    Parameters are the n x M coefficient matrix flattened row-major (all of
    output dimension 0 first).  Evaluation accepts a single state (n,), a
    batch (B, n), dual states, dual parameters, or per-row parameter
    batches (B, n*M) for population sweeps.
    """

    kind = "chaos"

    def __init__(self, basis: ApceBasis):
        self.basis = basis
        self.n = basis.n
        self.m = basis.size

    @property
    def n_params(self):
        return self.n * self.m

    def bind(self, params):
        if isinstance(params, Dual):
            theta = params.reshape((self.n, self.m))

            def f_dual_theta(x):
                single = (x.ndim == 1)
                xb = x.reshape((1, -1)) if single else x
                phi = self.basis.eval_many(xb)
                if isinstance(phi, Dual):
                    val = phi.val @ theta.val.T
                    tan = phi.tan @ theta.val.T + np.einsum("qnm,bm->qbn", theta.tan, phi.val)
                else:
                    val = phi @ theta.val.T
                    tan = np.einsum("qnm,bm->qbn", theta.tan, phi)
                out = Dual(val, tan)
                return out[0] if single else out

            return f_dual_theta

        params = np.asarray(params, dtype=float)
        if params.ndim == 2:  # one parameter row per batch row
            theta_rows = params.reshape(-1, self.n, self.m)

            def f_rows(x):
                phi = self.basis.eval_many(x)
                if isinstance(phi, Dual):
                    raise TypeError("per-row parameters require plain states")
                return np.einsum("bm,bnm->bn", phi, theta_rows)

            return f_rows

        theta = params.reshape(self.n, self.m)

        def f_plain(x):
            single = (x.ndim == 1)
            xb = x.reshape((1, -1)) if single else x
            phi = self.basis.eval_many(xb)
            if isinstance(phi, Dual):
                out = Dual(phi.val @ theta.T, phi.tan @ theta.T)
            else:
                out = phi @ theta.T
            return out[0] if single else out

        return f_plain

    def __call__(self, params, x):
        if not isinstance(x, Dual):
            x = np.asarray(x, dtype=float)
        return self.bind(params)(x)

    def to_dict(self):
        d = self.basis.to_dict()
        d["kind"] = self.kind
        return d

    @staticmethod
    def from_dict(payload):
        return ChaosRhs(ApceBasis.from_dict(payload))
