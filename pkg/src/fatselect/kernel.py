"""Rescaled jump kernel, Hamiltonian and mutation variance (one trait dimension).

The jump kernel in log-jump units is

    K(k) = e^k / (e^k - 1)^(1 + 2 alpha),   k > 0,

with a non-integrable ``k^-(1+2 alpha)`` singularity at 0 and an
``e^(-2 alpha k)`` tail. Every integral here is split at ``k_split``:

* on ``(0, k_split]`` the factor ``k^(1-2 alpha)`` is absorbed into
  Gauss-Jacobi weights; what remains (``k^(1+2 alpha) K(k)`` times the
  symmetrised integrand divided by ``k^2``) is analytic;
* on ``[k_split, inf)`` we expand ``(1 - e^-k)^-(1+2 alpha)`` in its binomial
  series and integrate every exponential term exactly, so there is no
  truncation at a finite ``k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import AccuracyError, BuildError, DivergenceError, DomainError

INFINITE = math.inf
"""Value returned by :func:`hamiltonian` for ``|p| >= 2 alpha``."""


def is_infinite(value):
    """True where a Hamiltonian value is the infinite sentinel."""
    return np.isposinf(value)


@dataclass(frozen=True)
class KernelParams:
    """Quadrature settings for integrals against the jump kernel.

    ``k_max`` defaults to the smallest value with ``exp(-2 alpha k_max)/(2 alpha) < tol``.
    ``n_regular`` is the Gauss-Legendre order per unit-length ``k`` panel used
    by the nonlocal operator beyond the computational grid.
    """

    alpha: float
    k_split: float = 1.0
    k_max: float | None = None
    n_singular: int = 32
    n_regular: int = 8
    tol: float = 1e-10

    def __post_init__(self):
        a = self.alpha
        if not 0.0 < a < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {a}")
        if self.tol <= 0:
            raise DomainError("tol must be positive")
        if self.n_singular < 8 or self.n_regular < 8:
            raise DomainError("quadrature node counts must be >= 8")
        if self.k_max is None:
            k_max = math.log(1.0 / (2 * a * self.tol)) / (2 * a)
            object.__setattr__(self, "k_max", float(math.ceil(max(k_max, self.k_split + 1.0))))
        if not 0.0 < self.k_split < self.k_max:
            raise DomainError("need 0 < k_split < k_max")
        tail = math.exp(-2 * a * self.k_max) / (2 * a)
        if tail >= self.tol:
            raise DomainError(f"k_max={self.k_max} leaves tail mass {tail:.2e} >= tol={self.tol:.1e}")


def kernel_density(k, alpha):
    """``e^k / (e^k - 1)^(1+2 alpha)`` for ``k > 0`` (array friendly)."""
    k = np.asarray(k, dtype=float)
    if np.any(~(k > 0)):
        raise DomainError("kernel_density is defined for k > 0 only")
    # written with e^-k to avoid overflow for large k
    out = np.exp(-2 * alpha * k) / (-np.expm1(-k)) ** (1 + 2 * alpha)
    return out if out.ndim else float(out)


def regular_weight(k, alpha):
    """``k^(1+2 alpha) K(k)``: smooth on ``[0, inf)`` with value 1 at 0."""
    k = np.asarray(k, dtype=float)
    ratio = np.where(k > 0, k / np.where(k > 0, -np.expm1(-k), 1.0), 1.0)
    return np.exp(-2 * alpha * k) * ratio ** (1 + 2 * alpha)


@lru_cache(maxsize=64)
def _jacobi_rule(n, beta):
    x, w = roots_jacobi(n, 0.0, beta)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def singular_rule(a, alpha, n):
    """Nodes/weights for ``int_0^a f(k) k^(1-2 alpha) dk``."""
    beta = 1.0 - 2.0 * alpha
    x, w = _jacobi_rule(int(n), beta)
    k = 0.5 * a * (1.0 + x)
    return k, w * (0.5 * a) ** (2.0 - 2.0 * alpha)


def kernel_tail_mass(a, alpha):
    """``int_a^inf K(k) dk = (e^a - 1)^(-2 alpha) / (2 alpha)`` (exact antiderivative)."""
    a = np.asarray(a, dtype=float)
    out = np.exp(-2 * alpha * a) * (-np.expm1(-a)) ** (-2 * alpha) / (2 * alpha)
    return out if out.ndim else float(out)


def _series_coefficients(alpha, a, tol, max_terms=5000):
    """Binomial coefficients c_j of (1 - e^-k)^-(1+2a) and the cut-off index."""
    c = [1.0]
    j = 0
    r = math.exp(-a)
    weight = 1.0
    while True:
        j += 1
        c.append(c[-1] * (2 * alpha + j) / j)
        weight *= r
        term = c[-1] * weight / (2 * alpha + j)
        # geometric remainder bound: terms decay at least like r * (1 + 2/j)
        ratio = r * (1.0 + (2 * alpha + 1) / j)
        if ratio < 1 and term / (1 - ratio) < 1e-3 * tol:
            break
        if j >= max_terms:
            raise AccuracyError("kernel tail series did not converge", term)
    return np.asarray(c)


def exponential_tail(gammas, alpha, a, tol=1e-12, order=0):
    """``int_a^inf k^order e^(gamma k) K(k) dk`` for ``gamma < 2 alpha``, order in {0, 1, 2}.

    Each series term integrates ``e^(-(2 alpha + j - gamma) k)`` exactly.
    """
    gammas = np.asarray(gammas, dtype=float)
    c = _series_coefficients(alpha, a, tol)
    j = np.arange(c.size)
    beta = 2 * alpha + j[:, None] - gammas[None, :]
    if np.any(beta[0] <= 0):
        raise DivergenceError("exponential moment diverges for gamma >= 2 alpha")
    base = np.exp(-beta * a) / beta
    if order == 1:
        base = base * (a + 1.0 / beta)
    elif order == 2:
        base = base * (a * a + 2 * a / beta + 2.0 / beta**2)
    elif order != 0:
        raise ValueError("order must be 0, 1 or 2")
    return c @ base


def _as_float_array(p):
    arr = np.asarray(p, dtype=float)
    return arr, arr.ndim == 0


def _near_part(integrand_over_k2, alpha, params, n):
    """``int_0^k_split F(k) K(k) dk`` where ``integrand_over_k2(k) = F(k)/k^2``."""
    k, w = singular_rule(params.k_split, alpha, n)
    vals = integrand_over_k2(k) * regular_weight(k, alpha)
    return vals @ w


def _with_error_check(compute, params, what):
    n = params.n_singular
    coarse = compute(n)
    fine = compute(n + n // 2)
    err = np.max(np.abs(fine - coarse)) if np.size(fine) else 0.0
    scale = max(1.0, float(np.max(np.abs(fine))) if np.size(fine) else 1.0)
    if not np.isfinite(err) or err > params.tol * scale:
        raise AccuracyError(f"{what}: singular quadrature", float(err))
    return fine


def hamiltonian(p, alpha=None, params=None):
    """``H(p) = int_0^inf (e^(kp) + e^(-kp) - 2) K(k) dk``; ``INFINITE`` for ``|p| >= 2 alpha``.

    Accepts scalars or arrays.
    """
    params = _params(alpha, params)
    alpha = params.alpha
    p, scalar = _as_float_array(p)
    flat = p.ravel()
    out = np.full(flat.shape, INFINITE)
    finite = np.abs(flat) < 2 * alpha
    # H is even: work with |p| so symmetry is exact
    q = np.abs(flat[finite])
    if q.size:

        def near(n):
            def f(k):
                s = np.sinh(0.5 * np.outer(k, q))
                return 4.0 * s * s / (k * k)[:, None]

            kk, w = singular_rule(params.k_split, alpha, n)
            return (f(kk) * regular_weight(kk, alpha)[:, None]).T @ w

        near_val = _with_error_check(near, params, "hamiltonian")
        a = params.k_split
        tail = (exponential_tail(q, alpha, a, params.tol)
                + exponential_tail(-q, alpha, a, params.tol)
                - 2.0 * exponential_tail(np.zeros(1), alpha, a, params.tol))
        # the tail combination cancels to O(p^2); rounding may leave -1e-16
        out[finite] = np.maximum(near_val + tail, 0.0)
    out = out.reshape(p.shape)
    return float(out) if scalar else out


def hamiltonian_derivative(p, alpha=None, params=None):
    """``H'(p) = int_0^inf k (e^(kp) - e^(-kp)) K(k) dk`` for ``|p| < 2 alpha``."""
    params = _params(alpha, params)
    alpha = params.alpha
    p, scalar = _as_float_array(p)
    flat = p.ravel()
    if np.any(np.abs(flat) >= 2 * alpha):
        raise DomainError("H' is only finite for |p| < 2 alpha")

    def near(n):
        kk, w = singular_rule(params.k_split, alpha, n)
        f = 2.0 * np.sinh(np.outer(kk, flat)) / kk[:, None]
        return (f * regular_weight(kk, alpha)[:, None]).T @ w

    near_val = _with_error_check(near, params, "hamiltonian_derivative")
    a = params.k_split
    tail = (exponential_tail(flat, alpha, a, params.tol, order=1)
            - exponential_tail(-flat, alpha, a, params.tol, order=1))
    out = (near_val + tail).reshape(p.shape)
    return float(out) if scalar else out


def hamiltonian_second_derivative(p, alpha=None, params=None):
    """``H''(p) = int_0^inf k^2 (e^(kp) + e^(-kp)) K(k) dk`` for ``|p| < 2 alpha``."""
    params = _params(alpha, params)
    alpha = params.alpha
    p, scalar = _as_float_array(p)
    flat = p.ravel()
    if np.any(np.abs(flat) >= 2 * alpha):
        raise DomainError("H'' is only finite for |p| < 2 alpha")

    def near(n):
        kk, w = singular_rule(params.k_split, alpha, n)
        f = 2.0 * np.cosh(np.outer(kk, flat))
        return (f * regular_weight(kk, alpha)[:, None]).T @ w

    near_val = _with_error_check(near, params, "hamiltonian_second_derivative")
    a = params.k_split
    tail = (exponential_tail(flat, alpha, a, params.tol, order=2)
            + exponential_tail(-flat, alpha, a, params.tol, order=2))
    out = (near_val + tail).reshape(p.shape)
    return float(out) if scalar else out


def mutation_variance(eps, alpha=None, params=None):
    """Variance of the rescaled mutation step in one dimension.

    ``v(eps) = sum_{nu=+-1} int_0^inf (e^(eps k) - 1)^2 K(k) dk``; requires ``0 < eps < alpha``.
    """
    params = _params(alpha, params)
    alpha = params.alpha
    if not eps > 0:
        raise DomainError("eps must be positive")
    if eps >= alpha:
        raise DivergenceError(f"variance diverges for eps >= alpha ({eps} >= {alpha})")

    def near(n):
        kk, w = singular_rule(params.k_split, alpha, n)
        f = (np.expm1(eps * kk) / kk) ** 2
        return np.atleast_1d((f * regular_weight(kk, alpha)) @ w)

    near_val = _with_error_check(near, params, "mutation_variance")[0]
    a = params.k_split
    t = exponential_tail(np.array([2 * eps, eps, 0.0]), alpha, a, params.tol)
    return float(2.0 * (near_val + t[0] - 2 * t[1] + t[2]))


def _params(alpha, params):
    if params is None:
        if alpha is None:
            raise TypeError("need alpha or params")
        return KernelParams(alpha=float(alpha))
    if alpha is not None and not math.isclose(alpha, params.alpha):
        raise DomainError(f"alpha={alpha} disagrees with params.alpha={params.alpha}")
    return params


@dataclass(frozen=True)
class HamiltonianTable:
    """Tabulated H, H', H'' on a uniform grid of ``[-p_max, p_max]``, ``p_max = 2 alpha - delta_clamp``.

    Queries are clamped to the table range and interpolated with quintic
    Hermite polynomials, which keeps the error small right up to the edge
    where H grows like ``1/(2 alpha - |p|)``.
    """

    alpha: float
    delta_clamp: float
    p_nodes: np.ndarray
    h_values: np.ndarray
    hprime_values: np.ndarray
    hsecond_values: np.ndarray = field(repr=False)

    @property
    def p_max(self):
        return 2 * self.alpha - self.delta_clamp

    @property
    def dp(self):
        return float(self.p_nodes[1] - self.p_nodes[0])

    def clamp(self, p):
        return np.clip(p, -self.p_max, self.p_max)

    def _locate(self, p):
        p = self.clamp(np.asarray(p, dtype=float))
        s = (p - self.p_nodes[0]) / self.dp
        i = np.clip(np.floor(s).astype(int), 0, self.p_nodes.size - 2)
        return p, i, s - i

    def __call__(self, p):
        return self.evaluate(p)

    def evaluate(self, p):
        p_arr, i, t = self._locate(p)
        out = _hermite5(t, self.dp, self.h_values[i], self.h_values[i + 1],
                        self.hprime_values[i], self.hprime_values[i + 1],
                        self.hsecond_values[i], self.hsecond_values[i + 1])
        return float(out) if np.ndim(p) == 0 else out

    def derivative(self, p):
        p_arr, i, t = self._locate(p)
        out = _hermite5_dt(t, self.dp, self.h_values[i], self.h_values[i + 1],
                           self.hprime_values[i], self.hprime_values[i + 1],
                           self.hsecond_values[i], self.hsecond_values[i + 1]) / self.dp
        return float(out) if np.ndim(p) == 0 else out

    @property
    def theta(self):
        """Largest |H'| over the table: H'(p_max)."""
        return float(self.hprime_values[-1])


def _hermite5(t, dp, f0, f1, d0, d1, s0, s1):
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    t5 = t4 * t
    h00 = 1 - 10 * t3 + 15 * t4 - 6 * t5
    h01 = 10 * t3 - 15 * t4 + 6 * t5
    h10 = t - 6 * t3 + 8 * t4 - 3 * t5
    h11 = -4 * t3 + 7 * t4 - 3 * t5
    h20 = 0.5 * (t2 - 3 * t3 + 3 * t4 - t5)
    h21 = 0.5 * (t3 - 2 * t4 + t5)
    return f0 * h00 + f1 * h01 + dp * (d0 * h10 + d1 * h11) + dp * dp * (s0 * h20 + s1 * h21)


def _hermite5_dt(t, dp, f0, f1, d0, d1, s0, s1):
    t2 = t * t
    t3 = t2 * t
    t4 = t3 * t
    h00 = -30 * t2 + 60 * t3 - 30 * t4
    h01 = -h00
    h10 = 1 - 18 * t2 + 32 * t3 - 15 * t4
    h11 = -12 * t2 + 28 * t3 - 15 * t4
    h20 = 0.5 * (2 * t - 9 * t2 + 12 * t3 - 5 * t4)
    h21 = 0.5 * (3 * t2 - 8 * t3 + 5 * t4)
    return f0 * h00 + f1 * h01 + dp * (d0 * h10 + d1 * h11) + dp * dp * (s0 * h20 + s1 * h21)


def default_delta_clamp(alpha):
    return 0.05 * 2 * alpha


def build_hamiltonian_table(alpha, delta_clamp=None, n_points=4001, params=None, n_probes=64, seed=0):
    """Tabulate H on ``[-(2 alpha - delta_clamp), 2 alpha - delta_clamp]`` and verify it.

    Raises :class:`BuildError` naming the first violated invariant.
    """
    params = _params(alpha, params)
    alpha = params.alpha
    if delta_clamp is None:
        delta_clamp = default_delta_clamp(alpha)
    if not 0 < delta_clamp < 2 * alpha:
        raise DomainError("delta_clamp must lie in (0, 2 alpha)")
    if n_points < 5:
        raise DomainError("n_points must be >= 5")
    if n_points % 2 == 0:
        n_points += 1  # keep p = 0 on the grid
    p_max = 2 * alpha - delta_clamp
    p = np.linspace(-p_max, p_max, n_points)
    p[n_points // 2] = 0.0
    half = p[n_points // 2:]
    # evaluate on p >= 0 and mirror, so symmetry is exact by construction
    h_half = hamiltonian(half, params=params)
    d_half = hamiltonian_derivative(half, params=params)
    s_half = hamiltonian_second_derivative(half, params=params)
    h = np.concatenate([h_half[:0:-1], h_half])
    d = np.concatenate([-d_half[:0:-1], d_half])
    s = np.concatenate([s_half[:0:-1], s_half])
    table = HamiltonianTable(alpha, float(delta_clamp), p, h, d, s)
    _verify_table(table, params, n_probes, seed)
    return table


def _verify_table(table, params, n_probes, seed):
    tol = params.tol
    h, d, p = table.h_values, table.hprime_values, table.p_nodes
    mid = p.size // 2
    if h[mid] != 0.0:
        raise BuildError("H(0) = 0", f"got {h[mid]:.3e}")
    if np.any(h < 0):
        raise BuildError("H >= 0", f"min {h.min():.3e}")
    asym = np.max(np.abs(h - h[::-1]))
    if asym > tol:
        raise BuildError("H even", f"max asymmetry {asym:.3e}")
    if np.min(np.diff(h, 2)) < -tol:
        raise BuildError("H convex", f"min second difference {np.min(np.diff(h, 2)):.3e}")
    if np.max(np.abs(d + d[::-1])) > tol * max(1.0, np.abs(d).max()):
        raise BuildError("H' odd")
    if np.any(np.diff(d) < 0):
        raise BuildError("H' nondecreasing")
    if np.any(np.diff(h[mid:]) <= 0):
        raise BuildError("H increasing in |p|")
    rng = np.random.default_rng(seed)
    probes = rng.uniform(-table.p_max, table.p_max, n_probes)
    direct = hamiltonian(probes, params=params)
    err = np.abs(table(probes) - direct) / np.maximum(1.0, np.abs(direct))
    if err.max() > tol:
        raise BuildError("interpolation accuracy", f"max relative error {err.max():.3e} > tol {tol:.1e}")
