"""Closed-form unconstrained example ``u(t,x) = -C t sqrt(1+x^2) / (1+t)``.

With the source ``a(t,x)`` below, ``u`` solves ``u_t = H(u_x) + a`` exactly.
Its gradient stays below ``C < 2 alpha`` but it decays linearly, so it breaks
the logarithmic growth bound satisfied by limits of the selection problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import DomainError
from .kernel import KernelParams, hamiltonian


@dataclass(frozen=True)
class ExampleParams:
    C: float = 0.8
    alpha: float = 0.5

    def __post_init__(self):
        if not 0 < self.C < 2 * self.alpha:
            raise DomainError(f"need 0 < C < 2 alpha, got C={self.C}, alpha={self.alpha}")


def _check_t(t):
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be nonnegative")


def example_u(t, x, params: ExampleParams):
    _check_t(t)
    t = np.asarray(t, dtype=float)
    return -params.C * t * np.sqrt(1 + np.asarray(x, dtype=float) ** 2) / (1 + t)


def example_u_x(t, x, params: ExampleParams):
    x = np.asarray(x, dtype=float)
    return -(params.C * t / (1 + t)) * x / np.sqrt(1 + x * x)


def example_u_t(t, x, params: ExampleParams):
    return -params.C * np.sqrt(1 + np.asarray(x, dtype=float) ** 2) / (1 + np.asarray(t, dtype=float)) ** 2


def example_source_a(t, x, params: ExampleParams, kernel_params: KernelParams | None = None):
    """``a = -C sqrt(1+x^2)/(1+t)^2 - H(q)``, ``q = C t x / ((1+t) sqrt(1+x^2))``."""
    _check_t(t)
    q = -example_u_x(t, x, params)
    return example_u_t(t, x, params) - hamiltonian(q, params.alpha, kernel_params)


def _integrand(k, p, alpha):
    # 4 sinh^2(kp/2) e^k/(e^k-1)^(1+2 alpha) with the k^(1-2 alpha) weight removed
    if k == 0.0:
        return p * p
    s = math.sinh(0.5 * k * p)
    return 4.0 * s * s * math.exp(-2 * alpha * k) / (-math.expm1(-k)) ** (1 + 2 * alpha) / k ** (1 - 2 * alpha)


def reference_hamiltonian(p, alpha, epsabs=1e-13):
    """Adaptive quadrature of ``H(p)``, independent of the series-based evaluation.

    Returns ``(value, error_estimate)``.
    """
    p = abs(float(p))
    if p >= 2 * alpha:
        return math.inf, 0.0
    if p == 0.0:
        return 0.0, 0.0
    beta = 1.0 - 2.0 * alpha
    # algebraic weight k^beta handled by QAWS on [0, 1]
    v1, e1 = quad(_integrand, 0.0, 1.0, args=(p, alpha), weight="alg", wvar=(beta, 0.0),
                  epsabs=epsabs, epsrel=1e-13, limit=200)
    # 4 sinh^2(kp/2) e^{-2 alpha k} = e^{(p - 2 alpha) k} (1 - e^{-pk})^2, overflow free
    v2, e2 = quad(lambda k: math.exp((p - 2 * alpha) * k) * math.expm1(-p * k) ** 2
                  / (-math.expm1(-k)) ** (1 + 2 * alpha), 1.0, math.inf,
                  epsabs=epsabs, epsrel=1e-13, limit=400)
    return v1 + v2, e1 + e2


def example_residual(t, x, params: ExampleParams, kernel_params: KernelParams | None = None,
                     derivatives="analytic", fd_step=1e-3):
    """``|u_t - int (e^{k u_x} + e^{-k u_x} - 2) K dk - a|`` at scalar ``(t, x)``.

    The integral is evaluated by adaptive quadrature, while ``a`` uses the
    series-based Hamiltonian, so the two sides are computed independently.
    ``derivatives='fd'`` replaces the exact derivatives with fourth-order
    central differences of :func:`example_u`.
    """
    _check_t(t)
    t = float(t)
    x = float(x)
    if derivatives == "analytic":
        ut = float(example_u_t(t, x, params))
        ux = float(example_u_x(t, x, params))
    elif derivatives == "fd":
        h = fd_step
        f = lambda tt, xx: float(example_u(tt, xx, params))  # noqa: E731
        ux = (-f(t, x + 2 * h) + 8 * f(t, x + h) - 8 * f(t, x - h) + f(t, x - 2 * h)) / (12 * h)
        if t >= 2 * h:
            ut = (-f(t + 2 * h, x) + 8 * f(t + h, x) - 8 * f(t - h, x) + f(t - 2 * h, x)) / (12 * h)
        else:
            # one-sided fourth order at the initial time
            ut = (-25 * f(t, x) + 48 * f(t + h, x) - 36 * f(t + 2 * h, x) + 16 * f(t + 3 * h, x)
                  - 3 * f(t + 4 * h, x)) / (12 * h)
    else:
        raise ValueError("derivatives must be 'analytic' or 'fd'")
    integral, _ = reference_hamiltonian(ux, params.alpha)
    return abs(ut - integral - float(example_source_a(t, x, params, kernel_params)))


def residual_grid(params: ExampleParams, kernel_params=None, t_range=(0.0, 2.0), x_range=(-5.0, 5.0),
                  n_t=41, n_x=41, derivatives="analytic"):
    """Residual over a tensor grid; returns ``(max_residual, (t, x) of the max, array)``."""
    ts = np.linspace(*t_range, n_t)
    xs = np.linspace(*x_range, n_x)
    r = np.array([[example_residual(t, x, params, kernel_params, derivatives) for x in xs] for t in ts])
    i, j = np.unravel_index(int(np.argmax(r)), r.shape)
    return float(r[i, j]), (float(ts[i]), float(xs[j])), r


def log_bound_violation_search(params: ExampleParams, t, h_range=(1e-2, 1e3), n=4001, slack=0.0):
    """Smallest ``h`` on a log grid with ``u(t,0) - u(t,-h) > 2 alpha log(1+h) + slack``, or ``None``."""
    if not t > 0:
        if t < 0:
            raise DomainError("t must be nonnegative")
        return None
    hs = np.geomspace(h_range[0], h_range[1], n)
    lhs = (params.C * t / (1 + t)) * (np.sqrt(1 + hs * hs) - 1)
    bad = lhs > 2 * params.alpha * np.log1p(hs) + slack
    if not bad.any():
        return None
    return float(hs[np.argmax(bad)])
