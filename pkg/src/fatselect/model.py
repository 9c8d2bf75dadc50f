"""Growth-rate models R(x, I), assumption checks and well-prepared initial data."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, DomainError
from .grid import Field, Grid1D
from .report import CheckReport

U_FLOOR_DENSITY = 1e-300


def u_floor(eps):
    """Lowest representable log-density: ``eps * log(1e-300) / 2``."""
    return 0.5 * eps * math.log(U_FLOOR_DENSITY)


@dataclass(frozen=True)
class GrowthModel:
    """Growth rate ``R(x, I)`` together with the constants of its standing assumptions.

    ``K1`` bounds ``-dR/dI`` from above and its inverse from below, ``K2``
    bounds the W^{2,inf} norm (sup of |R| + |R_x| + |R_xx|) for
    ``I in [I_m/2, 2 I_M]``.
    """

    name: str
    R: Callable[[np.ndarray, float], np.ndarray]
    dRdI: Callable[[np.ndarray, float], np.ndarray]
    K1: float
    K2: float
    I_m: float
    I_M: float
    monotone_in_x: bool = False

    def rate(self, x, I):
        return np.broadcast_to(np.asarray(self.R(np.asarray(x, dtype=float), I), dtype=float), np.shape(x))

    @property
    def mass_bracket(self):
        return (0.5 * self.I_m, 2.0 * self.I_M)


def _homogeneous():
    return GrowthModel(
        name="homogeneous",
        R=lambda x, I: np.zeros_like(x) + (1.0 - I),
        dRdI=lambda x, I: np.full_like(x, -1.0),
        K1=1.0, K2=1.5, I_m=1.0, I_M=1.0,
    )


def _monotone_tanh():
    return GrowthModel(
        name="monotone_tanh",
        R=lambda x, I: 2.0 + np.tanh(-x) - I,
        dRdI=lambda x, I: np.full_like(x, -1.0),
        K1=1.0, K2=7.0, I_m=1.0, I_M=3.0, monotone_in_x=True,
    )


def _peaked():
    return GrowthModel(
        name="peaked",
        R=lambda x, I: 2.0 - x * x / (1.0 + x * x) - I,
        dRdI=lambda x, I: np.full_like(x, -1.0),
        K1=1.0, K2=6.0, I_m=1.0, I_M=2.0,
    )


BUILTIN_MODELS = {"homogeneous": _homogeneous, "monotone_tanh": _monotone_tanh, "peaked": _peaked}


def make_growth_model(name, **overrides):
    """Built-in model by name; ``overrides`` may replace the declared ``K1``/``K2``."""
    try:
        model = BUILTIN_MODELS[name]()
    except KeyError:
        raise ConfigError(f"unknown growth model {name!r}; choose from {sorted(BUILTIN_MODELS)}",
                          [("model.name", "unknown model")]) from None
    bad = set(overrides) - {"K1", "K2"}
    if bad:
        raise ConfigError(f"unsupported model overrides {sorted(bad)}",
                          [(f"model.{k}", "unknown override") for k in sorted(bad)])
    if overrides:
        model = GrowthModel(**{**model.__dict__, **{k: float(v) for k, v in overrides.items()}})
    return model


def w2inf_norm(model, x, I, h=1e-3):
    """Finite-difference estimate of sup|R| + sup|R_x| + sup|R_xx| at fixed I."""
    r0 = model.rate(x, I)
    rp = model.rate(x + h, I)
    rm = model.rate(x - h, I)
    d1 = (rp - rm) / (2 * h)
    d2 = (rp - 2 * r0 + rm) / (h * h)
    return float(np.max(np.abs(r0)) + np.max(np.abs(d1)) + np.max(np.abs(d2)))


def check_assumptions(model, x_samples=None, I_samples=None, tol=1e-3, far_probe=1e6):
    """Check the three growth-rate assumptions on sample sets; failures are report entries."""
    if x_samples is None:
        x_samples = np.linspace(-20.0, 20.0, 401)
    if I_samples is None:
        I_samples = np.linspace(*model.mass_bracket, 41)
    x = np.asarray(x_samples, dtype=float)
    Is = np.asarray(I_samples, dtype=float)
    if x.size == 0 or Is.size == 0:
        raise DomainError("sample sets must be nonempty")

    # inf/sup rather than attained extrema: add far-field probes so values
    # approached only as |x| -> inf are seen
    xr = np.concatenate([x, [-far_probe, far_probe]])
    min_at_Im = float(np.min(model.rate(xr, model.I_m)))
    max_at_IM = float(np.max(model.rate(xr, model.I_M)))
    r1 = abs(min_at_Im) <= tol and abs(max_at_IM) <= tol

    d = np.concatenate([np.asarray(model.dRdI(x, I), dtype=float) for I in Is])
    # compare the declared derivative with a difference quotient as well
    fd = np.concatenate([(model.rate(x, I + 1e-6) - model.rate(x, I - 1e-6)) / 2e-6 for I in Is])
    dmin, dmax = float(min(d.min(), fd.min())), float(max(d.max(), fd.max()))
    r2 = (dmin >= -model.K1 - tol) and (dmax <= -1.0 / model.K1 + tol) and dmax < 0

    norms = [w2inf_norm(model, x, I) for I in Is]
    w2 = float(max(norms))
    r3 = w2 < model.K2

    measured = {
        "min_R_at_I_m": min_at_Im,
        "max_R_at_I_M": max_at_IM,
        "dRdI_min": dmin,
        "dRdI_max": dmax,
        "w2inf_estimate": w2,
        "R1": r1, "R2": r2, "R3": r3,
    }
    worst = {}
    if not r3:
        worst["I_at_max_norm"] = float(Is[int(np.argmax(norms))])
    if model.monotone_in_x:
        slopes = np.concatenate([np.diff(model.rate(x, I)) for I in Is])
        scale = max(1.0, float(np.max(np.abs(model.rate(x, Is[0])))))
        # saturating tails (tanh at |x| ~ 20) give differences below rounding
        resolved = np.abs(slopes) > 8 * np.finfo(float).eps * scale
        measured["max_x_difference"] = float(slopes.max())
        measured["unresolved_differences"] = int(np.sum(~resolved))
        measured["monotone"] = bool(slopes.max() <= 0 and np.all(slopes[resolved] < 0))
    notes = []
    if model.I_m >= model.I_M:
        notes.append("I_m == I_M: strict inequality relaxed (test-only model)")
    return CheckReport(
        name=f"assumptions[{model.name}]",
        passed=bool(r1 and r2 and r3),
        measured=measured,
        tolerance={"R1": tol, "K1": model.K1, "K2": model.K2},
        worst=worst,
        notes=notes,
    )


@dataclass(frozen=True)
class InitialData:
    """Parameters of ``u_eps^0(x) = eps log C0 - A log(C1 (1 + x^2)) [- steep bump]``.

    ``C0`` is not stored: :func:`build_initial_data` solves for it so the
    total mass equals ``target_mass``. The ``steep`` profile subtracts
    ``D x^2 / (1 + x^2)`` with ``D`` tuned so the largest slope equals
    ``steep_slope``; it stays below the envelope.
    """

    A: float
    C1: float
    eps: float
    target_mass: float
    profile: str = "envelope"
    steep_slope: float | None = None

    def __post_init__(self):
        if self.C1 <= 0:
            raise ConfigError("C1 must be positive", [("initial.C1", "must be > 0")])
        if self.A <= 0:
            raise ConfigError("A must be positive", [("initial.A", "must be > 0")])
        if self.eps <= 0:
            raise ConfigError("eps must be positive", [("eps", "must be > 0")])
        if self.target_mass <= 0:
            raise ConfigError("target mass must be positive", [("initial.target_mass", "must be > 0")])
        if self.profile not in ("envelope", "steep"):
            raise ConfigError(f"unknown profile {self.profile!r}", [("initial.profile", "envelope|steep")])
        if self.profile == "steep" and not (self.steep_slope and self.steep_slope > 0):
            raise ConfigError("steep profile needs steep_slope > 0", [("initial.steep_slope", "required")])


def envelope_shape(x, A, C1):
    """``-A log(C1 (1 + x^2))``."""
    return -A * (math.log(C1) + np.log1p(np.asarray(x, dtype=float) ** 2))


def _bump_amplitude(A, slope):
    xs = np.linspace(0.0, 10.0, 20001)
    env_slope = 2 * A * xs / (1 + xs * xs)
    bump_slope = 2 * xs / (1 + xs * xs) ** 2

    def excess(D):
        return float(np.max(env_slope + D * bump_slope)) - slope

    if excess(0.0) >= 0:
        return 0.0
    return brentq(excess, 0.0, 10.0 * slope + 10.0, xtol=1e-12)


def shape_function(init, x):
    """The eps-independent part of ``u^0``: envelope shape minus the optional bump."""
    phi = envelope_shape(x, init.A, init.C1)
    if init.profile == "steep":
        D = _bump_amplitude(init.A, init.steep_slope)
        phi = phi - D * x * x / (1.0 + x * x)
    return phi


def infinite_domain_log_mass(A, C1, eps):
    """``log int_R (C1 (1+x^2))^(-A/eps) dx``; finite only for ``A/eps > 1/2``."""
    s = A / eps
    if s <= 0.5:
        return math.inf
    return -s * math.log(C1) + 0.5 * math.log(math.pi) + gammaln(s - 0.5) - gammaln(s)


def build_initial_data(init, grid, alpha=None, max_outside_fraction=0.05):
    """Sample ``u_eps^0`` on ``grid`` with total mass ``init.target_mass``.

    Returns ``(field, log_C0)``; ``eps * log_C0`` is the envelope offset. Raises
    :class:`ConfigError` if ``A >= alpha`` and :class:`DomainError` if more than
    ``max_outside_fraction`` of the envelope mass lies outside the grid.
    """
    if alpha is not None and not init.A < alpha:
        raise ConfigError(f"initial decay exponent A={init.A} must satisfy A < alpha={alpha}",
                          [("initial.A", "A < alpha required")])
    eps = init.eps
    x = grid.x
    w = grid.trapezoid_weights()
    phi = shape_function(init, x)
    log_grid_mass = float(logsumexp(phi / eps + np.log(w)))
    env_log_mass = float(logsumexp(envelope_shape(x, init.A, init.C1) / eps + np.log(w)))
    full = infinite_domain_log_mass(init.A, init.C1, eps)
    outside = 1.0 - math.exp(env_log_mass - full) if math.isfinite(full) else 1.0
    if outside > max_outside_fraction:
        raise DomainError(
            f"initial mass unreachable on grid: {outside:.1%} of the envelope mass lies beyond |x| > {grid.L}"
        )
    log_C0 = math.log(init.target_mass) - log_grid_mass
    u = eps * log_C0 + phi
    lo = u_floor(eps)
    floored = u < lo
    return Field(grid, np.maximum(u, lo), 0.0, floored), log_C0


def limit_initial_data(init, grid):
    """eps -> 0 limit of ``u_eps^0``, normalised to ``max = 0``."""
    phi = shape_function(init, grid.x)
    return Field(grid, phi - phi.max(), 0.0)
