"""Constrained Hamilton-Jacobi limit: ``u_t = H(u_x) + R(x, I(t))`` with ``max_x u = 0``.

The multiplier ``I(t)`` is found at every step by a monotone root search:
``R`` is strictly decreasing in ``I``, so the maximum after the update is too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from ._kernels import FLUX_GODUNOV, FLUX_LLF, hj_flux_kernel, log_growth_hull
from .errors import ConfigError, ConstraintInfeasibleError, StepSizeError
from .grid import Field, Grid1D
from .kernel import HamiltonianTable, KernelParams, build_hamiltonian_table, default_delta_clamp
from .model import GrowthModel
from .report import CheckReport

FLUXES = {"godunov": FLUX_GODUNOV, "llf": FLUX_LLF}


@dataclass
class HJConfig:
    """Settings of one constrained run. ``u0`` is normalised to ``max = 0``.

    With ``growth_hull`` every step is followed by the lift to the smallest
    function satisfying the logarithmic growth bound; this selects the
    minimal supersolution within that class rather than the plain local
    solution, which may decay linearly.
    """

    grid: Grid1D
    alpha: float
    model: GrowthModel
    T: float
    u0: np.ndarray
    delta_clamp: Optional[float] = None
    cfl_frac: float = 0.9
    bisection_tol: float = 1e-8
    snapshot_dt: float = 0.1
    flux: str = "godunov"
    dt_max: float = 0.01
    table_points: int = 4001
    kernel_params: Optional[KernelParams] = None
    growth_hull: bool = True
    backend: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        errs = []
        if self.delta_clamp is None:
            self.delta_clamp = default_delta_clamp(self.alpha)
        if not 0 < self.delta_clamp < 2 * self.alpha:
            errs.append(("hj.delta_clamp", "must lie in (0, 2 alpha)"))
        if not self.bisection_tol > 0:
            errs.append(("hj.bisection_tol", "must be > 0"))
        if not 0 < self.cfl_frac <= 1:
            errs.append(("hj.cfl_frac", "must lie in (0, 1]"))
        if self.flux not in FLUXES:
            errs.append(("hj.flux", f"one of {sorted(FLUXES)}"))
        if not self.T > 0:
            errs.append(("time.T", "must be > 0"))
        u0 = np.asarray(self.u0, dtype=float)
        if u0.shape != (self.grid.N,) or not np.all(np.isfinite(u0)):
            errs.append(("initial", "u0 must be finite and match the grid"))
        if errs:
            raise ConfigError("; ".join(f"{p}: {m}" for p, m in errs), errs)
        self.u0 = u0 - u0.max()


@dataclass
class HJTrajectory:
    """Per-step series plus snapshots.

    ``I_values[k]`` (``k >= 1``) is the multiplier of the step ending at
    ``times[k]``; ``I_values[0]`` repeats the first one (back-solved initial
    value). Each snapshot keeps the field of the preceding step for
    time-difference diagnostics.
    """

    times: np.ndarray
    I_values: np.ndarray
    xbar: np.ndarray
    max_u: np.ndarray
    dt_history: np.ndarray
    fields: list
    prev_fields: list = field(default_factory=list)
    snapshot_I: list = field(default_factory=list)
    config: Optional[HJConfig] = None
    table: Optional[HamiltonianTable] = None

    @property
    def snapshot_times(self):
        return np.array([f.t for f in self.fields])

    def field_at(self, t):
        ts = self.snapshot_times
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.fields[i]


def _flux(u, dx, table, flux, backend=None):
    kind = FLUXES[flux] if isinstance(flux, str) else flux
    return hj_flux_kernel(u, dx, table, kind, table.theta, backend)


def max_speed(u, dx, table, flux="godunov"):
    """Largest ``|H'|`` entering the monotonicity bound."""
    if flux == "llf":
        return table.theta
    d = np.clip(np.diff(u) / dx, -table.p_max, table.p_max)
    return float(np.max(np.abs(table.derivative(np.array([d.min(), d.max()])))))


def cfl_dt(u, dx, table, model, cfl_frac, flux="godunov"):
    return cfl_frac / (max_speed(u, dx, table, flux) / dx + model.K2)


def hj_step(u: Field, I, dt, table: HamiltonianTable, model: GrowthModel, flux="godunov",
            cfl_frac=0.9, backend=None) -> Field:
    """``u + dt (H_hat(D-u, D+u) + R(., I))`` under the monotonicity bound.

    ``llf`` uses ``H((a+b)/2) + theta/2 (b - a)`` with ``theta = H'(p_max)``;
    ``godunov`` uses the exact Riemann flux of the convex Hamiltonian.
    """
    limit = cfl_dt(u.values, u.grid.dx, table, model, cfl_frac, flux)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.3e} violates the monotonicity bound {limit:.3e}", limit)
    hh = _flux(u.values, u.grid.dx, table, flux, backend)
    return Field(u.grid, u.values + dt * (hh + model.rate(u.x, I)), u.t + dt)


def solve_constraint_mass(u_pre: Field, dt, table, model: GrowthModel, bracket=None, tol=1e-8,
                          flux="godunov", hhat=None, backend=None):
    """Choose ``I`` so that ``max_x [u + dt (H_hat + R(x, I))] = 0``.

    Returns ``(I, field)``. Raises :class:`ConstraintInfeasibleError` if the
    bracket holds no sign change.
    """
    lo, hi = model.mass_bracket if bracket is None else bracket
    x = u_pre.x
    if hhat is None:
        hhat = _flux(u_pre.values, u_pre.grid.dx, table, flux, backend)
    c = u_pre.values + dt * hhat
    # only nodes that can still become the maximum matter
    cand = c >= c.max() - 2 * dt * model.K2 - tol
    xc, cc = x[cand], c[cand]

    def f(I):
        return float(np.max(cc + dt * model.rate(xc, I)))

    f_lo, f_hi = f(lo), f(hi)
    if not (f_lo >= 0 >= f_hi):
        raise ConstraintInfeasibleError((lo, hi), (f_lo, f_hi))
    if abs(f_lo) <= tol:
        I = lo
    elif abs(f_hi) <= tol:
        I = hi
    else:
        xtol = max(0.1 * tol / (dt * model.K1), 1e-15)
        I = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
        a, b = lo, hi
        # brentq guarantees the bracket width, not the value; finish by bisection
        for _ in range(200):
            v = f(I)
            if abs(v) <= tol:
                break
            if v > 0:
                a = I
            else:
                b = I
            I = 0.5 * (a + b)
    v = c + dt * model.rate(x, I)
    return float(I), Field(u_pre.grid, v, u_pre.t + dt)


def _next_stop(t, snapshot_dt, T):
    k = math.floor(t / snapshot_dt + 1e-9) + 1
    return min(k * snapshot_dt, T)


def run_hj_constrained(config: HJConfig, table: HamiltonianTable | None = None, max_steps=5_000_000):
    """March the constrained problem to ``config.T``."""
    if table is None:
        table = build_hamiltonian_table(config.alpha, config.delta_clamp, config.table_points,
                                        config.kernel_params, seed=config.seed)
    g, model = config.grid, config.model
    u = Field(g, config.u0.copy(), 0.0)
    times, Is, xbar, maxu, dts = [0.0], [math.nan], [float(g.x[np.argmax(u.values)])], [0.0], [0.0]
    fields, prev, snapI = [u.copy()], [None], [math.nan]
    t = 0.0
    stop = _next_stop(t, config.snapshot_dt, config.T)
    for _ in range(max_steps):
        if t >= config.T - 1e-12:
            break
        dt = min(cfl_dt(u.values, g.dx, table, model, config.cfl_frac, config.flux), config.dt_max)
        hit = dt >= stop - t - 1e-12
        if hit:
            dt = stop - t
        I, new = solve_constraint_mass(u, dt, table, model, tol=config.bisection_tol, flux=config.flux,
                                       backend=config.backend)
        t = stop if hit else t + dt
        v = new.values
        if config.growth_hull:
            v = log_growth_hull(v, g.x, config.alpha, config.backend)
        new = Field(g, v, t)
        if len(Is) == 1:
            Is[0] = I
            snapI[0] = I
        times.append(t)
        Is.append(I)
        k = int(np.argmax(new.values))
        xbar.append(float(g.x[k]))
        maxu.append(float(new.values[k]))
        dts.append(dt)
        if hit:
            fields.append(new.copy())
            prev.append(u.copy())
            snapI.append(I)
            stop = _next_stop(t, config.snapshot_dt, config.T)
        u = new
    return HJTrajectory(times=np.array(times), I_values=np.array(Is), xbar=np.array(xbar),
                        max_u=np.array(maxu), dt_history=np.array(dts), fields=fields,
                        prev_fields=prev, snapshot_I=snapI, config=config, table=table)


# ---------------------------------------------------------------- diagnostics on HJ runs

def _kinks(u, dx, threshold):
    d = np.diff(u) / dx
    a = np.empty_like(u)
    b = np.empty_like(u)
    a[1:], a[0] = d, d[0]
    b[:-1], b[-1] = d, d[-1]
    return a, b, np.abs(b - a) > threshold


def supersolution_residual(traj: HJTrajectory, model: GrowthModel, table: HamiltonianTable | None = None,
                           kink_factor=10.0, interior=None):
    """Residual ``u_t - H(u_x) - R(x, I)`` at every snapshot with a predecessor.

    Smooth nodes (``|D+u - D-u| <= kink_factor * dx``) use the central
    gradient. At kinks the supersolution test only sees smooth minorants: a
    concave corner (``D-u > D+u``) admits none, so the inequality holds
    vacuously; a convex corner is tested with ``max(H(D-u), H(D+u))``.
    Returns a list of dicts with the residual array, the smooth mask and the
    minimum over tested nodes.
    """
    table = table or traj.table
    out = []
    for f, p, I in zip(traj.fields, traj.prev_fields, traj.snapshot_I):
        if p is None:
            continue
        dt = f.t - p.t
        dx = f.grid.dx
        u = p.values
        ut = (f.values - u) / dt
        a, b, kink = _kinks(u, dx, kink_factor * dx)
        grad = np.clip(0.5 * (a + b), -table.p_max, table.p_max)
        r = ut - table(grad) - model.rate(f.x, I)
        convex = kink & (a < b)
        r_convex = ut - np.maximum(table(np.clip(a, -table.p_max, table.p_max)),
                                   table(np.clip(b, -table.p_max, table.p_max))) - model.rate(f.x, I)
        r = np.where(convex, r_convex, r)
        tested = ~kink | convex
        tested[[0, -1]] = False
        if interior is not None:
            tested &= np.abs(f.x) <= interior
        smooth = ~kink
        smooth[[0, -1]] = False
        if interior is not None:
            smooth &= np.abs(f.x) <= interior
        out.append({
            "t": f.t,
            "residual": r,
            "tested": tested,
            "smooth": smooth,
            "concave_kinks": int(np.sum(kink & ~convex)),
            "min_residual": float(np.min(r[tested])) if tested.any() else math.inf,
            "argmin_x": float(f.x[tested][np.argmin(r[tested])]) if tested.any() else math.nan,
        })
    return out


def supersolution_check(traj: HJTrajectory, model: GrowthModel, tol=5e-2, interior=None, kink_factor=10.0):
    """Smallest residual over tested nodes of all snapshots is ``>= -tol``."""
    res = supersolution_residual(traj, model, kink_factor=kink_factor, interior=interior)
    worst = min(res, key=lambda r: r["min_residual"]) if res else None
    m = worst["min_residual"] if worst else math.inf
    return CheckReport(
        name="supersolution_residual",
        passed=m >= -tol,
        measured={"min_residual": m, "snapshots": len(res)},
        tolerance={"tol": tol, "kink_factor": kink_factor},
        worst={"t": worst["t"], "x": worst["argmin_x"]} if worst else {},
    )


def subsolution_defect(traj: HJTrajectory, model: GrowthModel, tol=5e-2, interior=None, kink_factor=10.0):
    """Where the reverse inequality ``u_t - H(u_x) - R <= tol`` fails at smooth nodes.

    A measurement, not a verdict: ``passed`` is always true and the defect
    is reported as the largest positive residual and the share of smooth
    nodes exceeding ``tol``.
    """
    res = supersolution_residual(traj, model, kink_factor=kink_factor, interior=interior)
    worst, where, bad, total = -math.inf, {}, 0, 0
    for r in res:
        vals = r["residual"][r["smooth"]]
        if not vals.size:
            continue
        total += vals.size
        bad += int(np.sum(vals > tol))
        k = int(np.argmax(vals))
        if vals[k] > worst:
            worst = float(vals[k])
            where = {"t": r["t"], "x": float(traj.fields[0].x[r["smooth"]][k])}
    return CheckReport(
        name="subsolution_defect",
        passed=True,
        measured={"max_residual": worst, "nodes_above_tol": bad, "smooth_nodes": total,
                  "fraction_above_tol": bad / total if total else 0.0},
        tolerance={"tol": tol, "kink_factor": kink_factor},
        worst=where,
        notes=["measured only"],
    )


def constraint_check(traj: HJTrajectory, tol=1e-8):
    """``|max_x u| <= tol`` after every step."""
    dev = np.abs(traj.max_u)
    k = int(np.argmax(dev))
    return CheckReport(
        name="constraint",
        passed=bool(dev[k] <= tol),
        measured={"max_abs_max_u": float(dev[k]), "steps": int(traj.times.size - 1)},
        tolerance={"tol": tol},
        worst={"t": float(traj.times[k])},
    )


def jump_times(traj: HJTrajectory, factor=50.0, noise=1e-9):
    """Step indices where ``I`` jumps: ``|dI| > factor * dt * mean rate``.

    The mean rate is the total variation over the run time. On a grid the
    maximiser hops between nodes, so ``I`` is piecewise constant with small
    steps and a median rate would be zero. Changes below ``noise``
    (root-finding resolution) never count as jumps.
    """
    dI = np.abs(np.diff(traj.I_values))
    dt = traj.dt_history[1:]
    span = float(np.sum(dt))
    mean_rate = float(np.sum(dI)) / span if span > 0 else 0.0
    flagged = (dI > factor * dt * mean_rate) & (dI > noise)
    return np.flatnonzero(flagged) + 1


def zero_set(u, zero_tol):
    return np.flatnonzero(u.values > -zero_tol)


def zero_set_check(traj: HJTrajectory, model: GrowthModel, zero_tol=1e-6, r_tol=5e-2, t_min=0.0,
                   jump_factor=50.0, noise=1e-9):
    """``{u = 0}`` inside ``{R(., I) = 0}`` at snapshot times where ``I`` is continuous."""
    jumps = set(jump_times(traj, jump_factor, noise).tolist())
    step_of = {float(t): k for k, t in enumerate(traj.times)}
    worst, worst_at, violations, checked, excluded = 0.0, None, [], 0, []
    for f, I in zip(traj.fields, traj.snapshot_I):
        if f.t <= t_min or not np.isfinite(I):
            continue
        k = step_of.get(float(f.t))
        if k is not None and (k in jumps or k + 1 in jumps):
            excluded.append(f.t)
            continue
        idx = zero_set(f, zero_tol)
        r = np.abs(model.rate(f.x[idx], I))
        checked += 1
        if r.size and r.max() > worst:
            worst = float(r.max())
            worst_at = {"t": f.t, "x": float(f.x[idx][np.argmax(r)]), "I": I}
        for xi, ri in zip(f.x[idx], r):
            if ri >= r_tol:
                violations.append({"t": f.t, "x": float(xi), "abs_R": float(ri)})
    return CheckReport(
        name="zero_set",
        passed=not violations and checked > 0,
        measured={"max_abs_R_on_zero_set": worst, "snapshots_checked": checked,
                  "snapshots_excluded": len(excluded)},
        tolerance={"r_tol": r_tol, "zero_tol": zero_tol},
        worst=worst_at or {},
        notes=[f"{len(violations)} violations"] if violations else [],
    )


def single_cell_zero_set(traj: HJTrajectory, t_min=0.5, zero_tol=1e-6):
    """Zero set spans at most one grid cell at every snapshot with ``t >= t_min``."""
    worst_span, worst_t = 0, None
    for f in traj.fields:
        if f.t < t_min - 1e-12:
            continue
        idx = zero_set(f, zero_tol)
        span = int(idx.max() - idx.min()) if idx.size else 0
        if span > worst_span:
            worst_span, worst_t = span, f.t
    return CheckReport(
        name="single_cell_zero_set",
        passed=worst_span <= 1,
        measured={"max_span_cells": worst_span},
        tolerance={"cells": 1, "zero_tol": zero_tol},
        worst={"t": worst_t} if worst_t is not None else {},
    )


def plain_replay(traj: HJTrajectory, refine=2):
    """Unconstrained scheme driven by the recorded ``I(t)`` with ``refine`` substeps per step."""
    cfg, table = traj.config, traj.table
    u = Field(cfg.grid, cfg.u0.copy(), 0.0)
    out = [u.copy()]
    snap_times = set(np.round(traj.snapshot_times, 12).tolist())
    for k in range(1, traj.times.size):
        dt = traj.dt_history[k] / refine
        for _ in range(refine):
            hh = _flux(u.values, cfg.grid.dx, table, cfg.flux, cfg.backend)
            v = u.values + dt * (hh + cfg.model.rate(u.x, traj.I_values[k]))
            if cfg.growth_hull:
                v = log_growth_hull(v, cfg.grid.x, cfg.alpha, cfg.backend)
            u = Field(cfg.grid, v, u.t + dt)
        if round(float(traj.times[k]), 12) in snap_times:
            out.append(Field(cfg.grid, u.values, float(traj.times[k])))
    return out


def minimality_check(traj: HJTrajectory, tol=5e-3, refine=2):
    """Constrained field ``>= `` replayed plain field ``- tol`` at every snapshot."""
    plain = plain_replay(traj, refine)
    worst, worst_at = math.inf, {}
    for f, p in zip(traj.fields, plain):
        d = f.values - p.values
        i = int(np.argmin(d))
        if d[i] < worst:
            worst, worst_at = float(d[i]), {"t": f.t, "x": float(f.x[i])}
    return CheckReport(
        name="minimality_proxy",
        passed=worst >= -tol,
        measured={"min_u_constrained_minus_plain": worst},
        tolerance={"tol": tol},
        worst=worst_at,
    )


def trajectory_csv(traj: HJTrajectory, header_line: str = "") -> str:
    lines = [header_line] if header_line else []
    lines.append("t,I,xbar")
    for t, I, xb in zip(traj.times, traj.I_values, traj.xbar):
        lines.append(f"{float(t)!r},{float(I)!r},{float(xb)!r}")
    return "\n".join(lines) + "\n"
