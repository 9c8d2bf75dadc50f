"""Measurements on fields and trajectories: regularity, envelope, mass variation, concentration."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DiagnosticError
from .grid import Field
from .model import GrowthModel, envelope_shape
from .report import CheckReport


def lipschitz_estimate(u: Field):
    """``max |u_{i+1} - u_i| / dx`` over adjacent pairs of non-floored nodes."""
    ok = u.valid_mask()
    if ok.sum() < 2:
        raise DiagnosticError("need at least two non-floored nodes")
    pair = ok[1:] & ok[:-1]
    if not pair.any():
        raise DiagnosticError("no adjacent pair of non-floored nodes")
    return float(np.max(np.abs(np.diff(u.values))[pair]) / u.grid.dx)


def log_growth_check(u: Field, alpha, tol=1e-9, slack=None, anchor=None):
    """``u_j - u_i <= 2 alpha log(1 + |x_j - x_i|) + slack + tol`` for all node pairs.

    ``slack`` defaults to ``2 dx``. The witness is the smallest separation
    ``|x_j - x_i|`` among violating pairs. With ``anchor`` set, the smallest
    violating separation among pairs whose upper end ``x_j`` is the node
    nearest ``anchor`` is reported too (``anchored_witness_h``).
    """
    v = u.values
    x = u.x
    ok = u.valid_mask()
    dx = u.grid.dx
    slack = 2 * dx if slack is None else slack
    n = v.size
    worst_margin, worst_pair = math.inf, None
    witness, witness_pair = None, None
    for s in range(1, n):
        h = x[s:] - x[:-s]
        bound = 2 * alpha * np.log1p(h) + slack + tol
        valid = ok[s:] & ok[:-s]
        for d, pair_of in ((v[s:] - v[:-s], lambda k: (k, k + s)), (v[:-s] - v[s:], lambda k: (k + s, k))):
            margin = np.where(valid, bound - d, math.inf)
            k = int(np.argmin(margin))
            if margin[k] < worst_margin:
                worst_margin, worst_pair = float(margin[k]), pair_of(k)
            if witness is None and margin[k] < 0:
                witness, witness_pair = float(h[k]), pair_of(k)
    measured = {"worst_margin": worst_margin, "witness_h": witness}
    if anchor is not None:
        j = u.grid.index_of(anchor)
        h = np.abs(x - x[j])
        bad = ok & ok[j] & (v[j] - v > 2 * alpha * np.log1p(h) + slack + tol)
        measured["anchored_witness_h"] = float(h[bad].min()) if bad.any() else None
    worst = {}
    if worst_pair is not None:
        i, j = worst_pair
        worst = {"x_from": float(x[i]), "x_to": float(x[j])}
    if witness_pair is not None:
        worst["witness_from"] = float(x[witness_pair[0]])
        worst["witness_to"] = float(x[witness_pair[1]])
    return CheckReport(
        name="log_growth",
        passed=worst_margin >= 0,
        measured=measured,
        tolerance={"slack": slack, "tol": tol},
        worst=worst,
    )


def envelope_bound(x, t, eps, A, log_C0, C1, C2):
    """``eps log C0 + C2 t - A log(C1 (1 + x^2))``."""
    return eps * log_C0 + C2 * t + envelope_shape(x, A, C1)


def envelope_check(u: Field, t, eps, A, log_C0, C1, C2, tol=1e-3):
    """Pointwise envelope inequality; also reports the smallest feasible ``C2`` for this field."""
    base = eps * log_C0 + envelope_shape(u.x, A, C1)
    ok = u.valid_mask()
    excess = np.where(ok, u.values - (base + C2 * t), -math.inf)
    i = int(np.argmax(excess))
    gap = float(np.max(np.where(ok, u.values - base, -math.inf)))
    c2_min = max(gap, 0.0) / t if t > 0 else (0.0 if gap <= 0 else math.inf)
    return CheckReport(
        name="envelope",
        passed=bool(excess[i] <= tol),
        measured={"max_excess": float(excess[i]), "C2": C2, "smallest_C2": c2_min, "t": t},
        tolerance={"tol": tol},
        worst={"x": float(u.x[i])},
    )


def a_priori_C2(B_env, model: GrowthModel, x=None):
    """``sup_x B_eps[envelope] + sup_x R(x, I_m / 2)``.

    ``B_env`` is the operator applied to the envelope shape (one array per
    ``eps``; the maximum over all of them is used so the constant is shared).
    """
    sup_B = max(float(np.max(b)) for b in B_env)
    if x is None:
        x = np.linspace(-50.0, 50.0, 20001)
    sup_R = float(np.max(model.rate(x, 0.5 * model.I_m)))
    return sup_B + sup_R


def _window(times, t0, T):
    times = np.asarray(times, dtype=float)
    if not t0 < T:
        raise DiagnosticError("need t0 < T")
    if t0 < times[0] - 1e-12 or T > times[-1] + 1e-12:
        raise DiagnosticError(f"[{t0}, {T}] outside the series range [{times[0]}, {times[-1]}]")
    return (times >= t0 - 1e-12) & (times <= T + 1e-12)


def bv_seminorm(I_series, t0, T, times=None):
    """Total variation ``sum |I_{n+1} - I_n|`` over samples with ``t0 <= t <= T``.

    ``I_series`` is either an array paired with ``times`` or a trajectory.
    """
    if times is None:
        times, I_series = I_series.times, I_series.I_values
    sel = _window(times, t0, T)
    return float(np.sum(np.abs(np.diff(np.asarray(I_series, dtype=float)[sel]))))


def negative_variation(I_series, t0, T, times=None):
    """``sum max(0, I_n - I_{n+1})`` over ``[t0, T]``."""
    if times is None:
        times, I_series = I_series.times, I_series.I_values
    sel = _window(times, t0, T)
    return float(np.sum(np.maximum(-np.diff(np.asarray(I_series, dtype=float)[sel]), 0.0)))


@dataclass(frozen=True)
class ConcentrationReport:
    t: float
    xbar: float
    mass_fraction: float
    width: float
    window: float
    center_of_mass: float

    def to_dict(self):
        return dict(self.__dict__)


def _quantile(x, cdf, q):
    return float(np.interp(q, cdf, x))


def concentration_metrics(u: Field, eps, window):
    """Argmax, window mass fraction around it and interquartile width of ``n / I``."""
    w = u.grid.trapezoid_weights()
    n = np.exp((u.values - u.values.max()) / eps)
    mass = n * w
    total = float(mass.sum())
    if not total > 0:
        raise DiagnosticError("total mass must be positive")
    x = u.x
    xbar = float(x[int(np.argmax(u.values))])
    frac = float(mass[np.abs(x - xbar) < window].sum() / total)
    cdf = np.cumsum(mass) / total
    cdf, idx = np.unique(cdf, return_index=True)
    width = _quantile(x[idx], cdf, 0.75) - _quantile(x[idx], cdf, 0.25)
    return ConcentrationReport(t=u.t, xbar=xbar, mass_fraction=min(frac, 1.0), width=max(width, 0.0),
                               window=window, center_of_mass=float(np.dot(mass, x) / total))


def concentration_series(traj, window):
    return [concentration_metrics(f, traj.eps, window) for f in traj.snapshots]


def supp_proxy(u: Field, eps, mass_share=1e-3, depth=5.0):
    """Nodes carrying at least ``mass_share`` of the mass sit within ``depth * eps`` of the top."""
    w = u.grid.trapezoid_weights()
    n = np.exp((u.values - u.values.max()) / eps) * w
    share = n / n.sum()
    heavy = share >= mass_share
    lowest = float(np.min(u.values[heavy] - u.values.max())) if heavy.any() else 0.0
    # values are compared with 0, the limiting maximum
    low_abs = float(np.min(u.values[heavy])) if heavy.any() else 0.0
    return CheckReport(
        name="supp_proxy",
        passed=low_abs >= -depth * eps,
        measured={"min_u_on_heavy_nodes": low_abs, "min_below_max": lowest, "heavy_nodes": int(heavy.sum())},
        tolerance={"depth": depth * eps, "mass_share": mass_share},
    )


def max_level_check(u: Field, tol=0.1):
    """``|max_x u_eps| <= tol``; the level of the maximum tends to 0 with ``eps`` at an unknown rate."""
    m = float(np.max(u.values))
    return CheckReport(
        name="max_level",
        passed=abs(m) <= tol,
        measured={"max_u": m},
        tolerance={"tol": tol},
        worst={"x": float(u.x[int(np.argmax(u.values))]), "t": u.t},
        notes=["empirical tolerance"],
    )


def _sup_gap(a: Field, b: Field, mask):
    d = np.abs(a.values - b.values)[mask]
    return float(d.max())


def convergence_study(trajectories, hj_trajectory=None, window=3.0, times=None, I_t_min=0.0):
    """Cauchy gaps along an ``eps`` sweep and the gap to the constrained limit.

    ``trajectories`` are pde runs (any order; sorted by decreasing ``eps``)
    sharing one grid. Distances are sup norms on ``|x| <= window`` maximised
    over the common snapshot times (or ``times``). The mass gap skips the
    detected jump steps of the limit run and times below ``I_t_min`` (the
    initial layer, where ``I_eps`` relaxes on an ``O(eps)`` time scale).
    """
    trajs = sorted(trajectories, key=lambda tr: -tr.eps)
    if len(trajs) < 2:
        raise ConfigError("need at least two runs", [("eps", "at least two values")])
    g0 = trajs[0].snapshots[0].grid
    for tr in trajs[1:]:
        g = tr.snapshots[0].grid
        if (g.N, g.L) != (g0.N, g0.L):
            raise ConfigError("runs do not share a grid", [("grid", "mismatched grids")])
    if hj_trajectory is not None:
        g = hj_trajectory.fields[0].grid
        if (g.N, g.L) != (g0.N, g0.L):
            raise ConfigError("HJ run uses a different grid", [("grid", "mismatched grids")])
    if times is None:
        common = set(np.round(trajs[0].snapshot_times, 9).tolist())
        for tr in trajs[1:]:
            common &= set(np.round(tr.snapshot_times, 9).tolist())
        if hj_trajectory is not None:
            common &= set(np.round(hj_trajectory.snapshot_times, 9).tolist())
        times = sorted(t for t in common if t > 0)
    mask = g0.window(window)
    cauchy = []
    for a, b in zip(trajs[:-1], trajs[1:]):
        cauchy.append(max(_sup_gap(a.snapshot_at(t), b.snapshot_at(t), mask) for t in times))
    orders = [math.log2(c0 / c1) if c0 > 0 and c1 > 0 else math.nan for c0, c1 in zip(cauchy[:-1], cauchy[1:])]
    report = {
        "eps": [tr.eps for tr in trajs],
        "times": list(times),
        "cauchy_gaps": cauchy,
        "empirical_orders": orders,
        "cauchy_decreasing": all(c1 < c0 for c0, c1 in zip(cauchy[:-1], cauchy[1:])),
    }
    if hj_trajectory is not None:
        last = trajs[-1]
        hj_gap = max(_sup_gap(last.snapshot_at(t), hj_trajectory.field_at(t), mask) for t in times)
        from .hj import jump_times

        jumps = set(jump_times(hj_trajectory).tolist())
        I_gap = 0.0
        for k, t in enumerate(hj_trajectory.times):
            if k == 0 or k in jumps or t <= 0 or t < I_t_min:
                continue
            I_gap = max(I_gap, abs(float(np.interp(t, last.times, last.I_values)) - hj_trajectory.I_values[k]))
        report.update({
            "hj_gap": hj_gap,
            "hj_gap_ratio": hj_gap / cauchy[-1] if cauchy[-1] > 0 else math.inf,
            "I_gap": I_gap,
        })
    return report


# ---------------------------------------------------------------- run-level checks

def logistic_mass(t, eps, I0):
    """Exact mass of the homogeneous model ``R = 1 - I``: logistic growth on the time scale ``eps``."""
    t = np.asarray(t, dtype=float)
    return 1.0 / (1.0 + (1.0 / I0 - 1.0) * np.exp(-t / eps))


def logistic_mass_check(traj, tol=1e-2):
    """Largest relative error of the mass series against :func:`logistic_mass`."""
    I0 = float(traj.I_values[0])
    exact = logistic_mass(traj.times, traj.eps, I0)
    rel = np.abs(traj.I_values - exact) / exact
    k = int(np.argmax(rel))
    return CheckReport(
        name=f"logistic_mass[eps={traj.eps:g}]",
        passed=bool(rel[k] < tol),
        measured={"max_rel_error": float(rel[k]), "I0": I0},
        tolerance={"rel": tol},
        worst={"t": float(traj.times[k])},
    )


def mass_bounds_check(traj, model: GrowthModel, slack=0.05, t_max=None):
    """``I_m - slack <= I(t) <= I_M + slack`` along the series."""
    sel = slice(None) if t_max is None else traj.times <= t_max + 1e-12
    I = np.asarray(traj.I_values)[sel]
    t = np.asarray(traj.times)[sel]
    lo, hi = model.I_m - slack, model.I_M + slack
    bad = (I < lo) | (I > hi)
    worst = {}
    if bad.any():
        worst["t"] = float(t[np.argmax(bad)])
    return CheckReport(
        name=f"mass_bounds[eps={traj.eps:g}]",
        passed=not bad.any(),
        measured={"I_min": float(I.min()), "I_max": float(I.max())},
        tolerance={"lower": lo, "upper": hi},
        worst=worst,
    )


def bv_uniformity_check(trajectories, t0=0.1, T=None, max_ratio=1.5):
    """Total variation of ``I_eps`` on ``[t0, T]`` along an ``eps`` sweep, ratios between neighbours."""
    trajs = sorted(trajectories, key=lambda tr: -tr.eps)
    T = min(tr.times[-1] for tr in trajs) if T is None else T
    tv = [bv_seminorm(tr, t0, T) for tr in trajs]
    ratios = [max(a, b) / min(a, b) if min(a, b) > 0 else (1.0 if a == b else math.inf)
              for a, b in zip(tv[:-1], tv[1:])]
    return CheckReport(
        name="bv_uniformity",
        passed=bool(ratios) and max(ratios) <= max_ratio,
        measured={"eps": [tr.eps for tr in trajs], "tv": tv, "ratios": ratios,
                  "max_ratio": max(ratios) if ratios else math.nan},
        tolerance={"max_ratio": max_ratio, "t0": t0, "T": T},
    )


def near_monotone_check(traj, t0=0.5, T=None, tol=1e-2):
    """Negative increments of ``I_eps`` after ``t0`` add up to at most ``tol``."""
    T = traj.times[-1] if T is None else T
    neg = negative_variation(traj, t0, T)
    return CheckReport(
        name=f"near_monotone[eps={traj.eps:g}]",
        passed=neg <= tol,
        measured={"negative_variation": neg},
        tolerance={"tol": tol, "t0": t0},
    )


def shared_envelope_check(trajectories, A, C1, C2, tol=1e-3):
    """One ``C2`` for every snapshot of every run."""
    worst_excess, where, smallest = -math.inf, {}, 0.0
    for tr in trajectories:
        for f in tr.snapshots:
            r = envelope_check(f, f.t, tr.eps, A, tr.log_C0, C1, C2, tol)
            if f.t > 0:
                smallest = max(smallest, r.measured["smallest_C2"])
            if r.measured["max_excess"] > worst_excess:
                worst_excess = r.measured["max_excess"]
                where = {"eps": tr.eps, "t": f.t, **r.worst}
    return CheckReport(
        name="envelope",
        passed=worst_excess <= tol,
        measured={"max_excess": worst_excess, "C2": C2, "smallest_C2": smallest},
        tolerance={"tol": tol},
        worst=where,
    )


def concentration_trend_check(trajectories, window=0.5, t=None, min_fraction=0.9, at_eps=0.05):
    """Window mass fraction grows as ``eps`` shrinks and reaches ``min_fraction`` at ``at_eps``.

    ``min_fraction=None`` checks the trend only.
    """
    trajs = sorted(trajectories, key=lambda tr: -tr.eps)
    reps = [concentration_metrics(tr.final if t is None else tr.snapshot_at(t), tr.eps, window) for tr in trajs]
    frac = [r.mass_fraction for r in reps]
    width = [r.width for r in reps]
    increasing = all(b > a for a, b in zip(frac[:-1], frac[1:]))
    shrinking = all(b < a for a, b in zip(width[:-1], width[1:]))
    target = [f for tr, f in zip(trajs, frac) if abs(tr.eps - at_eps) < 1e-12]
    reached = min_fraction is None or (bool(target) and target[0] >= min_fraction)
    return CheckReport(
        name="concentration",
        passed=increasing and reached,
        measured={"eps": [tr.eps for tr in trajs], "mass_fraction": frac, "width": width,
                  "fraction_increasing": increasing, "width_shrinking": shrinking,
                  "fraction_at_eps": target[0] if target else math.nan},
        tolerance={"min_fraction": min_fraction, "at_eps": at_eps, "window": window},
    )


def convergence_check(study, max_ratio=3.0, max_I_gap=None):
    """Cauchy gaps strictly decreasing and the limit gap within ``max_ratio`` of the last one.

    With ``max_I_gap`` the mass gap to the limit run must also stay below it.
    """
    ok = study["cauchy_decreasing"]
    if "hj_gap_ratio" in study:
        ok = ok and study["hj_gap_ratio"] <= max_ratio
        if max_I_gap is not None:
            ok = ok and study["I_gap"] <= max_I_gap
    return CheckReport(
        name="convergence",
        passed=bool(ok),
        measured={k: v for k, v in study.items() if k != "times"},
        tolerance={"max_ratio": max_ratio, "max_I_gap": max_I_gap},
    )
