"""Explicit solver for the rescaled selection-mutation equation in log variables.

The unknown is ``u = eps log n`` on a uniform grid. It evolves by

    du/dt = B_eps[u] + R(x, I),    I = int exp(u/eps) dx,

where ``B_eps`` is the nonlocal exponential-difference operator built from
the jump kernel. The operator is evaluated with a precomputed
:class:`QuadraturePlan`:

* jumps shorter than one cell (``k <= log(1+dx)/eps``) use Gauss-Jacobi nodes
  and a local quadratic model of ``u``, symmetrised in the jump direction;
* jumps landing inside the grid use Gauss-Legendre nodes aligned with the
  cells in jump-length space; between nodes ``u`` is the linear interpolant
  plus a curvature-limited parabolic correction (or purely linear);
* jumps beyond the grid use unit ``k``-panels and the envelope extension, and
  the remaining tail is integrated exactly.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from ._kernels import EXT_ENVELOPE, EXT_LINEAR, nonlocal_operator_kernel
from .errors import ConfigError, DomainError, RegularityError, SimulationError, StepSizeError
from .grid import Field, Grid1D
from .kernel import KernelParams, kernel_density, kernel_tail_mass, regular_weight, singular_rule
from .model import GrowthModel, InitialData, build_initial_data, check_assumptions, u_floor

MASS_ZERO = 1e-300


# ---------------------------------------------------------------- quadrature plan

@dataclass(frozen=True)
class QuadraturePlan:
    """Nodes and weights for ``B_eps`` on a given grid (see module docstring)."""

    L: float
    dx: float
    eps: float
    alpha: float
    A_ext: float
    extension_mode: int
    near_h: np.ndarray
    near_W: np.ndarray
    cell_t: np.ndarray
    in_m: np.ndarray
    in_q: np.ndarray
    in_qm: np.ndarray
    far_h: np.ndarray
    far_k: np.ndarray
    far_w: np.ndarray
    tailw: np.ndarray
    log_inv_tol: float
    exp_cap: float
    interpolation: str = "quadratic"

    @property
    def n_far(self):
        return self.far_h.size

    @property
    def n_in(self):
        return self.in_m.size


def default_exp_cap(alpha, L, eps, safety=2.0):
    """Largest admissible exponent ``(u(y)-u(x))/eps``: ``safety * 2 alpha log(1+2L) / eps``, at most 700."""
    return float(min(700.0, max(50.0, safety * 2 * alpha * math.log1p(2 * L) / eps)))


def build_quadrature_plan(grid: Grid1D, eps, params: KernelParams, A_ext=None, extension="envelope",
                          exp_cap=None, near_cells=8, near_order=4, cell_order=2, op_tol=None,
                          interpolation="quadratic"):
    """Precompute the operator quadrature for ``grid`` and ``eps``.

    ``interpolation`` is ``"quadratic"`` (linear plus a curvature-limited
    parabolic correction) or ``"linear"``.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    if extension not in ("envelope", "linear"):
        raise ConfigError(f"unknown extension {extension!r}", [("pde.extension", "envelope|linear")])
    if interpolation not in ("quadratic", "linear"):
        raise ConfigError(f"unknown interpolation {interpolation!r}",
                          [("quadrature.interpolation", "quadratic|linear")])
    if extension == "envelope" and (A_ext is None or A_ext < 0):
        raise ConfigError("envelope extension needs A_ext >= 0", [("initial.A", "required for extension")])
    alpha = params.alpha
    dx, N, L = grid.dx, grid.N, grid.L

    ka = math.log1p(dx) / eps
    kn, wn = singular_rule(ka, alpha, params.n_singular)
    near_h = np.expm1(eps * kn)
    near_W = wn * regular_weight(kn, alpha) / kn**2

    # cell-aligned panels in jump length h; the fractions t of each band are
    # shared by every cell, so exponentials can be tabulated per position
    ts, ms, qs, ws = [], [], [], []
    cell_t, mirror = [], []
    for order, lo, hi in ((near_order, 1, min(near_cells, N - 2)), (cell_order, near_cells + 1, N - 2)):
        if hi < lo:
            continue
        t, wt = np.polynomial.legendre.leggauss(order)
        t = 0.5 * (t + 1.0)
        q0 = len(cell_t)
        cell_t.extend(t.tolist())
        mirror.extend(range(q0 + order - 1, q0 - 1, -1))
        m = np.arange(lo, hi + 1)
        ms.append(np.repeat(m, order))
        ts.append(np.tile(t, m.size))
        qs.append(np.tile(np.arange(q0, q0 + order), m.size))
        ws.append(np.tile(0.5 * wt * dx, m.size))
    in_m = np.concatenate(ms).astype(np.int64)
    in_t = np.concatenate(ts)
    in_q = np.concatenate(qs).astype(np.int64)
    cell_t = np.array(cell_t)
    # Gauss-Legendre nodes are symmetric, so 1 - t is the mirrored node of the band
    mirror = np.array(mirror, dtype=np.int64)
    in_qm = mirror[in_q]
    h_in = (in_m + in_t) * dx
    k_in = np.log1p(h_in) / eps
    w_in = np.concatenate(ws) * kernel_density(k_in, alpha) / (eps * (1.0 + h_in))

    # beyond the grid: unit panels in k
    k_grid = math.log1p(2 * L) / eps
    n_pan = int(math.ceil(params.k_max))
    t, wt = np.polynomial.legendre.leggauss(params.n_regular)
    t = 0.5 * (t + 1.0)
    starts = k_grid + np.arange(n_pan)
    k_out = (starts[:, None] + t[None, :]).ravel()
    w_out = np.broadcast_to(0.5 * wt, (n_pan, t.size)).ravel() * kernel_density(k_out, alpha)
    h_out = np.expm1(eps * k_out)
    k_end = k_grid + n_pan

    far_h = np.concatenate([h_in, h_out])
    far_k = np.concatenate([k_in, k_out])
    far_w = np.concatenate([w_in, w_out])
    tailw = np.empty(far_w.size + 1)
    tailw[-1] = kernel_tail_mass(k_end, alpha)
    tailw[:-1] = np.cumsum(far_w[::-1])[::-1] + tailw[-1]

    tol = params.tol if op_tol is None else op_tol
    return QuadraturePlan(
        L=float(L), dx=float(dx), eps=float(eps), alpha=float(alpha),
        A_ext=float(A_ext or 0.0),
        extension_mode=EXT_ENVELOPE if extension == "envelope" else EXT_LINEAR,
        near_h=near_h, near_W=near_W, cell_t=cell_t, in_m=in_m, in_q=in_q, in_qm=in_qm,
        far_h=far_h, far_k=far_k, far_w=far_w, tailw=tailw, log_inv_tol=float(math.log(1.0 / tol)),
        exp_cap=float(default_exp_cap(alpha, L, eps) if exp_cap is None else exp_cap),
        interpolation=interpolation,
    )


def _values(u):
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def operator_with_rate(u, plan: QuadraturePlan, backend=None):
    """``(B_eps[u], lam)`` where ``lam`` is the explicit-stability rate per node."""
    v = _values(u)
    if not np.all(np.isfinite(v)):
        raise DomainError("operator needs finite field values")
    B, lam, worst = nonlocal_operator_kernel(v, plan, backend)
    if worst > plan.exp_cap:
        raise RegularityError(
            f"exponent (u(y)-u(x))/eps reached {worst:.1f} > cap {plan.exp_cap:.1f}; resolution lost",
            worst,
        )
    return B, lam


def nonlocal_exponential_operator(u, eps, kernel_params: KernelParams, grid: Grid1D, A_ext=None,
                                  extension="envelope", plan=None, backend=None):
    """``B_eps[u]`` at every node of ``grid``."""
    if plan is None:
        plan = build_quadrature_plan(grid, eps, kernel_params, A_ext=A_ext, extension=extension)
    return operator_with_rate(u, plan, backend)[0]


# ---------------------------------------------------------------- mass

def log_total_mass(u, eps, grid=None):
    if isinstance(u, Field):
        grid = u.grid
    v = _values(u)
    return float(logsumexp(v / eps + np.log(grid.trapezoid_weights())))


def total_mass(u, eps, grid=None):
    """``int exp(u/eps) dx`` by the trapezoid rule, evaluated with a max shift."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    lm = log_total_mass(u, eps, grid)
    if lm < math.log(MASS_ZERO):
        return 0.0
    return math.exp(lm)


# ---------------------------------------------------------------- stepping

@dataclass(frozen=True)
class StepControl:
    """Explicit-Euler step limits.

    ``cfl_frac`` bounds ``dt * lam`` (monotonicity of the linearised update),
    ``du_cap`` bounds the per-step change of ``u``, ``mass_cap`` bounds the
    relative per-step change of the mass and ``feedback_frac`` bounds
    ``dt * K1 * I / eps`` (stability of the mass feedback).
    """

    cfl_frac: float = 0.9
    du_cap: float = 0.1
    mass_cap: float = 0.005
    feedback_frac: float = 0.5
    dt_max: float = 0.05

    def __post_init__(self):
        for name in ("cfl_frac", "du_cap", "mass_cap", "feedback_frac", "dt_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", [(f"pde.{name}", "must be > 0")])
        if self.cfl_frac > 1.0:
            raise ConfigError("cfl_frac must be <= 1", [("pde.cfl_frac", "must be <= 1")])


def stable_dt(rhs, lam, n_weights, eps, I, model: GrowthModel, control: StepControl):
    """Largest step allowed by every limit in ``control``."""
    lam_max = float(np.max(lam))
    limits = [control.dt_max]
    if lam_max > 0:
        limits.append(control.cfl_frac / lam_max)
    amax = float(np.max(np.abs(rhs)))
    if amax > 0:
        limits.append(control.du_cap / amax)
    if I > 0:
        rate = abs(float(np.dot(n_weights, rhs))) / (I * eps)
        if rate > 0:
            limits.append(control.mass_cap / rate)
        limits.append(control.feedback_frac * eps / (model.K1 * I))
    return min(limits)


def _apply_floor(v, eps):
    lo = u_floor(eps)
    floored = v < lo
    return np.maximum(v, lo), floored


def pde_step(u: Field, I, dt, eps, model: GrowthModel, kernel_params: KernelParams, plan=None,
             control: StepControl = StepControl(), A_ext=None, backend=None):
    """One explicit Euler step ``u + dt (B_eps[u] + R(., I))`` with the floor applied.

    Raises :class:`StepSizeError` carrying the admissible step if ``dt`` exceeds it.
    """
    if plan is None:
        plan = build_quadrature_plan(u.grid, eps, kernel_params, A_ext=A_ext)
    B, lam = operator_with_rate(u, plan, backend)
    rhs = B + model.rate(u.x, I)
    wn = np.exp(u.values / eps - math.log(max(I, MASS_ZERO))) * u.grid.trapezoid_weights() * I
    limit = stable_dt(rhs, lam, wn, eps, I, model, control)
    if dt > limit * (1 + 1e-12):
        raise StepSizeError(f"dt={dt:.3e} exceeds the stability bound {limit:.3e}", limit)
    v, floored = _apply_floor(u.values + dt * rhs, eps)
    return Field(u.grid, v, u.t + dt, floored)


# ---------------------------------------------------------------- driver

@dataclass
class PDEConfig:
    """Everything needed for one trajectory at a single ``eps``."""

    alpha: float
    eps: float
    model: GrowthModel
    initial: InitialData
    grid: Grid1D
    T: float
    snapshot_dt: float
    kernel_params: Optional[KernelParams] = None
    control: StepControl = field(default_factory=StepControl)
    extension: str = "envelope"
    A_ext: Optional[float] = None
    exp_cap: Optional[float] = None
    interpolation: str = "quadratic"
    check_model: bool = True
    allow_mass_outside: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        errs = []
        if not 0 < self.alpha < 1:
            errs.append(("alpha", "must lie in (0, 1)"))
        if not 0 < self.eps < self.alpha:
            errs.append(("eps", f"need 0 < eps < alpha={self.alpha}"))
        if not self.initial.A < self.alpha:
            errs.append(("initial.A", f"need A < alpha={self.alpha}"))
        if abs(self.initial.eps - self.eps) > 1e-15:
            errs.append(("initial.eps", "must equal eps"))
        if not self.T > 0:
            errs.append(("time.T", "must be > 0"))
        if not self.snapshot_dt > 0:
            errs.append(("time.snapshot_dt", "must be > 0"))
        if not self.allow_mass_outside and not (
            self.model.I_m - 1e-12 <= self.initial.target_mass <= self.model.I_M + 1e-12
        ):
            errs.append(("initial.target_mass", f"must lie in [I_m, I_M] = [{self.model.I_m}, {self.model.I_M}]"))
        if errs:
            raise ConfigError("; ".join(f"{p}: {m}" for p, m in errs), errs)
        if self.kernel_params is None:
            self.kernel_params = KernelParams(self.alpha)
        if self.A_ext is None:
            self.A_ext = self.initial.A


@dataclass
class Trajectory:
    """Mass series (every step) and field snapshots of one run."""

    eps: float
    times: np.ndarray
    I_values: np.ndarray
    dt_history: np.ndarray
    snapshots: list
    log_C0: float
    config: Optional[PDEConfig] = None

    @property
    def snapshot_times(self):
        return np.array([f.t for f in self.snapshots])

    def snapshot_at(self, t):
        ts = self.snapshot_times
        i = int(np.argmin(np.abs(ts - t)))
        if abs(ts[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}; available {ts.tolist()}")
        return self.snapshots[i]

    @property
    def final(self):
        return self.snapshots[-1]


def _next_stop(t, snapshot_dt, T):
    k = math.floor(t / snapshot_dt + 1e-9) + 1
    return min(k * snapshot_dt, T)


def run_pde(config: PDEConfig, initial_field: Field | None = None, max_steps=2_000_000) -> Trajectory:
    """Integrate to ``config.T`` with adaptive explicit Euler steps."""
    model = config.model
    if config.check_model:
        rep = check_assumptions(model)
        if not rep.passed:
            raise ConfigError(f"growth model {model.name!r} fails its assumptions: {rep.measured}",
                              [("model", "assumption check failed")])
    eps = config.eps
    if initial_field is None:
        u, log_C0 = build_initial_data(config.initial, config.grid, alpha=config.alpha)
    else:
        u, log_C0 = initial_field.copy(), math.nan
    plan = build_quadrature_plan(config.grid, eps, config.kernel_params, A_ext=config.A_ext,
                                 extension=config.extension, exp_cap=config.exp_cap,
                                 interpolation=config.interpolation)
    w = config.grid.trapezoid_weights()
    x = config.grid.x

    times, Is, dts = [0.0], [total_mass(u, eps)], [0.0]
    snaps = [u.copy()]
    t = 0.0
    stop = _next_stop(t, config.snapshot_dt, config.T)
    for step in range(max_steps):
        if t >= config.T - 1e-12:
            break
        I = Is[-1]
        B, lam = operator_with_rate(u, plan, config.backend)
        rhs = B + model.rate(x, I)
        wn = np.exp(u.values / eps + np.log(w))
        dt = stable_dt(rhs, lam, wn, eps, I, model, config.control)
        hit = dt >= stop - t - 1e-12
        if hit:
            dt = stop - t
        v, floored = _apply_floor(u.values + dt * rhs, eps)
        t = stop if hit else t + dt
        if not np.all(np.isfinite(v)):
            bad = np.flatnonzero(~np.isfinite(v))
            raise SimulationError(
                f"non-finite field at t={t:.6g}",
                {"t": t, "step": step, "I": I, "dt": dt, "bad_nodes": bad[:20].tolist(),
                 "x": x[bad[:20]].tolist()},
            )
        u = Field(config.grid, v, t, floored)
        I_new = total_mass(u, eps)
        if not (I_new > 0 and math.isfinite(I_new)):
            raise SimulationError(f"mass became {I_new} at t={t:.6g}", {"t": t, "step": step, "I": I_new})
        times.append(t)
        Is.append(I_new)
        dts.append(dt)
        if hit:
            snaps.append(u.copy())
            stop = _next_stop(t, config.snapshot_dt, config.T)
    else:
        raise SimulationError(f"step budget {max_steps} exhausted at t={t:.6g}", {"t": t})
    return Trajectory(eps=eps, times=np.array(times), I_values=np.array(Is), dt_history=np.array(dts),
                      snapshots=snaps, log_C0=log_C0, config=config)


# ---------------------------------------------------------------- density-space cross-check

def _density_operator(n, plan: QuadraturePlan, u_boundary):
    """Linear jump operator ``int sum_nu (n(x + h nu) - n(x)) K dk`` acting on densities."""
    N = n.size
    L, dx, eps = plan.L, plan.dx, plan.eps
    xi = -L + np.arange(N) * dx
    n_ext = np.concatenate([[0.0], n, [0.0]])
    for side, xb in ((0, xi[0] - dx), (-1, xi[-1] + dx)):
        n_ext[side] = _ext_density(np.array([xb]), u_boundary, plan)[0]
    c = (n_ext[2:] - 2 * n + n_ext[:-2]) / dx**2
    near = c * np.sum(plan.near_W * plan.near_h**2)

    # densities at -L + (j + t) dx, j = -N .. 2N - 1, linear in n inside the grid
    j = np.arange(-N, 2 * N)
    t = plan.cell_t[:, None]
    jc = np.clip(j, 0, N - 2)
    inside = (j >= 0) & (j <= N - 2)
    y = -L + (j[None, :] + t) * dx
    Vn = np.where(inside[None, :], (1 - t) * n[jc] + t * n[jc + 1], _ext_density(y, u_boundary, plan))
    idx = np.arange(N)
    m = plan.in_m[:, None]
    ya = Vn[plan.in_q[:, None], N + idx[None, :] + m]
    yb = Vn[plan.in_qm[:, None], N + idx[None, :] - m - 1]
    n_in = plan.n_in
    far = plan.far_w[:n_in] @ (ya + yb)
    h = plan.far_h[n_in:, None]
    far += plan.far_w[n_in:] @ (_ext_density(xi[None, :] + h, u_boundary, plan)
                                + _ext_density(xi[None, :] - h, u_boundary, plan))
    far -= 2 * n * plan.tailw[0]
    return near + far


def _ext_density(y, u_boundary, plan):
    u0, u1, uN2, uN1 = u_boundary
    right = y > 0
    ub = np.where(right, uN1, u0)
    if plan.extension_mode == EXT_ENVELOPE:
        ue = ub - plan.A_ext * np.log((1 + y * y) / (1 + plan.L**2))
    else:
        slope = np.where(right, (uN1 - uN2) / plan.dx, (u0 - u1) / plan.dx)
        ue = ub + slope * (np.abs(y) - plan.L)
    return np.exp(ue / plan.eps)


def density_step_crosscheck(config: PDEConfig, T_short=0.5, dt_frac=0.5, initial_field: Field | None = None):
    """Evolve ``n`` directly with the linear scheme and compare ``eps log n`` with the log-space run.

    Both solvers share the step sequence. Returns a report dict with the sup
    discrepancy of ``u`` (over nodes where ``n`` stays representable) and the
    relative mass discrepancy.
    """
    eps = config.eps
    if eps < 0.2:
        raise ConfigError("density cross-check needs eps >= 0.2", [("eps", "must be >= 0.2")])
    model = config.model
    if initial_field is None:
        u, _ = build_initial_data(config.initial, config.grid, alpha=config.alpha)
    else:
        u = initial_field.copy()
    plan = build_quadrature_plan(config.grid, eps, config.kernel_params, A_ext=config.A_ext,
                                 extension=config.extension, exp_cap=config.exp_cap,
                                 interpolation=config.interpolation)
    w = config.grid.trapezoid_weights()
    x = config.grid.x
    n = np.exp(u.values / eps)
    lam_n = (np.sum(plan.near_W * plan.near_h**2) * 2 / plan.dx**2 + 2 * plan.tailw[0]) / eps

    t, worst_u, worst_mass, truncated = 0.0, 0.0, 0.0, None
    while t < T_short - 1e-12:
        I_u = total_mass(u, eps)
        I_n = float(np.dot(w, n))
        B, lam = operator_with_rate(u, plan, config.backend)
        rhs = B + model.rate(x, I_u)
        dt = dt_frac * min(stable_dt(rhs, lam, np.exp(u.values / eps) * w, eps, I_u, model, config.control),
                           1.0 / lam_n)
        dt = min(dt, T_short - t)
        ln = np.log(np.maximum(n, 1e-300))
        bnd = (eps * ln[0], eps * ln[1], eps * ln[-2], eps * ln[-1])
        dn = (_density_operator(n, plan, bnd) + n * model.rate(x, I_n)) / eps
        n = n + dt * dn
        v, floored = _apply_floor(u.values + dt * rhs, eps)
        u = Field(config.grid, v, t + dt, floored)
        t += dt
        ok = n > 1e-250
        if not ok.all():
            truncated = truncated or t
        if not ok.any():
            break
        diff = np.abs(eps * np.log(n[ok]) - u.values[ok])
        worst_u = max(worst_u, float(diff.max()))
        I_u2, I_n2 = total_mass(u, eps), float(np.dot(w, n))
        worst_mass = max(worst_mass, abs(I_u2 - I_n2) / I_u2)
    return {
        "sup_u_discrepancy": worst_u,
        "max_rel_mass_discrepancy": worst_mass,
        "T": t,
        "underflow_at": truncated,
    }


# ---------------------------------------------------------------- export

def mass_series_csv(traj: Trajectory, header_line: str = "") -> str:
    buf = io.StringIO()
    if header_line:
        buf.write(header_line + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["t", "I", "dt"])
    for t, I, dt in zip(traj.times, traj.I_values, traj.dt_history):
        wr.writerow([repr(float(t)), repr(float(I)), repr(float(dt))])
    return buf.getvalue()


def field_csv(u: Field, eps, header_line: str = "") -> str:
    buf = io.StringIO()
    if header_line:
        buf.write(header_line + "\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["x", "u", "n"])
    n = np.exp(np.minimum(u.values / eps, 700.0))
    for xi, ui, ni in zip(u.x, u.values, n):
        wr.writerow([repr(float(xi)), repr(float(ui)), repr(float(ni))])
    return buf.getvalue()
