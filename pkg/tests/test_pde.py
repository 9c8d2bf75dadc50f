import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fatselect.errors import ConfigError, DomainError, RegularityError, StepSizeError
from fatselect.grid import Field, Grid1D
from fatselect.kernel import KernelParams, hamiltonian
from fatselect.model import InitialData, build_initial_data, envelope_shape, make_growth_model, u_floor
from fatselect.pde import (
    PDEConfig,
    StepControl,
    Trajectory,
    build_quadrature_plan,
    density_step_crosscheck,
    field_csv,
    mass_series_csv,
    nonlocal_exponential_operator,
    operator_with_rate,
    pde_step,
    run_pde,
    total_mass,
)

KP = KernelParams(0.5)


@pytest.fixture(scope="module")
def grid():
    return Grid1D(10.0, 513)


def bump(x):
    return -0.25 * np.log1p(x**2) + 0.1 * np.exp(-x**2)


@pytest.mark.parametrize("eps", [0.2, 0.05])
@pytest.mark.parametrize("extension", ["envelope", "linear"])
def test_constant_field_is_stationary(grid, eps, extension):
    u = np.full(grid.N, -0.3)
    B = nonlocal_exponential_operator(u, eps, KP, grid, A_ext=0.0, extension=extension)
    assert np.max(np.abs(B)) <= 1e-9


def test_linear_phase_approaches_hamiltonian():
    g = Grid1D(10.0, 2049)
    u = 0.3 * np.clip(g.x, -3, 3)
    vals = [nonlocal_exponential_operator(u, e, KP, g, extension="linear")[g.N // 2] for e in (0.1, 0.05, 0.025)]
    H = hamiltonian(0.3, 0.5)
    gaps = [v - H for v in vals]
    assert all(a > b > 0 for a, b in zip(gaps[:-1], gaps[1:]))
    assert gaps[-1] < 0.03


def test_operator_self_convergence():
    out = []
    for N, ns, nr in ((1025, 32, 8), (2049, 64, 16)):
        g = Grid1D(10.0, N)
        out.append(nonlocal_exponential_operator(bump(g.x), 0.1, KernelParams(0.5, n_singular=ns, n_regular=nr),
                                                 g, A_ext=0.25))
    assert np.max(np.abs(out[0] - out[1][::2])) < 1e-4


def test_linear_interpolation_option_is_first_order():
    # kept for comparison: the unlimited-bias variant converges only at O(dx)
    errs = []
    for N in (513, 1025, 2049):
        g = Grid1D(10.0, N)
        plan = build_quadrature_plan(g, 0.1, KP, A_ext=0.25, interpolation="linear")
        errs.append(operator_with_rate(bump(g.x), plan)[0][g.N // 2])
    d1, d2 = abs(errs[0] - errs[1]), abs(errs[1] - errs[2])
    assert 1.2 < d1 / d2 < 2.5


def test_operator_backends_agree(grid):
    plan = build_quadrature_plan(grid, 0.05, KP, A_ext=0.25)
    u = bump(grid.x) + 0.05 * np.sin(3 * grid.x)
    Bn, ln = operator_with_rate(u, plan, "numba")
    Bp, lp = operator_with_rate(u, plan, "numpy")
    assert np.max(np.abs(Bn - Bp)) <= 1e-10
    assert np.max(np.abs(ln - lp)) <= 1e-8 * np.max(lp)


def test_operator_is_even_for_even_fields(grid):
    B = nonlocal_exponential_operator(bump(grid.x), 0.1, KP, grid, A_ext=0.25)
    assert np.max(np.abs(B - B[::-1])) <= 1e-10


@given(c=st.floats(-2.0, 2.0))
def test_operator_shift_invariant(grid, c):
    plan = build_quadrature_plan(grid, 0.1, KP, A_ext=0.25)
    u = bump(grid.x)
    assert np.allclose(operator_with_rate(u + c, plan)[0], operator_with_rate(u, plan)[0], atol=1e-9)


def test_regularity_guard(grid):
    u = np.where(grid.x < 0, 0.0, -40.0)
    with pytest.raises(RegularityError) as info:
        nonlocal_exponential_operator(u, 0.025, KP, grid, A_ext=0.25)
    assert info.value.max_exponent > 700 or math.isinf(info.value.max_exponent)


def test_operator_rejects_nonfinite(grid):
    u = bump(grid.x)
    u[3] = np.nan
    with pytest.raises(DomainError):
        nonlocal_exponential_operator(u, 0.1, KP, grid, A_ext=0.25)


def test_plan_validation(grid):
    with pytest.raises(ConfigError):
        build_quadrature_plan(grid, 0.1, KP, A_ext=None)
    with pytest.raises(ConfigError):
        build_quadrature_plan(grid, 0.1, KP, A_ext=0.2, extension="cubic")
    with pytest.raises(DomainError):
        build_quadrature_plan(grid, 0.0, KP, A_ext=0.2)


def test_total_mass_constant(grid):
    eps, c = 0.05, 0.7
    u = Field(grid, np.full(grid.N, eps * math.log(c)))
    assert total_mass(u, eps) == pytest.approx(2 * grid.L * c, rel=1e-12)


def test_total_mass_floor_and_shift(grid):
    eps = 0.05
    # the floor density is 1e-150, so the mass is tiny but still represented
    assert total_mass(Field(grid, np.full(grid.N, u_floor(eps))), eps) == pytest.approx(2 * grid.L * 1e-150)
    assert total_mass(Field(grid, np.full(grid.N, 2 * u_floor(eps) - 1.0)), eps) == 0.0
    u = Field(grid, np.full(grid.N, 700 * eps + eps * math.log(1e-300)))
    assert total_mass(u, eps) == pytest.approx(2 * grid.L * math.exp(700) * 1e-300, rel=1e-10)
    with pytest.raises(DomainError):
        total_mass(u, 0.0)


def test_step_keeps_stationary_state(grid):
    eps = 0.1
    hom = make_growth_model("homogeneous")
    u = Field(grid, np.full(grid.N, -0.2))
    out = pde_step(u, 1.0, 1e-3, eps, hom, KP, plan=build_quadrature_plan(grid, eps, KP, A_ext=0.0))
    assert np.max(np.abs(out.values - u.values)) <= 1e-10


@pytest.mark.parametrize("I", [0.3, 0.5, 0.8])
def test_homogeneous_step_matches_logistic_euler(grid, I):
    eps, dt = 0.05, 1e-3
    hom = make_growth_model("homogeneous")
    u = Field(grid, np.full(grid.N, eps * math.log(I / (2 * grid.L))))
    plan = build_quadrature_plan(grid, eps, KP, A_ext=0.0)
    I1 = total_mass(pde_step(u, I, dt, eps, hom, KP, plan=plan, control=StepControl(mass_cap=1.0)), eps)
    euler = I + dt / eps * I * (1 - I)
    assert abs(I1 - euler) <= 2 * (dt / eps) ** 2 * I


def test_step_size_error(grid):
    eps = 0.05
    m = make_growth_model("peaked")
    u, _ = build_initial_data(InitialData(0.25, 1.0, eps, 1.5), grid)
    with pytest.raises(StepSizeError) as info:
        pde_step(u, 1.5, 1.0, eps, m, KP, A_ext=0.25)
    assert 0 < info.value.suggested_dt < 1.0
    pde_step(u, 1.5, info.value.suggested_dt, eps, m, KP, A_ext=0.25)


def test_single_step_stays_below_envelope(grid):
    eps = 0.1
    m = make_growth_model("peaked")
    init = InitialData(0.25, 1.0, eps, 1.5)
    u, log_C0 = build_initial_data(init, grid)
    env = envelope_shape(grid.x, 0.25, 1.0)
    B = nonlocal_exponential_operator(env, eps, KP, grid, A_ext=0.25)
    C2 = float(B.max()) + float(m.rate(grid.x, 0.5 * m.I_m).max())
    dt = 1e-3
    v = pde_step(u, total_mass(u, eps), dt, eps, m, KP, A_ext=0.25)
    assert np.all(v.values <= eps * log_C0 + C2 * dt + env + 1e-12)


def _cfg(model, eps, grid, T=1.0, target=None, **kw):
    m = make_growth_model(model)
    target = 0.5 * (m.I_m + m.I_M) if target is None else target
    return PDEConfig(alpha=0.5, eps=eps, model=m, initial=InitialData(0.25, 1.0, eps, target), grid=grid,
                     T=T, snapshot_dt=0.25, **kw)


def test_logistic_oracle_small_grid():
    g = Grid1D(10.0, 257)
    tr = run_pde(_cfg("homogeneous", 0.05, g, T=1.0, target=0.5, allow_mass_outside=True))
    exact = 1.0 / (1.0 + np.exp(-tr.times / 0.05))
    assert np.max(np.abs(tr.I_values - exact) / exact) < 1e-2


def test_trajectory_invariants(grid):
    tr = run_pde(_cfg("monotone_tanh", 0.1, grid, T=0.5))
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(tr.I_values > 0)
    assert tr.snapshot_times.tolist() == pytest.approx([0.0, 0.25, 0.5])
    assert tr.final is tr.snapshots[-1]
    assert 0.95 <= tr.I_values.min() and tr.I_values.max() <= 3.05
    with pytest.raises(KeyError):
        tr.snapshot_at(0.3)


def test_grid_doubling_final_field():
    out = []
    for N in (513, 1025):
        out.append(run_pde(_cfg("peaked", 0.1, Grid1D(10.0, N))).final.values)
    assert np.max(np.abs(out[0] - out[1][::2])) < 5e-3


def test_config_validation(grid):
    with pytest.raises(ConfigError) as info:
        _cfg("peaked", 0.6, grid)
    assert any(p == "eps" for p, _ in info.value.violations)
    with pytest.raises(ConfigError):
        _cfg("peaked", 0.1, grid, target=5.0)
    with pytest.raises(ConfigError):
        StepControl(cfl_frac=1.5)


def test_density_crosscheck_peaked():
    rep = density_step_crosscheck(_cfg("peaked", 0.2, Grid1D(6.0, 257), T=0.5))
    assert rep["sup_u_discrepancy"] < 1e-2
    assert rep["max_rel_mass_discrepancy"] < 5e-3
    assert rep["underflow_at"] is None


def test_density_crosscheck_flat_start():
    g = Grid1D(6.0, 129)
    cfg = _cfg("homogeneous", 0.25, g, T=0.2, target=1.0)
    u = Field(g, np.full(g.N, 0.25 * math.log(1.0 / (2 * g.L))))
    rep = density_step_crosscheck(cfg, T_short=0.2, initial_field=u)
    # only the far-field extension differs between the two evolutions
    assert rep["sup_u_discrepancy"] < 1e-3


def test_density_crosscheck_needs_moderate_eps(grid):
    with pytest.raises(ConfigError):
        density_step_crosscheck(_cfg("peaked", 0.1, grid))


def test_csv_formats(grid):
    tr = Trajectory(0.1, np.array([0.0, 0.5]), np.array([1.5, 1.6]), np.array([0.0, 0.5]),
                    [Field(grid, np.full(grid.N, -1.0))], 0.0)
    text = mass_series_csv(tr, "# h")
    lines = text.splitlines()
    assert lines[0] == "# h" and lines[1] == "t,I,dt" and len(lines) == 4
    f = field_csv(tr.final, 0.1).splitlines()
    assert f[0] == "x,u,n" and len(f) == grid.N + 1
    x, u, n = map(float, f[1].split(","))
    assert n == pytest.approx(math.exp(-10.0))


def test_initial_data_is_envelope_tight():
    from fatselect.diagnostics import envelope_check

    g = Grid1D(10.0, 513)
    u, log_C0 = build_initial_data(InitialData(0.25, 1.0, 0.1, 1.5), g)
    rep = envelope_check(u, 0.0, 0.1, 0.25, log_C0, 1.0, 0.0, tol=0.0)
    base = 0.1 * log_C0 + envelope_shape(g.x, 0.25, 1.0)
    assert np.max(np.abs(u.values - base)) <= 1e-12
    assert rep.passed
    assert total_mass(u, 0.1) == pytest.approx(1.5, rel=1e-3)
