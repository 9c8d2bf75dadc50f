import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fatselect.errors import ConfigError, DomainError
from fatselect.grid import Grid1D
from fatselect.model import (
    GrowthModel,
    InitialData,
    build_initial_data,
    check_assumptions,
    envelope_shape,
    limit_initial_data,
    make_growth_model,
)
from fatselect.pde import total_mass

NAMES = ["homogeneous", "monotone_tanh", "peaked"]


def test_homogeneous_zero_at_one():
    m = make_growth_model("homogeneous")
    assert np.all(m.rate(np.linspace(-5, 5, 11), 1.0) == 0.0)
    assert (m.I_m, m.I_M) == (1.0, 1.0)


def test_tanh_mass_bounds_from_inf_sup():
    m = make_growth_model("monotone_tanh")
    assert (m.I_m, m.I_M) == (1.0, 3.0)
    x = np.linspace(-30, 30, 601)
    assert m.rate(x, 1.0).min() == pytest.approx(0.0, abs=1e-12)
    assert m.rate(x, 3.0).max() == pytest.approx(0.0, abs=1e-12)


def test_peaked_unique_zero():
    m = make_growth_model("peaked")
    x = np.linspace(-5, 5, 1001)
    r = m.rate(x, 2.0)
    assert r[500] == 0.0 and x[500] == 0.0
    assert np.all(r[np.arange(x.size) != 500] < 0)


def test_unknown_model():
    with pytest.raises(ConfigError):
        make_growth_model("logistic")
    with pytest.raises(ConfigError):
        make_growth_model("peaked", I_m=3.0)


@pytest.mark.parametrize("name", NAMES)
def test_builtin_models_pass_assumptions(name):
    m = make_growth_model(name)
    rep = check_assumptions(m, np.linspace(-20, 20, 401), np.linspace(*m.mass_bracket, 41))
    assert rep.passed, rep.measured


def test_homogeneous_report_values():
    rep = check_assumptions(make_growth_model("homogeneous"))
    assert rep.measured["dRdI_min"] == pytest.approx(-1.0, abs=1e-6)
    assert rep.notes


def test_tanh_strictly_decreasing():
    m = make_growth_model("monotone_tanh")
    rep = check_assumptions(m)
    assert rep.measured["monotone"]


def test_broken_model_fails_R2():
    bad = GrowthModel("broken", lambda x, I: 1.0 + I + 0 * x, lambda x, I: np.ones_like(x), 1.0, 10.0, 1.0, 2.0)
    rep = check_assumptions(bad)
    assert not rep.passed and not rep.measured["R2"]


def test_check_assumptions_needs_samples():
    with pytest.raises(DomainError):
        check_assumptions(make_growth_model("peaked"), x_samples=[])


@pytest.fixture(scope="module")
def grid():
    return Grid1D(10.0, 513)


@pytest.mark.parametrize("eps", [0.2, 0.1, 0.05])
def test_initial_mass_and_envelope(grid, eps):
    init = InitialData(0.25, 1.0, eps, 1.5)
    u, log_C0 = build_initial_data(init, grid, alpha=0.5)
    assert total_mass(u, eps) == pytest.approx(1.5, rel=1e-3)
    env = eps * log_C0 + envelope_shape(grid.x, 0.25, 1.0)
    assert np.max(np.abs(u.values - env)) <= 1e-12
    assert np.array_equal(u.values, u.values[::-1])
    assert grid.x[np.argmax(u.values)] == 0.0


@given(target=st.floats(1.0, 2.0), C1=st.floats(0.5, 2.0))
def test_initial_mass_within_bounds(grid, target, C1):
    u, _ = build_initial_data(InitialData(0.25, C1, 0.1, target), grid)
    assert 1.0 - 1e-3 <= total_mass(u, 0.1) <= 2.0 + 1e-3


def test_initial_data_rejects_A_at_alpha(grid):
    with pytest.raises(ConfigError):
        build_initial_data(InitialData(0.5, 1.0, 0.1, 1.5), grid, alpha=0.5)


def test_initial_data_mass_outside_grid():
    # A/eps close to 1/2 puts most of the envelope mass in the tails
    with pytest.raises(DomainError):
        build_initial_data(InitialData(0.06, 1.0, 0.1, 1.5), Grid1D(2.0, 129))


def test_steep_profile_slope(grid):
    init = InitialData(0.25, 1.0, 0.05, 1.5, profile="steep", steep_slope=1.5)
    u, log_C0 = build_initial_data(init, grid)
    slope = np.max(np.abs(np.diff(u.values))) / grid.dx
    assert slope == pytest.approx(1.5, rel=2e-3)
    assert np.all(u.values <= 0.05 * log_C0 + envelope_shape(grid.x, 0.25, 1.0) + 1e-12)


def test_initial_data_validation():
    with pytest.raises(ConfigError):
        InitialData(0.25, 1.0, 0.1, 1.5, profile="steep")
    with pytest.raises(ConfigError):
        InitialData(0.25, -1.0, 0.1, 1.5)


def test_limit_initial_data_normalised(grid):
    u = limit_initial_data(InitialData(0.25, 1.0, 0.05, 1.5), grid)
    assert u.values.max() == 0.0
