import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fatselect.diagnostics import (
    a_priori_C2,
    bv_seminorm,
    bv_uniformity_check,
    concentration_metrics,
    concentration_trend_check,
    convergence_check,
    convergence_study,
    envelope_check,
    lipschitz_estimate,
    log_growth_check,
    logistic_mass,
    logistic_mass_check,
    mass_bounds_check,
    near_monotone_check,
    negative_variation,
    shared_envelope_check,
    supp_proxy,
)
from fatselect.errors import ConfigError, DiagnosticError
from fatselect.grid import Field, Grid1D
from fatselect.model import envelope_shape, make_growth_model
from fatselect.pde import Trajectory
from fatselect.report import CheckReport, combine

G = Grid1D(10.0, 201)


def traj(eps, times, I, fields=None, log_C0=0.0):
    times = np.asarray(times, float)
    fields = fields or [Field(G, -0.25 * np.log1p(G.x**2), 0.0)]
    return Trajectory(eps, times, np.asarray(I, float), np.diff(times, prepend=0.0), fields, log_C0)


def test_lipschitz_of_linear_field():
    u = Field(G, 0.3 * G.x)
    assert lipschitz_estimate(u) == pytest.approx(0.3)
    floored = np.zeros(G.N, bool)
    floored[1:] = True
    with pytest.raises(DiagnosticError):
        lipschitz_estimate(Field(G, 0.3 * G.x, 0.0, floored))


def test_log_growth_accepts_the_cone():
    u = Field(G, -1.0 * np.log1p(np.abs(G.x)))
    rep = log_growth_check(u, 0.5, slack=0.0, tol=1e-12)
    assert rep.passed and rep.measured["witness_h"] is None


def test_log_growth_witness_for_steeper_decay():
    u = Field(G, -0.6 * (np.sqrt(1 + G.x**2) - 1))
    rep = log_growth_check(u, 0.5, slack=0.0, anchor=0.0)
    assert not rep.passed
    # 0.6 (sqrt(1+h^2) - 1) = log(1+h) first holds near h = 3.5; nodes sit 0.1 apart
    h = rep.measured["anchored_witness_h"]
    assert 3.3 < h < 3.7
    assert rep.measured["witness_h"] <= h + 1e-12


def test_log_growth_ignores_floored_nodes():
    v = np.zeros(G.N)
    v[:50] = -100.0
    floored = np.zeros(G.N, bool)
    floored[:50] = True
    assert log_growth_check(Field(G, v, 0.0, floored), 0.5).passed
    assert not log_growth_check(Field(G, v), 0.5).passed


def test_envelope_check_and_smallest_C2():
    u = Field(G, envelope_shape(G.x, 0.25, 1.0) + 0.2)
    rep = envelope_check(u, 1.0, 0.1, 0.25, 0.0, 1.0, 0.3)
    assert rep.passed and rep.measured["smallest_C2"] == pytest.approx(0.2)
    assert not envelope_check(u, 1.0, 0.1, 0.25, 0.0, 1.0, 0.1).passed
    assert envelope_check(u, 0.0, 0.1, 0.25, 0.0, 1.0, 0.1).measured["smallest_C2"] == math.inf


def test_a_priori_C2():
    m = make_growth_model("peaked")
    # sup R(., I_m/2) = 2 - 0.5
    assert a_priori_C2([np.array([0.1, 0.3]), np.array([0.2])], m) == pytest.approx(1.8)


def test_bv_and_negative_variation():
    t = np.linspace(0, 1, 11)
    I = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0], float)
    assert bv_seminorm(I, 0.0, 1.0, t) == pytest.approx(10)
    assert negative_variation(I, 0.0, 1.0, t) == pytest.approx(5)
    assert bv_seminorm(I, 0.25, 0.55, t) == pytest.approx(2)
    with pytest.raises(DiagnosticError):
        bv_seminorm(I, 0.5, 2.0, t)
    with pytest.raises(DiagnosticError):
        bv_seminorm(I, 0.5, 0.5, t)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=50))
def test_variation_identities(vals):
    I = np.array(vals)
    t = np.arange(I.size, dtype=float)
    T = t[-1]
    tv, neg = bv_seminorm(I, 0, T, t), negative_variation(I, 0, T, t)
    assert 0 <= neg <= tv + 1e-12
    # positive minus negative variation is the net change
    assert (tv - neg) - neg == pytest.approx(I[-1] - I[0], abs=1e-9)


def test_logistic_mass_check():
    t = np.linspace(0, 1, 51)
    good = traj(0.1, t, logistic_mass(t, 0.1, 0.4))
    assert logistic_mass(0.0, 0.1, 0.4) == pytest.approx(0.4)
    assert logistic_mass_check(good).passed
    bad = traj(0.1, t, logistic_mass(t, 0.1, 0.4) * 1.05)
    assert not logistic_mass_check(bad).passed


def test_mass_bounds():
    m = make_growth_model("peaked")
    t = np.linspace(0, 1, 5)
    assert mass_bounds_check(traj(0.1, t, [1.5, 1.6, 1.9, 2.04, 2.0]), m).passed
    rep = mass_bounds_check(traj(0.1, t, [1.5, 1.6, 2.2, 2.0, 2.0]), m)
    assert not rep.passed and rep.worst["t"] == pytest.approx(0.5)
    assert mass_bounds_check(traj(0.1, t, [1.5, 1.6, 1.7, 2.0, 2.2]), m, t_max=0.5).passed


def test_bv_uniformity_and_near_monotone():
    t = np.linspace(0, 1, 11)
    a = traj(0.2, t, np.linspace(1, 2, 11))
    b = traj(0.1, t, np.linspace(1, 2.2, 11))
    rep = bv_uniformity_check([b, a], t0=0.0)
    assert rep.passed and rep.measured["eps"] == [0.2, 0.1]
    c = traj(0.05, t, np.linspace(1, 4, 11))
    assert not bv_uniformity_check([a, b, c], t0=0.0).passed
    assert near_monotone_check(a, t0=0.0).passed
    wiggle = traj(0.1, t, [1, 2, 1.9, 2, 2, 2, 2, 2, 2, 2, 2])
    assert not near_monotone_check(wiggle, t0=0.0, tol=0.05).passed
    assert near_monotone_check(wiggle, t0=0.3, tol=0.05).passed


def test_concentration_of_gaussian():
    eps, s = 0.05, 0.5
    # n ~ exp(-x^2 / (2 s^2 eps)): standard deviation sqrt(eps) s
    g = Grid1D(2.0, 4001)
    u = Field(g, -g.x**2 / (2 * s * s))
    r = concentration_metrics(u, eps, window=0.2)
    sd = math.sqrt(eps) * s
    assert r.xbar == 0.0 and r.center_of_mass == pytest.approx(0.0, abs=1e-12)
    assert r.mass_fraction == pytest.approx(math.erf(0.2 / (sd * math.sqrt(2))), abs=2e-3)
    assert r.width == pytest.approx(2 * 0.6745 * sd, rel=1e-2)


def test_concentration_trend():
    runs = [traj(e, [0.0], [1.0], [Field(G, -G.x**2)]) for e in (0.2, 0.1, 0.05)]
    rep = concentration_trend_check(runs, window=0.5, min_fraction=0.9)
    assert rep.measured["fraction_increasing"] and rep.measured["width_shrinking"]
    assert rep.passed == (rep.measured["fraction_at_eps"] >= 0.9)
    assert concentration_trend_check(runs, window=0.5, min_fraction=None).passed
    assert not concentration_trend_check(runs, window=0.5, min_fraction=1.0).passed


def test_supp_proxy():
    assert supp_proxy(Field(G, -G.x**2), 0.05).passed
    assert not supp_proxy(Field(G, -G.x**2 - 1.0), 0.05).passed


def _sweep(gaps):
    base = -0.25 * np.log1p(G.x**2)
    runs, off = [], 0.0
    for e, g in zip((0.2, 0.1, 0.05, 0.025), [0.0] + list(gaps)):
        off += g
        fields = [Field(G, base, 0.0), Field(G, base + off, 1.0)]
        runs.append(traj(e, [0.0, 1.0], [1.0, 1.5], fields))
    return runs


def test_convergence_study_gaps():
    study = convergence_study(_sweep([0.4, 0.2, 0.1]), window=3.0)
    assert study["cauchy_gaps"] == pytest.approx([0.4, 0.2, 0.1])
    assert study["empirical_orders"] == pytest.approx([1.0, 1.0])
    assert study["times"] == [1.0]
    assert convergence_check(study).passed
    assert not convergence_check(convergence_study(_sweep([0.2, 0.2, 0.1]))).passed


def test_convergence_study_input_errors():
    runs = _sweep([0.1, 0.1, 0.1])
    with pytest.raises(ConfigError):
        convergence_study(runs[:1])
    other = Grid1D(10.0, 101)
    odd = Trajectory(0.01, np.array([0.0]), np.array([1.0]), np.array([0.0]), [Field(other, np.zeros(101))], 0.0)
    with pytest.raises(ConfigError):
        convergence_study(runs + [odd])


def test_shared_envelope():
    f = Field(G, envelope_shape(G.x, 0.25, 1.0) + 0.1, 1.0)
    runs = [traj(0.1, [0.0, 1.0], [1, 1], [Field(G, envelope_shape(G.x, 0.25, 1.0), 0.0), f])]
    rep = shared_envelope_check(runs, 0.25, 1.0, 0.2)
    assert rep.passed and rep.measured["smallest_C2"] == pytest.approx(0.1)
    assert not shared_envelope_check(runs, 0.25, 1.0, 0.05).passed


def test_report_serialisation():
    r = CheckReport("x", True, {"a": math.inf, "b": np.float64(1.5), "c": np.array([1, 2])})
    d = r.to_dict()
    assert d["measured"] == {"a": "inf", "b": 1.5, "c": [1, 2]}
    assert r.line().startswith("[PASS] x:")
    agg = combine("all", [r, CheckReport("y", False, worst={"t": 1})])
    assert not agg and agg.worst == {"y": {"t": 1}}


def test_max_level_check():
    from fatselect.diagnostics import max_level_check

    assert max_level_check(Field(G, -G.x**2 + 0.05)).passed
    rep = max_level_check(Field(G, -G.x**2 - 0.3))
    assert not rep.passed and rep.measured["max_u"] == pytest.approx(-0.3)
    assert rep.notes == ["empirical tolerance"]


def test_variation_of_monotone_and_constant_series():
    t = np.linspace(0, 2, 41)
    I = 1 + t**2
    assert bv_seminorm(I, 0.5, 2.0, t) == pytest.approx(I[-1] - I[10])
    assert bv_seminorm(np.full(41, 3.0), 0.0, 2.0, t) == 0.0


def test_window_fraction_grows_to_one():
    u = Field(G, -G.x**2)
    fr = [concentration_metrics(u, 0.1, w).mass_fraction for w in (0.1, 0.3, 1.0, 3.0)]
    assert all(b > a for a, b in zip(fr[:-1], fr[1:]))
    assert fr[-1] == pytest.approx(1.0, abs=1e-12)


def test_envelope_shape_passes_growth_bound():
    u = Field(G, envelope_shape(G.x, 0.25, 1.0))
    rep = log_growth_check(u, 0.5, slack=0.0, tol=0.0)
    assert rep.passed and rep.measured["worst_margin"] > 0


def test_envelope_fails_with_zero_C2_when_max_grows():
    f = Field(G, envelope_shape(G.x, 0.25, 1.0) + 0.05, 1.0)
    assert not envelope_check(f, 1.0, 0.1, 0.25, 0.0, 1.0, 0.0).passed


def test_identical_runs_have_zero_distance():
    base = Field(G, -0.25 * np.log1p(G.x**2), 0.0)
    later = Field(G, -0.3 * np.log1p(G.x**2), 1.0)
    a = traj(0.1, [0.0, 1.0], [1, 1], [base, later])
    b = traj(0.05, [0.0, 1.0], [1, 1], [base, later])
    assert convergence_study([a, b])["cauchy_gaps"] == [0.0]
