"""Command-line runner: ``fatselect <subcommand> --config <path> [--out <dir>] [--threads N]``.

Exit codes: 0 when every check passes, 1 when a check fails or a run errors,
2 for an invalid config (nothing is written in that case).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .analytic import ExampleParams, log_bound_violation_search, residual_grid
from .config import SUBCOMMANDS, RunConfig, parse_config
from .diagnostics import (
    a_priori_C2,
    bv_uniformity_check,
    concentration_trend_check,
    convergence_check,
    convergence_study,
    lipschitz_estimate,
    log_growth_check,
    logistic_mass_check,
    mass_bounds_check,
    near_monotone_check,
    shared_envelope_check,
    max_level_check,
    supp_proxy,
)
from .errors import ConfigError, FatSelectError
from .grid import Field, Grid1D
from .hj import (
    HJConfig,
    constraint_check,
    minimality_check,
    run_hj_constrained,
    single_cell_zero_set,
    subsolution_defect,
    supersolution_check,
    trajectory_csv,
    zero_set,
    zero_set_check,
)
from .kernel import KernelParams, mutation_variance
from .model import InitialData, check_assumptions, envelope_shape, limit_initial_data, make_growth_model
from .pde import PDEConfig, StepControl, field_csv, mass_series_csv, nonlocal_exponential_operator, run_pde
from .report import CheckReport, _clean

REPORT_SCHEMA = 1


# ---------------------------------------------------------------- builders

def build_model(cfg: RunConfig):
    m = cfg.model
    return make_growth_model(m.name, **{k: m[k] for k in ("K1", "K2") if m[k] is not None})


def build_grid(cfg: RunConfig):
    return Grid1D(cfg.grid.L, cfg.grid.N)


def build_kernel_params(cfg: RunConfig):
    q = cfg.quadrature
    return KernelParams(cfg.alpha, k_split=q.k_split, n_singular=q.n_singular, n_regular=q.n_regular, tol=q.tol)


def initial_data(cfg: RunConfig, eps, model):
    ini = cfg.initial
    return InitialData(ini.A, ini.C1, eps, cfg.target_mass(model), ini.profile, ini.steep_slope)


def pde_config(cfg: RunConfig, eps):
    model = build_model(cfg)
    return PDEConfig(
        alpha=cfg.alpha, eps=eps, model=model, initial=initial_data(cfg, eps, model), grid=build_grid(cfg),
        T=cfg.time.T, snapshot_dt=cfg.time.snapshot_dt, kernel_params=build_kernel_params(cfg),
        control=StepControl(**cfg.pde), extension=cfg.quadrature.extension, exp_cap=cfg.quadrature.exp_cap,
        interpolation=cfg.quadrature.interpolation,
        # the homogeneous model has I_m = I_M; its logistic oracle starts away from that value
        allow_mass_outside=model.name == "homogeneous",
    )


def hj_config(cfg: RunConfig):
    model = build_model(cfg)
    g = build_grid(cfg)
    init = initial_data(cfg, min(cfg.eps_list), model)
    h = cfg.hj
    return HJConfig(
        grid=g, alpha=cfg.alpha, model=model, T=cfg.time.T, u0=limit_initial_data(init, g).values,
        delta_clamp=h.delta_clamp, cfl_frac=h.cfl_frac, bisection_tol=h.bisection_tol,
        snapshot_dt=h.snapshot_dt or cfg.time.snapshot_dt, flux=h.flux, dt_max=h.dt_max,
        table_points=h.table_points, kernel_params=build_kernel_params(cfg), growth_hull=h.growth_hull,
        seed=cfg.seed,
    )


def _pde_worker(args):
    data, eps = args
    cfg = parse_config(data)
    tr = run_pde(pde_config(cfg, eps))
    # the config holds closures that do not pickle
    return replace(tr, config=None)


def run_sweep(cfg: RunConfig, threads=1):
    """One pde trajectory per ``eps``, in config order; parallel across runs when ``threads > 1``."""
    jobs = [(json.loads(json.dumps(cfg.data)), e) for e in cfg.eps_list]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            return list(pool.map(_pde_worker, jobs))
    return [_pde_worker(j) for j in jobs]


# ---------------------------------------------------------------- output

class Artifacts:
    """Files collected in memory and written only once a subcommand finishes."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.files = {}

    @property
    def header(self):
        return f"# fatselect {__version__} config={self.hash}"

    def meta(self):
        return {"tool": "fatselect", "version": __version__, "config_hash": self.hash, "schema": REPORT_SCHEMA}

    def add_text(self, name, text):
        self.files[name] = text

    def add_json(self, name, payload):
        body = {"meta": self.meta(), **_clean(payload)}
        self.files[name] = json.dumps(body, sort_keys=True, indent=2) + "\n"

    def write(self, out_dir):
        for name in sorted(self.files):
            path = os.path.join(out_dir, name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(self.files[name])


def _eps_tag(eps):
    return f"eps_{eps:g}"


def _add_trajectory(art: Artifacts, tr):
    tag = _eps_tag(tr.eps)
    art.add_text(f"{tag}/mass.csv", mass_series_csv(tr, art.header))
    for f in tr.snapshots:
        art.add_text(f"{tag}/field_t{f.t:.4f}.csv", field_csv(f, tr.eps, art.header))


def _hj_field_csv(f: Field, zero_tol, header):
    # the limit density is carried by the zero set; n marks it with 1
    on = np.zeros(f.values.size)
    on[zero_set(f, zero_tol)] = 1.0
    lines = [header, "x,u,n"]
    lines += [f"{float(x)!r},{float(u)!r},{float(n)!r}" for x, u, n in zip(f.x, f.values, on)]
    return "\n".join(lines) + "\n"


def _add_hj(art: Artifacts, traj, zero_tol):
    art.add_text("hj/trajectory.csv", trajectory_csv(traj, art.header))
    for f in traj.fields:
        art.add_text(f"hj/field_t{f.t:.4f}.csv", _hj_field_csv(f, zero_tol, art.header))


def _summary(checks):
    return {"passed": all(c.passed for c in checks), "checks": [c.to_dict() for c in checks]}


# ---------------------------------------------------------------- subcommands

def _pde_checks(cfg, trajs, model):
    tol = cfg.tolerances
    checks = []
    for tr in trajs:
        if model.name == "homogeneous":
            checks.append(logistic_mass_check(tr, tol.logistic_rel))
        else:
            checks.append(mass_bounds_check(tr, model, tol.mass_slack))
    return checks


def cmd_run_pde(cfg, art, threads):
    model = build_model(cfg)
    trajs = run_sweep(cfg, threads)
    for tr in trajs:
        _add_trajectory(art, tr)
    checks = _pde_checks(cfg, trajs, model)
    runs = [{"eps": tr.eps, "steps": int(tr.times.size - 1), "I_final": float(tr.I_values[-1]),
             "I_min": float(tr.I_values.min()), "I_max": float(tr.I_values.max()), "log_C0": tr.log_C0}
            for tr in trajs]
    payload = {"subcommand": "run-pde", "runs": runs, **_summary(checks)}
    art.add_json("report.json", payload)
    return payload["passed"]


def _hj_checks(cfg, traj, model):
    tol = cfg.tolerances
    checks = [
        constraint_check(traj, max(cfg.hj.bisection_tol, 1e-8)),
        zero_set_check(traj, model, tol.zero_tol, tol.r_tol),
        minimality_check(traj, tol.minimality),
        supersolution_check(traj, model, tol.r_tol, interior=tol.window),
        log_growth_check(traj.fields[-1], cfg.alpha),
    ]
    if model.monotone_in_x:
        checks.append(single_cell_zero_set(traj, 0.5, tol.zero_tol))
    return checks


def cmd_run_hj(cfg, art, threads):
    model = build_model(cfg)
    traj = run_hj_constrained(hj_config(cfg))
    _add_hj(art, traj, cfg.tolerances.zero_tol)
    checks = _hj_checks(cfg, traj, model)
    payload = {"subcommand": "run-hj", "I_final": float(traj.I_values[-1]), "xbar_final": float(traj.xbar[-1]),
               **_summary(checks)}
    art.add_json("report.json", payload)
    return payload["passed"]


def cmd_convergence(cfg, art, threads):
    if len(cfg.eps_list) < 2:
        raise ConfigError("convergence needs at least two eps values", [("eps", "at least two values")])
    trajs = run_sweep(cfg, threads)
    traj = run_hj_constrained(hj_config(cfg))
    for tr in trajs:
        _add_trajectory(art, tr)
    _add_hj(art, traj, cfg.tolerances.zero_tol)
    study = convergence_study(trajs, traj, window=cfg.tolerances.window, I_t_min=0.5)
    check = convergence_check(study, cfg.tolerances.hj_ratio, cfg.tolerances.I_gap)
    payload = {"subcommand": "convergence", "study": study, **_summary([check])}
    art.add_json("convergence.json", payload)
    return payload["passed"]


def cmd_verify_example(cfg, art, threads):
    ex = cfg.example
    params = ExampleParams(ex.C, cfg.alpha)
    worst, at, _ = residual_grid(params, build_kernel_params(cfg), tuple(ex.t_range), tuple(ex.x_range),
                                 ex.n_t, ex.n_x)
    witness = log_bound_violation_search(params, ex.witness_t)
    passed = worst < cfg.tolerances.residual and witness is not None
    payload = {"subcommand": "verify-example", "max_residual": worst, "at": {"t": at[0], "x": at[1]},
               "witness_h": witness, "witness_t": ex.witness_t, "pass": passed, "passed": passed,
               "tolerance": cfg.tolerances.residual}
    art.add_json("example.json", payload)
    return passed


def shared_C2(cfg, model, eps_list):
    """A priori growth constant of the envelope, shared by all ``eps``."""
    g = build_grid(cfg)
    kp = build_kernel_params(cfg)
    ini = cfg.initial
    env = envelope_shape(g.x, ini.A, ini.C1)
    B = [nonlocal_exponential_operator(env, e, kp, g, A_ext=ini.A) for e in eps_list]
    return a_priori_C2(B, model)


def cmd_check_theorems(cfg, art, threads):
    model = build_model(cfg)
    tol = cfg.tolerances
    checks = [check_assumptions(model)]
    trajs = run_sweep(cfg, threads)
    for tr in trajs:
        _add_trajectory(art, tr)
    checks += _pde_checks(cfg, trajs, model)
    finest = min(trajs, key=lambda tr: tr.eps)
    C2 = tol.C2 if tol.C2 is not None else shared_C2(cfg, model, cfg.eps_list)
    checks.append(shared_envelope_check(trajs, cfg.initial.A, cfg.initial.C1, C2, tol.envelope))
    slope = lipschitz_estimate(finest.final)
    checks.append(CheckReport("lipschitz", slope <= 2 * cfg.alpha + tol.slope_margin,
                              {"max_slope": slope, "eps": finest.eps},
                              {"bound": 2 * cfg.alpha + tol.slope_margin}))
    checks.append(log_growth_check(finest.final, cfg.alpha))
    checks.append(supp_proxy(finest.final, finest.eps))
    if model.name != "homogeneous":
        # homogeneous (I_m = I_M): nothing concentrates, there is no uniform BV scale, and on a
        # bounded domain the flat profile never lifts its maximum to 0
        checks.append(max_level_check(finest.final, tol.max_level))
        checks.append(near_monotone_check(finest, 0.5, tol=tol.negative_variation))
        if len(trajs) >= 2:
            checks.append(bv_uniformity_check(trajs, 0.1, cfg.time.T, tol.bv_ratio))
            checks.append(concentration_trend_check(trajs, tol.concentration_window, min_fraction=None))
    traj = run_hj_constrained(hj_config(cfg))
    _add_hj(art, traj, tol.zero_tol)
    checks += _hj_checks(cfg, traj, model)
    if len(trajs) >= 3:
        study = convergence_study(trajs, traj, window=tol.window, I_t_min=0.5)
        checks.append(convergence_check(study, tol.hj_ratio, tol.I_gap))
    measurements = [subsolution_defect(traj, model, tol.r_tol, interior=tol.window).to_dict()]
    payload = {"subcommand": "check-theorems", "model": model.name, "measurements": measurements,
               **_summary(checks)}
    art.add_json("theorems.json", payload)
    return payload["passed"]


def cmd_variance(cfg, art, threads):
    kp = build_kernel_params(cfg)
    eps = sorted(cfg.eps_list)
    v = [mutation_variance(e, params=kp) for e in eps]
    lines = [art.header, "eps,variance,variance_over_eps2"]
    lines += [f"{e!r},{x!r},{x / (e * e)!r}" for e, x in zip(eps, v)]
    art.add_text("variance.csv", "\n".join(lines) + "\n")
    slope = float(np.polyfit(np.log(eps), np.log(v), 1)[0]) if len(eps) >= 2 else math.nan
    passed = bool(len(eps) < 2 or 1.9 <= slope <= 2.1)
    payload = {"subcommand": "variance", "eps": eps, "variance": v, "scaling_exponent": slope, "passed": passed}
    art.add_json("variance.json", payload)
    return passed


COMMANDS = {
    "run-pde": cmd_run_pde,
    "run-hj": cmd_run_hj,
    "convergence": cmd_convergence,
    "verify-example": cmd_verify_example,
    "check-theorems": cmd_check_theorems,
    "variance": cmd_variance,
}


# ---------------------------------------------------------------- entry point

def _error_record(kind, exc):
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        rec["violations"] = [{"path": p, "message": m} for p, m in exc.violations]
    return rec


def execute(cfg: RunConfig, subcommand, out_dir=None, threads=1):
    """Run ``subcommand``; returns the exit code. Artifacts go to ``out_dir`` (or ``output.dir``)."""
    out_dir = out_dir or cfg.output.dir
    art = Artifacts(cfg)
    try:
        passed = COMMANDS[subcommand](cfg, art, threads)
    except ConfigError as exc:
        print(json.dumps(_error_record("config", exc), sort_keys=True), file=sys.stderr)
        return 2
    except FatSelectError as exc:
        art.files = {}
        art.add_json("error.json", _error_record("run", exc))
        art.write(out_dir)
        print(json.dumps(_error_record("run", exc), sort_keys=True), file=sys.stderr)
        return 1
    art.write(out_dir)
    return 0 if passed else 1


def _parser():
    p = argparse.ArgumentParser(prog="fatselect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fatselect {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="YAML config file (omit for all defaults)")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--threads", type=int, default=1, help="parallel runs across eps values")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads < 1:
        print(json.dumps({"error": "config", "message": "--threads must be >= 1"}), file=sys.stderr)
        return 2
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        cfg = parse_config(text)
        if cfg.subcommand is not None and cfg.subcommand != args.subcommand:
            raise ConfigError(f"config is for {cfg.subcommand!r}, not {args.subcommand!r}",
                              [("subcommand", "does not match the command line")])
    except OSError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}, sort_keys=True), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(json.dumps(_error_record("config", exc), sort_keys=True), file=sys.stderr)
        return 2
    code = execute(cfg, args.subcommand, args.out, args.threads)
    print(f"fatselect {args.subcommand}: {'pass' if code == 0 else 'fail' if code == 1 else 'config error'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
