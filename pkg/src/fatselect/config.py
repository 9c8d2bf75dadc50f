"""Run configuration: YAML schema, validation and a stable hash.

Every key is optional. A minimal config is ``{}``; see ``DEFAULTS`` for the
full schema. Validation collects all violations before raising, each as a
``(dotted.path, message)`` pair.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .model import BUILTIN_MODELS

SUBCOMMANDS = ("run-pde", "run-hj", "convergence", "verify-example", "check-theorems", "variance")

DEFAULTS = {
    "subcommand": None,
    "alpha": 0.5,
    "eps": [0.1],
    "model": {"name": "peaked", "K1": None, "K2": None},
    "grid": {"L": 10.0, "N": 1025},
    "initial": {"A": 0.25, "C1": 1.0, "target_mass": None, "profile": "envelope", "steep_slope": None},
    "time": {"T": 2.0, "snapshot_dt": 0.25},
    "quadrature": {"k_split": 1.0, "n_singular": 32, "n_regular": 8, "tol": 1e-10,
                   "extension": "envelope", "exp_cap": None,
                   "interpolation": "quadratic"},
    "hj": {"flux": "godunov", "cfl_frac": 0.9, "delta_clamp": None, "bisection_tol": 1e-8,
           "dt_max": 0.01, "growth_hull": True, "table_points": 4001, "snapshot_dt": None},
    "pde": {"cfl_frac": 0.9, "du_cap": 0.1, "mass_cap": 0.005, "feedback_frac": 0.5, "dt_max": 0.05},
    "tolerances": {
        "residual": 1e-6, "mass_slack": 0.05, "envelope": 1e-3, "C2": None, "bv_ratio": 1.5,
        "negative_variation": 1e-2, "zero_tol": 1e-6, "r_tol": 5e-2, "minimality": 5e-3,
        "window": 3.0, "concentration_window": 0.5, "min_fraction": 0.9, "logistic_rel": 1e-2,
        "hj_ratio": 3.0, "slope_margin": 0.1, "max_level": 0.1,
        "I_gap": 0.05,
    },
    "example": {"C": 0.8, "t_range": [0.0, 2.0], "x_range": [-5.0, 5.0], "n_t": 41, "n_x": 41,
                "witness_t": 4.0},
    "output": {"dir": "out"},
    "seed": 0,
}

_NULLABLE = {
    ("subcommand",), ("model", "K1"), ("model", "K2"), ("initial", "target_mass"), ("initial", "steep_slope"),
    ("quadrature", "exp_cap"), ("hj", "delta_clamp"), ("hj", "snapshot_dt"), ("tolerances", "C2"),
}


class Section(dict):
    """Read-only dict with attribute access."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError:
            raise AttributeError(name) from None


def _wrap(d):
    return Section({k: _wrap(v) if isinstance(v, dict) else v for k, v in d.items()})


@dataclass(frozen=True)
class RunConfig:
    data: Section

    def __getattr__(self, name):
        if name == "data":
            raise AttributeError(name)
        return getattr(self.data, name)

    @property
    def eps_list(self):
        return list(self.data.eps)

    def target_mass(self, model):
        m = self.data.initial.target_mass
        return 0.5 * (model.I_m + model.I_M) if m is None else m

    def canonical(self):
        """Plain nested dict without the output location (which does not change results)."""
        d = json.loads(json.dumps(self.data))
        d.pop("output", None)
        return d

    def config_hash(self):
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _type_ok(value, default):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(defaults, given, path, errs):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        p = path + (str(key),)
        dotted = ".".join(p)
        if key not in defaults:
            errs.append((dotted, "unknown key"))
            continue
        d = defaults[key]
        if isinstance(d, dict):
            if not isinstance(value, dict):
                errs.append((dotted, "expected a mapping"))
                continue
            out[key] = _merge(d, value, p, errs)
        elif value is None:
            if p not in _NULLABLE:
                errs.append((dotted, "may not be null"))
            else:
                out[key] = None
        elif d is None:
            out[key] = _as_float(value) if isinstance(value, str) else value
        elif isinstance(d, float) and isinstance(value, str) and _as_float(value) is not value:
            # YAML 1.1 reads 1e-10 (no dot) as a string
            out[key] = _as_float(value)
        elif not _type_ok(value, d):
            errs.append((dotted, f"expected {type(d).__name__}, got {type(value).__name__}"))
        else:
            out[key] = float(value) if isinstance(d, float) else value
    return out


def _as_float(text):
    try:
        return float(text)
    except ValueError:
        return text


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _constraints(c, errs):
    alpha = c["alpha"]
    if not 0 < alpha < 1:
        errs.append(("alpha", "must lie in (0, 1)"))
    eps = c["eps"]
    if not eps or not all(_num(e) for e in eps):
        errs.append(("eps", "must be a nonempty list of numbers"))
    else:
        for i, e in enumerate(eps):
            if not 0 < e < alpha:
                errs.append((f"eps[{i}]", f"need 0 < eps < alpha (got {e}, alpha={alpha})"))
        if len(set(eps)) != len(eps):
            errs.append(("eps", "values must be distinct"))
    sub = c["subcommand"]
    if sub is not None and sub not in SUBCOMMANDS:
        errs.append(("subcommand", f"one of {list(SUBCOMMANDS)}"))
    m = c["model"]
    if m["name"] not in BUILTIN_MODELS:
        errs.append(("model.name", f"one of {sorted(BUILTIN_MODELS)}"))
    for k in ("K1", "K2"):
        if m[k] is not None and not (_num(m[k]) and m[k] > 0):
            errs.append((f"model.{k}", "must be a positive number"))
    g = c["grid"]
    if not g["L"] > 0:
        errs.append(("grid.L", "must be > 0"))
    if g["N"] < 64:
        errs.append(("grid.N", "must be >= 64"))
    ini = c["initial"]
    if not ini["A"] > 0:
        errs.append(("initial.A", "must be > 0"))
    elif not ini["A"] < alpha:
        errs.append(("initial.A", f"need A < alpha (strict), got A={ini['A']}, alpha={alpha}"))
    if not ini["C1"] > 0:
        errs.append(("initial.C1", "must be > 0"))
    if ini["target_mass"] is not None and not (_num(ini["target_mass"]) and ini["target_mass"] > 0):
        errs.append(("initial.target_mass", "must be a positive number"))
    if ini["profile"] not in ("envelope", "steep"):
        errs.append(("initial.profile", "one of ['envelope', 'steep']"))
    elif ini["profile"] == "steep" and not (_num(ini["steep_slope"]) and ini["steep_slope"] > 0):
        errs.append(("initial.steep_slope", "required (> 0) for the steep profile"))
    tm = c["time"]
    for k in ("T", "snapshot_dt"):
        if not tm[k] > 0:
            errs.append((f"time.{k}", "must be > 0"))
    q = c["quadrature"]
    if q["extension"] not in ("envelope", "linear"):
        errs.append(("quadrature.extension", "one of ['envelope', 'linear']"))
    if q["interpolation"] not in ("quadratic", "linear"):
        errs.append(("quadrature.interpolation", "one of ['quadratic', 'linear']"))
    if not 0 < q["k_split"]:
        errs.append(("quadrature.k_split", "must be > 0"))
    for k in ("n_singular", "n_regular"):
        if q[k] < 8:
            errs.append((f"quadrature.{k}", "must be >= 8"))
    if not q["tol"] > 0:
        errs.append(("quadrature.tol", "must be > 0"))
    h = c["hj"]
    if h["flux"] not in ("godunov", "llf"):
        errs.append(("hj.flux", "one of ['godunov', 'llf']"))
    if not 0 < h["cfl_frac"] <= 1:
        errs.append(("hj.cfl_frac", "must lie in (0, 1]"))
    if h["delta_clamp"] is not None and not (_num(h["delta_clamp"]) and 0 < h["delta_clamp"] < 2 * alpha):
        errs.append(("hj.delta_clamp", "must lie in (0, 2 alpha)"))
    for k in ("bisection_tol", "dt_max"):
        if not h[k] > 0:
            errs.append((f"hj.{k}", "must be > 0"))
    if h["table_points"] < 101:
        errs.append(("hj.table_points", "must be >= 101"))
    p = c["pde"]
    for k, v in p.items():
        if not v > 0:
            errs.append((f"pde.{k}", "must be > 0"))
    if p["cfl_frac"] > 1:
        errs.append(("pde.cfl_frac", "must be <= 1"))
    for k, v in c["tolerances"].items():
        if v is not None and not (_num(v) and v > 0):
            errs.append((f"tolerances.{k}", "must be a positive number"))
    ex = c["example"]
    if not (_num(ex["C"]) and 0 < ex["C"] < 2 * alpha):
        errs.append(("example.C", f"need 0 < C < 2 alpha = {2 * alpha}"))
    for k in ("t_range", "x_range"):
        r = ex[k]
        if not (len(r) == 2 and all(_num(v) for v in r) and r[0] < r[1]):
            errs.append((f"example.{k}", "must be [low, high] with low < high"))
    if ex["t_range"] and _num(ex["t_range"][0]) and ex["t_range"][0] < 0:
        errs.append(("example.t_range", "times must be >= 0"))
    if ex["n_t"] < 2 or ex["n_x"] < 2:
        errs.append(("example.n_t", "grid sizes must be >= 2"))
    if not ex["witness_t"] > 0:
        errs.append(("example.witness_t", "must be > 0"))
    if c["seed"] < 0:
        errs.append(("seed", "must be >= 0"))
    if not isinstance(c["output"]["dir"], str) or not c["output"]["dir"]:
        errs.append(("output.dir", "must be a nonempty path"))


def parse_config(text, overrides=None):
    """Parse YAML ``text`` (or an already loaded mapping) into a validated :class:`RunConfig`.

    ``overrides`` (a dict merged on top, e.g. from command-line flags) is
    validated with the same rules. Raises :class:`ConfigError` listing every
    violation.
    """
    if isinstance(text, dict):
        given = copy.deepcopy(text)
    else:
        try:
            given = yaml.safe_load(text) if text and text.strip() else {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}", [("<root>", "parse error")]) from None
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError("config must be a mapping", [("<root>", "expected a mapping")])
    if isinstance(given.get("eps"), (int, float)) and not isinstance(given.get("eps"), bool):
        given = {**given, "eps": [given["eps"]]}
    errs = []
    merged = _merge(DEFAULTS, given, (), errs)
    if overrides:
        merged = _merge(merged, overrides, (), errs)
    if "eps" in merged:
        merged["eps"] = [_as_float(e) if isinstance(e, str) else e for e in merged["eps"]]
        merged["eps"] = [float(e) if _num(e) else e for e in merged["eps"]]
    # rejected keys keep their defaults, so the remaining constraints still apply
    _constraints(merged, errs)
    if errs:
        raise ConfigError("invalid config: " + "; ".join(f"{p}: {m}" for p, m in errs), errs)
    return RunConfig(_wrap(merged))
