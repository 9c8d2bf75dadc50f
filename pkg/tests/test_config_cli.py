import json
import os

import pytest
import yaml

from fatselect import cli
from fatselect.config import DEFAULTS, parse_config
from fatselect.errors import ConfigError


def test_defaults():
    cfg = parse_config("")
    assert cfg.alpha == 0.5 and cfg.eps_list == [0.1]
    assert cfg.grid.N == 1025 and cfg.model.name == "peaked"
    assert cfg.quadrature.interpolation == "quadratic"
    assert parse_config({}).config_hash() == cfg.config_hash()


def test_scalar_eps_and_yaml_float_strings():
    cfg = parse_config("eps: 0.05\nquadrature:\n  tol: 1e-10\n")
    assert cfg.eps_list == [0.05]
    assert cfg.quadrature.tol == 1e-10 and isinstance(cfg.quadrature.tol, float)


def test_hash_ignores_output_dir_only():
    a = parse_config({"output": {"dir": "a"}})
    b = parse_config({"output": {"dir": "b"}})
    c = parse_config({"grid": {"N": 513}})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def _violations(data):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    return dict(info.value.violations)


def test_eps_must_stay_below_alpha():
    v = _violations({"eps": [0.1, 0.6]})
    assert "eps[1]" in v and "alpha" in v["eps[1]"]


def test_A_must_be_strictly_below_alpha():
    v = _violations({"initial": {"A": 0.5}})
    assert "initial.A" in v and "strict" in v["initial.A"]


def test_all_violations_are_reported_together():
    v = _violations({"bogus": 1, "grid": {"N": 10, "L": "wide"}, "hj": {"flux": "roe"}, "eps": [0.7]})
    assert {"bogus", "grid.N", "grid.L"} <= set(v)
    v = _violations({"bogus": 1, "hj": {"flux": "roe"}, "eps": [0.7]})
    assert {"bogus", "hj.flux", "eps[0]"} <= set(v)


@pytest.mark.parametrize("text", ["[1, 2]", "eps: [0.1, 0.1]", "model: {name: logistic}", "alpha: null",
                                  "grid: 5", "initial: {profile: steep}", "example: {t_range: [2, 1]}", "a: [b",
                                  "seed: -1", "seed: 1.5"])
def test_malformed_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_every_default_key_round_trips():
    cfg = parse_config(yaml.safe_dump(parse_config("").canonical()))
    assert cfg.config_hash() == parse_config("").config_hash()
    assert set(cfg.canonical()) == set(DEFAULTS) - {"output"}


SMALL = {"grid": {"N": 257}, "time": {"T": 0.5, "snapshot_dt": 0.25}, "eps": [0.2, 0.1]}


def _write(tmp_path, data):
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p)


def _read_tree(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            path = os.path.join(dirpath, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_bad_config_exits_2_without_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run-pde", "--config", _write(tmp_path, {"eps": [0.9]}), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "config" and err["violations"][0]["path"] == "eps[0]"


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["run-pde", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_subcommand_mismatch_exits_2(tmp_path):
    assert cli.main(["run-pde", "--config", _write(tmp_path, {"subcommand": "variance"})]) == 2


def test_run_pde_is_reproducible(tmp_path):
    cfgp = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run-pde", "--config", cfgp, "--out", str(a)]) == 0
    assert cli.main(["run-pde", "--config", cfgp, "--out", str(b), "--threads", "2"]) == 0
    ta, tb = _read_tree(a), _read_tree(b)
    assert ta == tb
    assert {"report.json", "eps_0.2/mass.csv", "eps_0.1/field_t0.5000.csv"} <= set(ta)
    rep = json.loads(ta["report.json"])
    assert rep["passed"] and rep["meta"]["config_hash"] == parse_config(SMALL).config_hash()
    assert ta["eps_0.1/mass.csv"].decode().startswith(f"# fatselect {rep['meta']['version']} config=")


def test_run_hj(tmp_path):
    out = tmp_path / "hj"
    data = {**SMALL, "time": {"T": 1.0, "snapshot_dt": 0.25}}
    code = cli.main(["run-hj", "--config", _write(tmp_path, data), "--out", str(out)])
    rep = json.loads((out / "report.json").read_text())
    assert code == (0 if rep["passed"] else 1)
    assert abs(rep["xbar_final"]) < 0.1
    lines = (out / "hj" / "field_t1.0000.csv").read_text().splitlines()
    assert lines[1] == "x,u,n"
    assert sum(float(l.split(",")[2]) for l in lines[2:]) >= 1


def test_verify_example(tmp_path):
    out = tmp_path / "ex"
    data = {"example": {"n_t": 5, "n_x": 5}}
    assert cli.main(["verify-example", "--config", _write(tmp_path, data), "--out", str(out)]) == 0
    rep = json.loads((out / "example.json").read_text())
    assert rep["max_residual"] < 1e-6
    assert 3.0 < rep["witness_h"] < 3.02


def test_variance_command(tmp_path):
    out = tmp_path / "var"
    data = {"eps": [0.005, 0.01, 0.02]}
    assert cli.main(["variance", "--config", _write(tmp_path, data), "--out", str(out)]) == 0
    rep = json.loads((out / "variance.json").read_text())
    assert 1.9 <= rep["scaling_exponent"] <= 2.1
    assert (out / "variance.csv").read_text().splitlines()[1] == "eps,variance,variance_over_eps2"


def test_check_theorems_homogeneous(tmp_path):
    out = tmp_path / "th"
    data = {"model": {"name": "homogeneous"}, "grid": {"N": 257}, "eps": [0.1, 0.05],
            "time": {"T": 1.0, "snapshot_dt": 0.5}, "initial": {"target_mass": 0.5}}
    code = cli.main(["check-theorems", "--config", _write(tmp_path, data), "--out", str(out)])
    rep = json.loads((out / "theorems.json").read_text())
    failed = [c["name"] for c in rep["checks"] if not c["passed"]]
    assert code == 0, failed
    names = {c["name"] for c in rep["checks"]}
    assert "logistic_mass[eps=0.05]" in names and "envelope" in names
    assert "max_level" not in names
    assert rep["measurements"][0]["name"] == "subsolution_defect"


def test_convergence_needs_two_eps(tmp_path):
    out = tmp_path / "conv"
    assert cli.execute(parse_config({**SMALL, "eps": [0.1]}), "convergence", str(out)) == 2
    assert not out.exists()


def test_run_error_writes_error_record(tmp_path, monkeypatch):
    from fatselect.errors import SimulationError

    def boom(cfg, art, threads):
        art.add_text("partial.csv", "x\n")
        raise SimulationError("diverged")

    monkeypatch.setitem(cli.COMMANDS, "run-pde", boom)
    out = tmp_path / "err"
    assert cli.execute(parse_config(SMALL), "run-pde", str(out)) == 1
    assert sorted(os.listdir(out)) == ["error.json"]
    rec = json.loads((out / "error.json").read_text())
    assert rec["type"] == "SimulationError" and rec["error"] == "run"
