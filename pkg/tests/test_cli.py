import json

import pytest

from bosedyn import runner
from bosedyn.cli import main
from bosedyn.config import load_config, parse_override
from bosedyn.errors import ConfigError

GN_FAST = ["--set", "gn.points=128", "--set", "gn.box_length=44", "--set", "gn.shooting=false"]


def test_minimal_config_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("command: hartree\n")
    cfg = load_config(p)
    assert cfg.command == "hartree" and cfg.section("scaling")["beta"] == 0.5
    assert main(["hartree", "--config", str(p), "--out", str(tmp_path), "--set", "time.t_final=0.1"]) == 0


def test_override_beats_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scaling:\n  N: 50\n")
    cfg = load_config(p, ["scaling.N=70"], command="hartree")
    assert cfg.section("scaling")["N"] == 70


def test_unknown_key_suggests_nearest():
    with pytest.raises(ConfigError, match="did you mean 'scaling.beta'"):
        load_config(overrides=["scaling.betta=1"], command="hartree")


def test_d2_beta_range_rejected():
    with pytest.raises(ConfigError, match="0 < beta < 1"):
        load_config(overrides=["grid.dimension=2", "scaling.beta=1.2"], command="hartree")


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("grid:\n  points: 64\n  box_length: [1,\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


@pytest.mark.parametrize("bad", ["grid.points=48", "time.dt=-1", "sweep.kind=other", "potential.form=cube"])
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=[bad], command="hartree")


def test_exact_runs_limited_to_1d():
    with pytest.raises(ConfigError, match="d = 1"):
        load_config(overrides=["grid.dimension=2"], command="exact")


def test_override_syntax():
    assert parse_override("a.b=[1, 2]") == {"a": {"b": [1, 2]}}
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_run_id_depends_only_on_content():
    a = load_config(overrides=["scaling.N=8"], command="hartree", output_dir="x")
    b = load_config(overrides=["scaling.N=8"], command="hartree", output_dir="y")
    c = load_config(overrides=["scaling.N=9"], command="hartree", output_dir="x")
    assert a.run_id == b.run_id != c.run_id


def test_gn_constant_dispatch(tmp_path):
    rec = runner.dispatch(load_config(overrides=["gn.points=128", "gn.box_length=44"], command="gn-constant",
                                      output_dir=tmp_path))
    assert rec.exit_code == 0 and rec.passed
    summary = json.loads((tmp_path / rec.run_id / "summary.json").read_text())
    assert summary["results"]["a_star"] == pytest.approx(11.7009, abs=2e-3)


def test_registry_is_append_only(tmp_path, monkeypatch):
    reg = tmp_path / "reg.jsonl"
    monkeypatch.setenv("BOSEDYN_REGISTRY", str(reg))
    for _ in range(2):
        assert main(["gn-constant", "--out", str(tmp_path / "runs"), *GN_FAST]) == 0
    lines = [json.loads(x) for x in reg.read_text().splitlines()]
    assert len(lines) == 2 and lines[0]["run_id"] == lines[1]["run_id"]
    assert "started" in lines[0] and "runtime_s" in lines[0]


def test_check_command_passes(tmp_path):
    assert main(["check", "--out", str(tmp_path)]) == 0


def test_plotdata_and_plot(tmp_path, capsys, caplog):
    out = tmp_path / "runs"
    assert main(["sweep", "--out", str(out), "--set", "sweep.N_list=[4,6,8]", "--set", "grid.points=64",
                 "--set", "grid.box_length=6.283185307179586"]) == 0
    run_dir = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["run_dir"]
    assert main(["plotdata", run_dir, "--series", "norm_error_vs_N"]) == 0
    data = (tmp_path / "runs").glob("*/plotdata_norm_error_vs_N.csv")
    assert next(data).read_text().splitlines()[0] == "N,err_norm2"
    assert main(["plot", run_dir, "--series", "norm_error_vs_N", "--png", str(tmp_path / "f.png")]) == 0
    assert (tmp_path / "f.png").read_bytes()[:4] == b"\x89PNG"
    assert main(["plotdata", run_dir, "--series", "nope"]) == 1
    assert "available: norm_error_vs_N" in caplog.text


def test_kernel_scaling_plotdata_columns(tmp_path):
    cfg = load_config(overrides=["sweep.kind=kernel_scaling", "sweep.N_list=[16,64,256]", "scaling.beta=2",
                                 "sweep.t_final=0", "grid.points=128", "grid.box_length=16",
                                 "potential.width=1.0"], command="sweep", output_dir=tmp_path)
    rec = runner.dispatch(cfg)
    path = runner.emit_plotdata(rec, "kernel_scaling")
    assert path.read_text().splitlines()[0] == "N,sobolev_hs2,raw_hs2"


def test_exit_code_validation_failure(tmp_path):
    assert main(["hartree", "--out", str(tmp_path), "--set", "grid.points=100"]) == 1


def test_exit_code_divergence(tmp_path):
    args = ["hartree", "--out", str(tmp_path), "--set", "grid.dimension=2", "--set", "grid.points=64",
            "--set", "grid.box_length=16", "--set", "potential.mass=-23.4", "--set", "scaling.N=100",
            "--set", "time.t_final=1.0"]
    assert main(args) == 2


def test_exit_code_resource_cap(tmp_path):
    assert main(["exact", "--out", str(tmp_path), "--set", "modes.L_modes=14", "--set", "exact.N=30"]) == 3


def test_identical_reruns_are_byte_identical(tmp_path):
    args = ["--set", "time.t_final=0.05"]
    for out in ("a", "b"):
        assert main(["hartree", "--out", str(tmp_path / out), *args]) == 0
    (run_a,) = (tmp_path / "a").iterdir()
    run_b = tmp_path / "b" / run_a.name
    for f in run_a.iterdir():
        assert f.read_bytes() == (run_b / f.name).read_bytes(), f.name
