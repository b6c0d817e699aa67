import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from covmag import __version__
from covmag.cli import COMMANDS, main, run_command
from covmag.config import ConfigError, RunConfig, load_config, parse_config
from covmag.io import read_csv, write_csv
from shared import CLI_CONFIGS as CONFIGS, correlated_t1_datasets


def run(tmp_path, name, text, *extra):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text)
    out = tmp_path / f"out_{name}"
    code = main([name, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def test_parse_units_and_defaults():
    cfg = parse_config("[noise]\ntau_c_s = 1e-7\nduration_s = 1e-5\n[readout]\n")
    assert cfg.block("noise")["tau_c_s"] == 1e-7
    assert cfg.block("noise")["dt_s"] is None
    assert cfg.block("readout") == {"sigma_r1": 1.0, "sigma_r2": 1.0}
    assert cfg.seed == 0 and cfg.threads == "1"
    assert cfg.gamma == pytest.approx(2 * math.pi * 28.025e9)


def test_empty_file_gives_required_block_error(tmp_path):
    cfg = parse_config("")
    assert cfg.blocks == {}
    with pytest.raises(ConfigError) as exc:
        cfg.block("noise")
    assert exc.value.key_path == "noise"
    code, out = run(tmp_path, "noise-gen", "")
    assert code == 2
    assert json.loads((out / "error.json").read_text())["key_path"] == "noise"


@pytest.mark.parametrize("text, path", [
    ("[noise]\ntau_c_ms = 1\n", "noise.tau_c_ms"),
    ("[nosuch]\n", "nosuch"),
    ("[run]\nseeed = 1\n", "run.seeed"),
    ("[run]\nseed = -1\n", "run.seed"),
    ("[run]\nthreads = 0\n", "run.threads"),
    ("[noise]\ntau_c_s = fast\n", "noise.tau_c_s"),
    ("[noise]\ntau_c_s = -1e-7\n", "noise.tau_c_s"),
    ("[noise]\ntau_c_s = nan\n", "noise.tau_c_s"),
    ("[t1]\npi1 = maybe\n", "t1.pi1"),
    ("[readout]\nsigma_r1 = 0.5\n", "readout.sigma_r1"),
    ("[fit.free]\nA = 2, 1\n", "fit.free.A"),
])
def test_invalid_config_names_key(text, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.key_path == path


def test_missing_required_key():
    cfg = parse_config("[noise]\ntau_c_s = 1e-7\n")
    with pytest.raises(ConfigError, match="noise.duration_s"):
        cfg.block("noise")
    assert cfg.block("noise", need=("tau_c_s",))["tau_c_s"] == 1e-7


def test_resolved_config_round_trip():
    for text in CONFIGS.values():
        cfg = parse_config(text)
        assert parse_config(cfg.to_ini()) == cfg
    cfg = parse_config("[fit]\nmodel = single_exp\ndata = a.csv\n[fit.free]\nA = 0, 1\n"
                       "[fit.fixed]\nC = 0.5\n")
    assert parse_config(cfg.to_ini()) == cfg


def test_overrides():
    cfg = parse_config(CONFIGS["noise-gen"]).with_overrides(seed=2**64 - 1, threads="auto")
    assert cfg.seed == 2**64 - 1 and cfg.n_threads >= 1
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=2**64)
    with pytest.raises(ConfigError):
        cfg.with_overrides(threads="many")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.ini")


def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "a.csv", {"x": [0.1, 1 / 3], "flag": [True, False],
                                       "name": ["a", "b"]}, seed=5)
    first = p.read_text().splitlines()[0]
    assert first == f"# covmag {__version__} seed=5"
    cols = read_csv(p)
    assert cols["x"][1] == 1 / 3 and list(cols["flag"]) == [1, 0] and cols["name"] == ["a", "b"]
    with pytest.raises(ValueError):
        write_csv(tmp_path / "b.csv", {"x": [1, 2], "y": [1]}, seed=0)


@pytest.mark.parametrize("name", sorted(CONFIGS))
def test_subcommand_outputs_and_rerun_identity(tmp_path, name):
    code, out = run(tmp_path, name, CONFIGS[name])
    assert code == 0
    files = sorted(p.name for p in out.iterdir())
    assert "summary.json" in files and "resolved_config.ini" in files
    for f in files:
        text = (out / f).read_text()
        if f.endswith((".csv", ".ini")):
            assert text.startswith(f"# covmag {__version__} seed=")
        else:
            assert json.loads(text)["provenance"].startswith(f"covmag {__version__} seed=")
    again = tmp_path / "again"
    shutil.copytree(out, tmp_path / "first")
    assert main([name, "--config", str(tmp_path / f"{name}.ini"), "--out", str(again)]) == 0
    for f in files:
        assert (again / f).read_bytes() == (tmp_path / "first" / f).read_bytes(), f


def test_seed_override_changes_stochastic_output(tmp_path):
    _, a = run(tmp_path, "driven", CONFIGS["driven"])
    code = main(["driven", "--config", str(tmp_path / "driven.ini"), "--out",
                 str(tmp_path / "b"), "--seed", "99"])
    assert code == 0
    assert (a / "driven.csv").read_bytes() != (tmp_path / "b" / "driven.csv").read_bytes()
    assert "seed=99" in (tmp_path / "b" / "driven.csv").read_text().splitlines()[0]


def test_t1_sim_thread_count_does_not_change_output(tmp_path):
    _, a = run(tmp_path, "t1-sim", CONFIGS["t1-sim"], "--threads", "1")
    b = tmp_path / "b"
    assert main(["t1-sim", "--config", str(tmp_path / "t1-sim.ini"), "--out", str(b),
                 "--threads", "3"]) == 0
    for f in ("t1_sim.csv", "t1_curve.csv", "trajectory.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_t1_qme_detuned_curve_period(tmp_path):
    _, out = run(tmp_path, "t1-qme", CONFIGS["t1-qme"])
    curves = json.loads((out / "summary.json").read_text())["curves"]
    assert [c["file"] for c in curves] == ["t1_qme_0.csv", "t1_qme_1.csv", "t1_qme_2.csv"]
    assert 1 / curves[2]["oscillation_Hz"] == pytest.approx(2e-6, rel=0.02)
    assert len(read_csv(out / "t1_qme_2.csv")["t_s"]) == 200


def test_driven_matches_theory_summary(tmp_path):
    _, out = run(tmp_path, "driven", CONFIGS["driven"])
    s = json.loads((out / "summary.json").read_text())
    assert s["reduced_chi2_vs_theory"] < 3
    cols = read_csv(out / "shots.csv")
    assert len(cols["shot"]) == 20000 and cols["config"][0] == "correlation"


def test_sensitivity_slope(tmp_path):
    _, out = run(tmp_path, "sensitivity", CONFIGS["sensitivity"])
    s = json.loads((out / "summary.json").read_text())
    assert s["loglog_slope"] == pytest.approx(-0.25, abs=1e-3)


def test_fit_single_model(tmp_path):
    x = np.linspace(0, 1e-5, 40)
    write_csv(tmp_path / "d.csv", {"x": x, "y": 0.5 * np.exp(-x / 1.96e-6) + 0.02}, seed=0)
    text = f"""
[fit]
model = single_exp
data = {tmp_path / 'd.csv'}
[fit.free]
A = 0, 1
T1 = 1e-7, 1e-5
C = -0.1, 0.1
"""
    code, out = run(tmp_path, "fit", text)
    assert code == 0
    body = json.loads((out / "fit.json").read_text())
    assert body["params"]["T1"][0] == pytest.approx(1.96e-6, rel=1e-6)
    assert body["unit_weights"] is True
    assert set(read_csv(out / "fit_curve.csv")) == {"x", "y", "y_model"}


def test_fit_correlated(tmp_path):
    names = []
    for k, d in enumerate(correlated_t1_datasets()):
        write_csv(tmp_path / f"c{k}.csv", {"t_s": d["t"], "r": d["r"]}, seed=0)
        names.append(str(tmp_path / f"c{k}.csv"))
    text = f"""
[qme]
gamma1_per_s = {1 / 1.96e-6!r}
gamma2_per_s = {1 / 1.77e-6!r}
t_max_s = 1e-5
[fit]
model = correlated_t1
data = {", ".join(names)}
delta1_Hz = 0, -250e3, -500e3
[fit.init]
r0 = 0.4
gd12 = 0.9e5
gd_tot_0 = 2.2e5
gd_tot_1 = 3.1e5
gd_tot_2 = 3.9e5
"""
    code, out = run(tmp_path, "fit", text)
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["r0"] == pytest.approx(0.37, rel=1e-3)
    assert s["gd12_per_s"] == pytest.approx(1e5, rel=1e-3)
    local = json.loads((out / "fit.json").read_text())["local_dephasing"]
    assert local["gd22_per_s"] == pytest.approx(1e5, rel=1e-3)
    assert local["unphysical"] == [False, False, False]


def test_fit_bad_spec_is_config_error(tmp_path):
    code, out = run(tmp_path, "fit", "[fit]\nmodel = single_exp\ndata = x.csv\n[fit.free]\nA = 0, 1\n")
    assert code == 2
    assert json.loads((out / "error.json").read_text())["key_path"] == "fit"


def test_runtime_error_exit_code(tmp_path, capsys):
    code, _ = run(tmp_path, "fit", "[fit]\nmodel = single_exp\ndata = /nonexistent.csv\n"
                  "[fit.free]\nA = 0, 1\nT1 = 1e-7, 1e-5\nC = 0, 1\n")
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "FileNotFoundError" and err["command"] == "fit"


def test_every_subcommand_registered():
    assert set(COMMANDS) == set(CONFIGS) | {"fit"}
    with pytest.raises(ConfigError):
        run_command("nope", RunConfig(), ".")


def test_console_entry_point(tmp_path):
    exe = shutil.which("covmag")
    cmd = [exe] if exe else [sys.executable, "-m", "covmag.cli"]
    proc = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[noise]\ntau_c_ms = 1\n")
    proc = subprocess.run(cmd + ["noise-gen", "--config", str(cfg), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["key_path"] == "noise.tau_c_ms"
