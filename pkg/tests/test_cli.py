import json
import os
import subprocess
import sys

import numpy as np
import pytest

from modeuler.cli import build_parser, fmt, main, make_config, run
from modeuler.config import load_config, make_coefficient


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_power_of_two_and_lists():
    cfg = load_config(None, ["tau=2^-8", "taus=2^-3,0.0625", "J_list=1,2,4"])
    assert cfg.get("tau") == 2.0**-8
    assert cfg.get("taus") == [0.125, 0.0625]
    assert cfg.get("J_list") == [1, 2, 4]


def test_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown configuration key"):
        load_config(None, ["tua=0.1"])


def test_bad_values_rejected():
    with pytest.raises(ValueError):
        load_config(None, ["J=2.5"])
    with pytest.raises(ValueError):
        load_config(None, ["tau"])


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nJ = 16\ntau = 0.5\n")
    cfg = load_config(str(p), ["tau=0.25"])
    assert cfg.get("J") == 16 and cfg.get("tau") == 0.25


def test_make_config_layers_and_seed():
    cfg = make_config("simulate", overrides=["J=31"], seed=7)
    assert cfg.get("J") == 31 and cfg.get("seed") == 7 and cfg.get("operator") == "fd"
    with pytest.raises(ValueError):
        make_config("simulate", seed=-1)


def test_coefficient_expressions():
    a = make_coefficient("1 + 0.5*sin(pi*x)")
    np.testing.assert_allclose(a(np.array([0.0, 0.5])), [1.0, 1.5])
    assert make_coefficient(None) is None
    with pytest.raises(ValueError):
        make_coefficient("__import__('os')")


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(True) == "true" and fmt(np.int64(3)) == "3"


def test_parser_accepts_all_commands():
    parser = build_parser()
    for cmd in ("simulate", "weak-order", "strong-order", "invariant", "regularity", "gaussian-diag", "ap", "mcmc"):
        args = parser.parse_args([cmd, "--seed", "3", "J=4"])
        assert args.command == cmd and args.overrides == ["J=4"]


def test_simulate_outputs_and_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = dict(overrides=["J=15", "tau=2^-4", "T=0.25", "n_seeds=3"], seed=5)
    sa = run("simulate", out_dir=str(a), **args)
    run("simulate", out_dir=str(b), **args)
    names = sorted(os.listdir(a))
    assert names == ["modified_path.csv", "qv.csv", "qv_seeds.csv", "standard_path.csv", "summary.json"]
    for n in names:
        assert _read(a / n) == _read(b / n), n
    head = (a / "qv.csv").read_text().splitlines()
    assert head[0].startswith("# modeuler v") and "# command=simulate" in head and "# seed=5" in head
    assert any(line.startswith("# config J=15") for line in head)
    assert sa["N"] == 4 and sa["n_seeds"] == 3


def test_simulate_rejects_non_multiple_horizon(tmp_path):
    with pytest.raises(ValueError):
        run("simulate", overrides=["J=7", "tau=0.3", "T=1"], out_dir=str(tmp_path))


def test_main_reports_errors(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path), "bogus=1"]) == 2
    assert "error" in capsys.readouterr().err


def test_small_commands_run(tmp_path):
    s = run("regularity", overrides=["J=4096"], out_dir=str(tmp_path / "r"))
    assert s["modified_alpha0.2_converges"] is not None
    s = run("gaussian-diag", overrides=["J_list=4,16,64"], out_dir=str(tmp_path / "g"))
    assert s["modified_zero"] and s["standard_monotone"]
    s = run("invariant", overrides=["J=4", "n_steps=2000", "burn_in=100"], out_dir=str(tmp_path / "i"))
    assert s["recursion_max_rel_error"] <= 1e-12
    s = run("weak-order", overrides=["J=8", "problem=ou", "taus=0.25,0.125,0.0625"], out_dir=str(tmp_path / "w"))
    assert s["modified_slope"] is not None
    s = run("strong-order", overrides=["J=4", "M=50", "taus=0.25,0.125,0.0625"], out_dir=str(tmp_path / "s"))
    assert "exponential_slope" in s
    s = run("mcmc", overrides=["J=4", "n_steps=50", "burn_in=10", "n_chains=20"], out_dir=str(tmp_path / "m"))
    assert 0 < s["acceptance_rate"] <= 1
    s = run("ap", overrides=["J=7", "M=200", "taus=0.25,0.125,0.0625", "epsilons=1e-1,1e-3"],
            out_dir=str(tmp_path / "a"))
    assert "consistency_slope" in s
    with open(tmp_path / "a" / "summary.json") as fh:
        assert json.load(fh)["command"] == "ap"


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "modeuler", "regularity", "--out", str(tmp_path), "J=1024"],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == 0
    assert json.loads(out.stdout)["command"] == "regularity"
