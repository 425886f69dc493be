"""Configuration layering: defaults, INI file, environment, overrides, echo."""

import numpy as np
import pytest

from spdelab.config import ConfigError, echo_config, load_config
from spdelab.model import ZeroPathView


def test_defaults_without_file():
    cfg = load_config(env={})
    assert cfg.grid.n_points == 128
    assert cfg.grid.c_stab == 0.5
    assert cfg.run.master_seed == 0
    assert cfg.run.store == "all"
    assert cfg.norms.m == 2
    assert cfg.cascade.rho == 0.5
    assert cfg.cascade.radii == (0.5, 0.25, 0.125)
    assert cfg.verify.grids == (64, 128)
    assert cfg.output.format == "csv"
    spec = cfg.build_spec()
    assert spec.name == "constant"
    assert spec.modes == 1
    assert spec.horizon == 1.0


def test_ini_file_sets_sections_and_problem(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[problem]\n"
        "family = trig\n"
        "f1 = 2.5\n"
        "kf = 3\n"
        "horizon = 0.5\n"
        "modes = 2\n"
        "K = 20.0\n"
        "\n"
        "[grid]\n"
        "n_points = 96\n"
        "\n"
        "[run]\n"
        "master_seed = 11\n"
        "store = 16\n"
        "\n"
        "[verify]\n"
        "grids = 32,64,128\n"
        "scalars = 0.5,4.0\n")
    cfg = load_config(str(ini), env={})
    assert cfg.grid.n_points == 96
    assert cfg.run.master_seed == 11
    assert cfg.run.store == "16"
    assert cfg.verify.grids == (32, 64, 128)
    assert cfg.verify.scalars == (0.5, 4.0)
    spec = cfg.build_spec()
    assert spec.name == "trig"
    assert spec.modes == 2
    assert spec.horizon == 0.5
    assert spec.bounds.K == 20.0


def test_missing_file_is_an_error():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.ini", env={})


def test_unknown_section_named(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[grids]\nn_points = 64\n")
    with pytest.raises(ConfigError, match=r"unknown section \[grids\]"):
        load_config(str(ini), env={})


def test_unknown_key_named_with_candidates(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[grid]\nn_pts = 64\n")
    with pytest.raises(ConfigError, match="unknown key 'n_pts'.*n_points"):
        load_config(str(ini), env={})


def test_bad_value_reports_key_and_section(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[grid]\nn_points = many\n")
    with pytest.raises(ConfigError, match=r"'n_points' in section \[grid\]"):
        load_config(str(ini), env={})


def test_environment_overrides_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nmaster_seed = 1\n\n[problem]\nfamily = constant\n")
    env = {
        "SPDELAB_RUN_MASTER_SEED": "9",
        "SPDELAB_PROBLEM_SIGMA0": "0.25",
        "SPDELAB_PROBLEM_K": "25.0",
        "SPDELAB_FORCE_FALLBACK": "1",   # kernel switch, not a config section
        "UNRELATED": "x",
    }
    cfg = load_config(str(ini), env=env)
    assert cfg.run.master_seed == 9
    spec = cfg.build_spec()
    assert spec.bounds.K == 25.0
    zs = ZeroPathView(1)
    assert spec.sigma.on_grid(np.array([0.0]), 0.0, zs)[0, 0] == 0.25


def test_override_precedence_over_env_and_file(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[grid]\nn_points = 64\n")
    cfg = load_config(str(ini), env={"SPDELAB_GRID_N_POINTS": "96"},
                      overrides={"grid.n_points": "32"})
    assert cfg.grid.n_points == 32


def test_override_requires_dotted_key():
    with pytest.raises(ConfigError, match="section.key"):
        load_config(env={}, overrides={"n_points": "32"})
    with pytest.raises(ConfigError, match=r"unknown section \[gird\]"):
        load_config(env={}, overrides={"gird.n_points": "32"})


def test_unknown_family_parameter_rejected():
    cfg = load_config(env={})
    cfg.problem["wobble"] = "3.0"
    with pytest.raises(ConfigError, match="wobble"):
        cfg.build_spec()


def test_non_numeric_family_parameter_rejected():
    cfg = load_config(env={})
    cfg.problem["f0"] = "lots"
    with pytest.raises(ConfigError, match="not numeric"):
        cfg.build_spec()


def test_each_family_builds():
    for family, extra in (("constant", {"f0": "1.0"}),
                          ("trig", {"g1": "0.2"}),
                          ("random-ou", {"a_mod": "0.1"})):
        cfg = load_config(env={})
        cfg.problem = {"family": family, **extra}
        spec = cfg.build_spec()
        assert spec.name == family


def test_echo_round_trips_full_precision(tmp_path):
    cfg = load_config(env={})
    cfg.problem["f0"] = 1.0 / 3.0
    cfg.grid.c_stab = 0.4932717632  # value with no short decimal form
    text = echo_config(cfg)
    assert "0.33333333333333331" in text
    ini = tmp_path / "echo.ini"
    ini.write_text(text)
    back = load_config(str(ini), env={})
    assert back.grid.c_stab == cfg.grid.c_stab
    assert float(back.problem["f0"]) == cfg.problem["f0"]
    assert back.cascade.radii == cfg.cascade.radii
    assert back.verify.grids == cfg.verify.grids
    # every section the echo printed parses back to identical values
    for section in ("grid", "run", "norms", "cascade", "verify", "output"):
        assert getattr(back, section) == getattr(cfg, section)
