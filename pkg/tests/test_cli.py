"""End-to-end runs of the command line entry point, in process."""

import contextlib
import io
import json

import numpy as np
import pytest

from spdelab.cli import build_parser, main
from spdelab.config import load_config
from spdelab.noise import NoiseConfig, sample_path
from spdelab.solver import make_grid


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        rc = main(argv)
    return rc, out.getvalue(), err.getvalue()


def write_ini(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL = """
[problem]
family = constant
f0 = 1.0
sigma0 = 0.5
g0 = 0.3
horizon = 0.25

[grid]
n_points = 48

[run]
n_samples = 3
store = 16
"""


def test_validate_passes_and_prints_margins(tmp_path):
    rc, out, _ = run_cli(["validate"])
    assert rc == 0
    assert "parabolicity pass" in out
    assert "coefficient bounds pass" in out
    rc, out, _ = run_cli(["validate", "--format", "json"])
    rec = json.loads(out)
    assert rec["ok"] is True
    assert rec["parabolicity"]["margin"] > 0


def test_validate_flags_degenerate_problem(tmp_path):
    cfgp = write_ini(tmp_path, "[problem]\nfamily = constant\nsigma0 = 1.5\n")
    rc, out, _ = run_cli(["validate", "--config", cfgp])
    assert rc == 1
    assert "FAIL" in out


def test_solve_formats_agree(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, out, _ = run_cli(["solve", "--config", cfgp, "--format", "csv"])
    assert rc == 0
    lines = out.splitlines()
    assert lines[0] == "state_index,t,x,value"
    # one row per stored slice per node, plus the header
    npz_path = str(tmp_path / "sol.npz")
    rc, _, _ = run_cli(["solve", "--config", cfgp, "--format", "bin",
                        "--out", npz_path])
    assert rc == 0
    d = np.load(npz_path)
    assert len(lines) == 1 + d["values"].size
    jpath = str(tmp_path / "sol.json")
    rc, _, _ = run_cli(["solve", "--config", cfgp, "--format", "json",
                        "--out", jpath])
    assert rc == 0
    rec = json.loads(open(jpath).read())
    assert np.allclose(np.asarray(rec["values"]), d["values"], rtol=0, atol=0)
    # csv carries full precision: reparse the last row against the npz value
    s, t, x, v = lines[-1].split(",")
    assert float(v) == d["values"][-1, -1]


def test_binary_to_stdout_is_a_usage_error(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, _, err = run_cli(["solve", "--config", cfgp, "--format", "bin"])
    assert rc == 2
    assert "requires --out" in err


def test_ensemble_outputs_are_byte_identical_across_workers(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    blobs = {}
    for fmt, suffix in (("csv", ".csv"), ("bin", ".npz")):
        for workers in (1, 2):
            path = str(tmp_path / ("ens-%s-w%d%s" % (fmt, workers, suffix)))
            rc, _, _ = run_cli(["ensemble", "--config", cfgp, "--format", fmt,
                                "--out", path, "--workers", str(workers)])
            assert rc == 0
            blobs[(fmt, workers)] = open(path, "rb").read()
    assert blobs[("csv", 1)] == blobs[("csv", 2)]
    assert blobs[("bin", 1)] == blobs[("bin", 2)]
    header = blobs[("csv", 1)].split(b"\n", 1)[0]
    assert header == b"sample,state_index,t,x,value"


def test_norms_json_report(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, out, _ = run_cli(["norms", "--config", cfgp, "--format", "json"])
    assert rc == 0
    rec = json.loads(out)
    assert set(rec) == {"space", "parabolic"}
    assert rec["space"]["sup_part"] > 0
    assert np.isfinite(rec["parabolic"]["seminorm_parabolic"])


CASCADE = """
[problem]
family = trig
a0 = 1.0
a1 = 0.0
b1 = 0.0
sigma0 = 0.0
f1 = 1.0
kf = 2
horizon = 1.0

[cascade]
center_x = 1.0308350895437624
levels = 3
n_points = 256
n_samples = 2

[run]
master_seed = 7
"""


def test_cascade_csv_json_and_exit_code(tmp_path):
    cfgp = write_ini(tmp_path, CASCADE)
    rc, out, err = run_cli(["cascade", "--config", cfgp, "--format", "csv"])
    assert rc == 0
    lines = out.splitlines()
    assert lines[0].startswith("level,radius,")
    assert len(lines) == 1 + 3  # header + one row per difference level
    assert "difference-decay pass" in err
    assert "uxx-convergence pass" in err

    rc, out, _ = run_cli(["cascade", "--config", cfgp, "--format", "json"])
    assert rc == 0
    rec = json.loads(out)
    assert rec["checks"]["difference_decay"]["ok"]
    assert rec["checks"]["uxx_convergence"]["ok"]
    assert "runtime_s" not in rec  # byte-reproducible record


def test_verify_linearity_jsonl(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, out, _ = run_cli(["verify", "--config", cfgp, "--checks", "linearity",
                          "--format", "json"])
    assert rc == 0
    recs = [json.loads(line) for line in out.splitlines()]
    assert len(recs) == 1
    assert recs[0]["name"] == "linearity"
    assert recs[0]["verdict"] is True
    assert recs[0]["values"]["max_rel_dev"] <= 1e-9
    assert "digest" in recs[0]


def test_verify_rejects_unknown_check():
    rc, _, err = run_cli(["verify", "--checks", "bogus"])
    assert rc == 2
    assert "bogus" in err


def test_verify_convergence_needs_oracle_form(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, _, err = run_cli(["verify", "--config", cfgp, "--checks", "convergence"])
    assert rc == 2
    assert "convergence check needs" in err


def test_missing_config_file_is_rc2():
    rc, _, err = run_cli(["validate", "--config", "/no/such/file.ini"])
    assert rc == 2
    assert "not found" in err


def test_unknown_config_key_is_rc2(tmp_path):
    cfgp = write_ini(tmp_path, "[grid]\nn_pts = 32\n")
    rc, _, err = run_cli(["validate", "--config", cfgp])
    assert rc == 2
    assert "n_pts" in err


def test_blowup_is_rc3(tmp_path):
    cfgp = write_ini(tmp_path,
                     "[problem]\nfamily = constant\nc0 = 5.0\nf0 = 1.0\n"
                     "horizon = 4.0\n\n[grid]\nn_points = 32\n\n"
                     "[run]\nblowup = 10.0\n")
    rc, _, err = run_cli(["solve", "--config", cfgp])
    assert rc == 3
    assert "numerical failure" in err


def test_seed_flag_changes_realization(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    outs = []
    for seed in ("0", "1"):
        rc, out, _ = run_cli(["solve", "--config", cfgp, "--format", "csv",
                              "--seed", seed])
        assert rc == 0
        outs.append(out)
    assert outs[0] != outs[1]


def test_echo_config_reports_effective_values(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    rc, _, err = run_cli(["validate", "--config", cfgp, "--echo-config",
                          "--seed", "5"])
    assert rc == 0
    assert "[run]" in err
    assert "master_seed = 5" in err
    assert "n_points = 48" in err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["frobnicate"])
    assert exc.value.code == 2


def test_constant_forcing_final_slice_equals_horizon(tmp_path):
    # du = 1 dt with zero data: the final slice is t = horizon at every node
    cfgp = write_ini(tmp_path,
                     "[problem]\nfamily = constant\nf0 = 1.0\nhorizon = 0.25\n"
                     "\n[grid]\nn_points = 32\n\n[run]\nstore = final\n")
    npz_path = str(tmp_path / "flat.npz")
    rc, _, err = run_cli(["solve", "--config", cfgp, "--format", "bin",
                          "--out", npz_path])
    assert rc == 0
    d = np.load(npz_path)
    assert np.allclose(d["values"], 0.25, rtol=1e-12, atol=0)
    assert "max|u|" in err and "runtime" in err


def test_additive_noise_only_reproduces_brownian_path(tmp_path):
    # du = dW: the field stays flat in x and equals W_T at every node
    cfgp = write_ini(tmp_path,
                     "[problem]\nfamily = constant\ng0 = 1.0\nhorizon = 0.25\n"
                     "\n[grid]\nn_points = 32\n\n"
                     "[run]\nmaster_seed = 3\nstore = final\n")
    npz_path = str(tmp_path / "gw.npz")
    rc, _, _ = run_cli(["solve", "--config", cfgp, "--format", "bin",
                        "--out", npz_path])
    assert rc == 0
    d = np.load(npz_path)
    cfg = load_config(cfgp)
    grid = make_grid(cfg.build_spec(), cfg.grid.n_points, c_stab=cfg.grid.c_stab)
    w_final = sample_path(NoiseConfig(1, grid.n_steps, grid.horizon),
                          3, 0).cumulative[0, -1]
    # additions happen in path order, so the match is exact
    assert np.all(d["values"][-1] == w_final)


def test_cascade_constant_data_gaps_are_zero(tmp_path):
    # u(t) = t has zero second derivative: every level gap is exactly zero
    cfgp = write_ini(tmp_path,
                     "[problem]\nfamily = constant\nf0 = 1.0\nhorizon = 1.0\n"
                     "\n[cascade]\nlevels = 3\nn_points = 256\nn_samples = 2\n")
    rc, out, _ = run_cli(["cascade", "--config", cfgp, "--format", "json"])
    assert rc == 0
    rec = json.loads(out)
    gaps = [row["mean_square_gap"] for row in rec["level_rows"]]
    assert gaps == [0.0] * len(gaps)
    assert rec["checks"]["difference_decay"]["ok"]
    assert rec["checks"]["uxx_convergence"]["ok"]


def test_out_directory_receives_artifact_and_config(tmp_path):
    cfgp = write_ini(tmp_path, SMALL)
    outdir = tmp_path / "artifacts"
    outdir.mkdir()
    rc, _, _ = run_cli(["solve", "--config", cfgp, "--out", str(outdir)])
    assert rc == 0
    art = outdir / "solve.csv"
    echo = outdir / "config.ini"
    assert art.exists() and echo.exists()
    # the echoed config re-validates and reproduces the run byte for byte
    rc, _, _ = run_cli(["validate", "--config", str(echo)])
    assert rc == 0
    first = art.read_bytes()
    rc, _, _ = run_cli(["solve", "--config", str(echo), "--out", str(outdir)])
    assert rc == 0
    assert art.read_bytes() == first
