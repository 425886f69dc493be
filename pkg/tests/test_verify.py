"""Solver cross-checks: closed-form oracle, linearity, convergence, norm ratios."""

import io
import json
import math

import numpy as np
import pytest

from spdelab.model import make_problem
from spdelab.noise import NoiseConfig, sample_path
from spdelab.solver import make_grid
from spdelab.verify import (ExperimentResult, append_jsonl, convergence_study,
                            linearity_test, oracle_characteristics,
                            schauder_ratio_experiment)


def _drift_spec(a=1.0, sigma=1.0, horizon=0.25):
    return make_problem(a=a, b=0.0, c=0.0, f=0.0, sigma=[sigma], nu=[0.0],
                        g=[0.0], modes=1, horizon=horizon, lam=0.5, K=10.0,
                        alpha=0.5, p=2.0, name="drift")


def test_oracle_reduces_to_heat_kernel_damping():
    # sigma = 0: modes damp like exp(-k^2 a t) with no transport
    spec = _drift_spec(sigma=0.0)
    grid = make_grid(spec, 64, horizon=0.25)
    path = sample_path(NoiseConfig(1, grid.n_steps, grid.horizon), 0, 0)
    sol = oracle_characteristics(1.0, 0.0, [(2, 0.7, -0.3)], path, grid, store="final")
    t = grid.horizon
    expect = math.exp(-4.0 * t) * (0.7 * np.cos(2 * grid.xs) - 0.3 * np.sin(2 * grid.xs))
    assert np.allclose(sol.values[-1], expect, rtol=1e-12, atol=1e-14)


def test_oracle_transports_along_the_path():
    spec = _drift_spec()
    grid = make_grid(spec, 64, horizon=0.25)
    path = sample_path(NoiseConfig(1, grid.n_steps, grid.horizon), 3, 1)
    sol = oracle_characteristics(1.0, 1.0, [(1, 1.0, 0.0)], path, grid)
    j = grid.n_steps // 2
    t = j * grid.dt
    shift = path.cumulative[0, j]
    expect = math.exp(-0.5 * t) * np.cos(grid.xs + shift)
    assert np.allclose(sol.values[sol.row_at(t)], expect, rtol=1e-12, atol=1e-14)


def test_oracle_rejects_degenerate_diffusivity():
    spec = _drift_spec()
    grid = make_grid(spec, 32, horizon=0.1)
    path = sample_path(NoiseConfig(1, grid.n_steps, grid.horizon), 0, 0)
    with pytest.raises(ValueError, match="not parabolic"):
        oracle_characteristics(0.5, 1.1, [(1, 1.0, 0.0)], path, grid)


def test_euler_scheme_converges_to_the_oracle():
    spec = _drift_spec()
    grids = [make_grid(spec, n, horizon=0.25) for n in (48, 96)]

    def oracle_final(path, grid):
        return oracle_characteristics(1.0, 1.0, [(1, 1.0, 0.0)], path, grid,
                                      store="final").values[-1]

    out = convergence_study(spec, grids, oracle_final, master_seed=7, n_samples=2,
                            initial_state=lambda xs: np.cos(xs))
    print("\n  n_points   rel_err     ratio")
    for r in out["rows"]:
        print("  %8d  %9.2e  %8.3f" % (r["n_points"], r["rel_err"], r["ratio_vs_prev"]))
    print("  log-log rate vs h: %.3f" % out["rate"])
    assert out["rows"][0]["rel_err"] < 0.05
    assert out["rows"][1]["rel_err"] < 0.02
    assert out["rows"][1]["ratio_vs_prev"] >= 1.5
    assert out["rate"] > 0.8


def test_solution_scales_linearly_with_forcing():
    spec = make_problem(a=1.0, b=0.1, c=-0.2,
                        f=lambda x, t, w: np.cos(x),
                        sigma=[0.6], nu=[0.3],
                        g=lambda x, t, w: np.sin(x)[None, :],
                        modes=1, horizon=0.1, lam=0.5, K=10.0, alpha=0.5, p=2.0,
                        name="lin")
    grid = make_grid(spec, 48, horizon=0.1)
    out = linearity_test(spec, [0.1, 2.0, 10.0], grid, master_seed=5, n_samples=2)
    print("\n  scaling deviations:", ["%.2e" % r["max_rel_dev"] for r in out["rows"]])
    assert out["max_rel_dev"] <= 1e-9


def test_norm_ratio_experiment_reports_and_skips():
    members = []
    for k in (1, 2):
        members.append(("f-cos%d" % k, make_problem(
            a=1.0, b=0.0, c=0.0,
            f=(lambda k: lambda x, t, w: np.cos(k * x))(k),
            sigma=[0.0], nu=[0.0], g=[0.0], modes=1, horizon=0.1,
            lam=0.5, K=10.0, alpha=0.5, p=2.0, name="f-cos%d" % k)))
    members.append(("zero", make_problem(
        a=1.0, b=0.0, c=0.0, f=0.0, sigma=[0.0], nu=[0.0], g=[0.0], modes=1,
        horizon=0.1, lam=0.5, K=10.0, alpha=0.5, p=2.0, name="zero")))
    grid = make_grid(members[0][1], 48, horizon=0.1)
    rep = schauder_ratio_experiment(members, grid, master_seed=2, n_samples=2,
                                    alpha=0.5, p=2.0, store=8, pair_budget=20000)
    print("\n" + rep.table())
    assert rep.skipped == ["zero"]
    assert len(rep.rows) == 2
    assert all(r["ratio"] > 0 for r in rep.rows)
    assert math.isfinite(rep.spread) and rep.spread >= 1.0


def test_experiment_digest_is_config_keyed():
    r1 = ExperimentResult("exp", {"n": 64, "eps": 0.1}, seed=3,
                          values={"v": 1.0}, verdict=True, runtime_s=0.1)
    r2 = ExperimentResult("exp", {"n": 64, "eps": 0.1}, seed=3,
                          values={"v": 2.0}, verdict=False, runtime_s=9.9)
    r3 = ExperimentResult("exp", {"n": 65, "eps": 0.1}, seed=3,
                          values={"v": 1.0}, verdict=True, runtime_s=0.1)
    # digest keys the configuration, not the measured values
    assert r1.digest == r2.digest
    assert r1.digest != r3.digest

    buf = io.StringIO()
    append_jsonl([r1, r3], buf)
    lines = buf.getvalue().strip().split("\n")
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert rec["digest"] == r1.digest
    assert rec["verdict"] is True
    assert rec["values"]["v"] == 1.0
