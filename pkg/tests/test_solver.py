"""Time stepping: exact special cases, convergence, stability, determinism."""

import math

import numpy as np
import pytest

from spdelab.model import make_problem
from spdelab.noise import NoiseConfig, sample_path
from spdelab.solver import (
    BlowUpError, SpaceTimeGrid, StabilityError, discrete_derivative, make_grid,
    run_ensemble, solve_on_cylinder, solve_realization, stability_check,
)


def _zero_path(grid, modes=1):
    cfg = NoiseConfig(modes=modes, n_steps=grid.n_steps, horizon=grid.horizon)
    from spdelab.noise import WienerPath
    return WienerPath(cfg, np.zeros((modes, grid.n_steps)), (0, 0))


def test_stability_threshold_value():
    spec = make_problem(a=1.0, horizon=0.25)
    grid = SpaceTimeGrid(128, spec.length, 500, 0.25)
    cert = stability_check(spec, grid, c_stab=0.5)
    h = 2 * math.pi / 128
    assert abs(cert.dt_max - h * h / 4.0) < 1e-18
    assert cert.granted  # dt = 5e-4 < 6.024e-4
    tight = SpaceTimeGrid(128, spec.length, 400, 0.25)
    assert not stability_check(spec, tight, c_stab=0.5).granted


def test_make_grid_respects_bound():
    spec = make_problem(a=1.0, horizon=0.25)
    grid = make_grid(spec, 128)
    cert = stability_check(spec, grid)
    assert cert.granted
    # one fewer step would violate the bound
    assert 0.25 / (grid.n_steps - 1) > cert.dt_max


def test_heat_decay():
    spec = make_problem(a=1.0, horizon=0.1)
    grid = make_grid(spec, 128)
    sol = solve_realization(spec, _zero_path(grid), grid, store="final",
                            initial_state=lambda x: np.sin(x))
    exact = math.exp(-0.1) * np.sin(grid.xs)
    err = np.max(np.abs(sol.values[-1] - exact))
    print("heat decay max err %.3e" % err)
    assert err < 5e-4


def test_drift_rotates_profile():
    # du = (u_xx + u_x) dt, u0 = sin: u(x,t) = e^-t sin(x + t)
    spec = make_problem(a=1.0, b=1.0, horizon=0.2)
    grid = make_grid(spec, 128)
    sol = solve_realization(spec, _zero_path(grid), grid, store="final",
                            initial_state=lambda x: np.sin(x))
    exact = math.exp(-0.2) * np.sin(grid.xs + 0.2)
    assert np.max(np.abs(sol.values[-1] - exact)) < 2e-3


def test_reaction_growth():
    spec = make_problem(a=1.0, c=1.0, horizon=0.25)
    grid = make_grid(spec, 64)
    sol = solve_realization(spec, _zero_path(grid), grid, store="final",
                            initial_state=np.ones(64))
    expected = math.exp(0.25)
    got = sol.values[-1, 0]
    assert abs(got - expected) / expected < 2 * grid.dt


def test_forcing_accumulates_exactly():
    # du = u_xx dt + dt: spatially constant, u(T) = T to machine precision
    spec = make_problem(a=1.0, f=1.0, horizon=0.25)
    grid = make_grid(spec, 64)
    sol = solve_realization(spec, _zero_path(grid), grid, store="final")
    np.testing.assert_allclose(sol.values[-1], 0.25, rtol=1e-13)


def test_additive_noise_reproduces_path():
    # du = u_xx dt + dW: u(t, x) = W_t
    spec = make_problem(a=1.0, g=1.0, horizon=0.25)
    grid = make_grid(spec, 64)
    cfg = NoiseConfig(modes=1, n_steps=grid.n_steps, horizon=0.25)
    path = sample_path(cfg, 15, 2)
    sol = solve_realization(spec, path, grid, store="all")
    np.testing.assert_allclose(sol.values, path.cumulative[0][:, None] * np.ones(64), rtol=1e-12, atol=1e-14)


def test_multiplicative_noise_mean_preserved():
    # du = u_xx dt + nu u dW from u0 = 1: each step multiplies by 1 + nu dW,
    # so E u(T) = 1; sample mean stays within 4 SE
    nu = 0.5
    T = 0.25
    spec = make_problem(a=1.0, nu=nu, horizon=T)
    grid = make_grid(spec, 64)
    n = 2000
    ens, _ = run_ensemble(spec, grid, 4040, n, store="final",
                          initial_state=np.ones(64), workers=2)
    vals = ens.stacked[:, -1, 0]
    se = np.std(vals) / np.sqrt(n)
    print("GBM mean %.5f +- %.5f" % (np.mean(vals), se))
    assert abs(np.mean(vals) - 1.0) < 4 * se


def test_zero_problem_stays_zero():
    spec = make_problem(a=1.0, sigma=0.5, horizon=0.1)
    grid = make_grid(spec, 64)
    cfg = NoiseConfig(modes=1, n_steps=grid.n_steps, horizon=0.1)
    sol = solve_realization(spec, sample_path(cfg, 3, 0), grid, store="all")
    assert np.all(sol.values == 0.0)


def test_unstable_grid_blows_up():
    spec = make_problem(a=1.0, horizon=0.25)
    stable = make_grid(spec, 64)
    bad_grid = SpaceTimeGrid(64, spec.length, stable.n_steps // 5, 0.25)
    cert = stability_check(spec, bad_grid)
    assert not cert.granted
    with pytest.raises(StabilityError):
        solve_realization(spec, _zero_path(bad_grid), bad_grid)
    seed = 1e-3 * (-1.0) ** np.arange(64)  # Nyquist perturbation, gain ~4.2/step
    with pytest.raises(BlowUpError) as err:
        solve_realization(spec, _zero_path(bad_grid), bad_grid,
                          initial_state=seed, enforce_stability=False, blowup=1e6)
    assert 0 < err.value.step <= bad_grid.n_steps
    assert err.value.time <= 0.25 + 1e-12
    assert err.value.sup > 1e6


def test_store_policies():
    spec = make_problem(a=1.0, f=1.0, horizon=0.1)
    grid = make_grid(spec, 64)
    n = grid.n_steps
    path = _zero_path(grid)
    s_all = solve_realization(spec, path, grid, store="all")
    assert np.array_equal(s_all.state_indices, np.arange(n + 1))
    s_final = solve_realization(spec, path, grid, store="final")
    assert np.array_equal(s_final.state_indices, [n])
    s_str = solve_realization(spec, path, grid, store=7)
    assert s_str.state_indices[0] == 0 and s_str.state_indices[-1] == n
    assert np.all(np.diff(s_str.state_indices[:-1]) == 7)
    np.testing.assert_array_equal(s_str.values[-1], s_all.values[-1])
    explicit = solve_realization(spec, path, grid, store=[0, 5, n])
    assert np.array_equal(explicit.state_indices, [0, 5, n])


def test_observer_sees_every_state():
    spec = make_problem(a=1.0, f=1.0, horizon=0.05)
    grid = make_grid(spec, 64)
    seen = []

    def obs(idx, block):
        seen.append((idx.copy(), block.copy()))

    sol = solve_realization(spec, _zero_path(grid), grid, store="all",
                            observers=[obs], chunk_steps=13)
    idx = np.concatenate([s[0] for s in seen])
    blocks = np.concatenate([s[1] for s in seen], axis=0)
    assert np.array_equal(idx, np.arange(grid.n_steps + 1))
    np.testing.assert_array_equal(blocks, sol.values)


def test_ensemble_determinism_and_workers():
    spec = make_problem(a=1.0, sigma=0.5, g=0.3, horizon=0.1)
    grid = make_grid(spec, 64)
    e1, _ = run_ensemble(spec, grid, 77, 8, store="final", workers=1)
    e2, _ = run_ensemble(spec, grid, 77, 8, store="final", workers=4)
    assert np.array_equal(e1.stacked, e2.stacked)
    e3, _ = run_ensemble(spec, grid, 78, 8, store="final", workers=1)
    assert not np.array_equal(e1.stacked, e3.stacked)


def test_backend_parity_through_solver():
    from spdelab._kernels import available_backends
    if len(available_backends()) < 2:
        pytest.skip("compiled backend unavailable")
    spec = make_problem(a=1.0, sigma=0.5, g=0.3, f=0.2, horizon=0.1)
    grid = make_grid(spec, 64)
    cfg = NoiseConfig(1, grid.n_steps, 0.1)
    path = sample_path(cfg, 5, 0)
    sols = {b: solve_realization(spec, path, grid, store="final", backend=b)
            for b in available_backends()}
    np.testing.assert_allclose(sols["compiled"].values, sols["fallback"].values,
                               rtol=1e-11, atol=1e-13)


def test_path_grid_mismatch_rejected():
    spec = make_problem(a=1.0, horizon=0.1)
    grid = make_grid(spec, 64)
    cfg = NoiseConfig(modes=1, n_steps=grid.n_steps + 1, horizon=0.1)
    with pytest.raises(ValueError):
        solve_realization(spec, sample_path(cfg, 0, 0), grid)


def test_discrete_derivative_periodic_and_seam():
    grid = SpaceTimeGrid(64, 2 * math.pi, 4, 1.0)
    from spdelab.solver import GridSolution
    vals = np.sin(grid.xs)[None, :]
    sol = GridSolution(grid.xs, [0.0], [0], vals, grid.h, grid.dt)
    d1 = discrete_derivative(sol, 1)
    assert np.max(np.abs(d1.values[0] - np.cos(grid.xs) * np.sinc(grid.h / np.pi))) < 1e-12
    d2 = discrete_derivative(sol, 2)
    assert np.max(np.abs(d2.values[0] + np.sin(grid.xs))) < 2e-3
    assert d1.meta["seam_nodes"] == [0, 63]
    lin = GridSolution(grid.xs, [0.0], [0], grid.xs[None, :], grid.h, grid.dt)
    dlin = discrete_derivative(lin, 1)
    inner = dlin.values[0][1:-1]
    np.testing.assert_allclose(inner, 1.0, rtol=1e-12)
    assert abs(dlin.values[0][0] - 1.0) > 1.0  # seam column is polluted


def test_cylinder_subsolve_matches_base():
    from spdelab.model import Cylinder
    spec = make_problem(a=1.0, sigma=0.5, f=0.3, g=0.2, horizon=0.25)
    grid = make_grid(spec, 128)
    cfg = NoiseConfig(1, grid.n_steps, 0.25)
    path = sample_path(cfg, 21, 0)
    base = solve_realization(spec, path, grid, store="all")
    ic = 32
    cyl = Cylinder(center_x=float(grid.xs[ic]), center_t=0.25, radius=0.4)
    win = solve_on_cylinder(spec, path, grid, cyl, base)
    # same scheme, same data: the window must reproduce the base solution
    cols = np.arange(ic - (len(win.xs) // 2), ic + len(win.xs) // 2 + 1) % 128
    rows = np.searchsorted(base.state_indices, win.state_indices)
    np.testing.assert_allclose(win.values, base.values[np.ix_(rows, cols)],
                               rtol=1e-9, atol=1e-11)


def test_refined_grid_scaling():
    g = SpaceTimeGrid(64, 2 * math.pi, 100, 0.25)
    r = g.refined(2)
    assert r.n_points == 128 and r.n_steps == 400
    assert abs(r.h - g.h / 2) < 1e-15
    assert abs(r.dt - g.dt / 4) < 1e-18
