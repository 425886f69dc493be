"""Explicit finite-difference time stepping on the periodic torus.

Space is discretized with centered second-order stencils, time with explicit
Euler-Maruyama.  The state after step j+1 is built from the state at t_j,
coefficients evaluated at t_j against the path restricted to [0, t_j], and
the increment W(t_{j+1}) - W(t_j); nothing anticipates the future.

Memory never holds a full space-time history unless asked to: the driver
works through chunks of steps, hands each chunk to a stepping kernel, lets
observers consume it, and keeps only the requested store slices.
"""

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ZeroPathView
from .noise import NoiseConfig, sample_path
from .util import fmt_float


class StabilityError(Exception):
    pass


class BlowUpError(Exception):
    def __init__(self, step, time, sup, threshold):
        self.step = step
        self.time = time
        self.sup = sup
        self.threshold = threshold
        super().__init__(
            "solution exceeded %s at step %d (t=%s), sup=%s"
            % (fmt_float(threshold), step, fmt_float(time), fmt_float(sup))
        )


class ResolutionError(Exception):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform periodic grid: n_points nodes on [0, length), n_steps steps
    over [0, horizon]."""

    n_points: int
    length: float
    n_steps: int
    horizon: float

    def __post_init__(self):
        if self.n_points < 8:
            raise ValueError("n_points must be >= 8, got %d" % self.n_points)
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not (self.length > 0 and self.horizon > 0):
            raise ValueError("length and horizon must be positive")

    @property
    def h(self):
        return self.length / self.n_points

    @property
    def dt(self):
        return self.horizon / self.n_steps

    @property
    def xs(self):
        return np.arange(self.n_points) * self.h

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.dt

    def refined(self, factor):
        """Same domain with h divided by factor and dt by factor^2 (the
        parabolic refinement that preserves the stability margin)."""
        return SpaceTimeGrid(self.n_points * factor, self.length,
                             self.n_steps * factor * factor, self.horizon)


@dataclass
class StabilityCertificate:
    granted: bool
    dt: float
    dt_max: float
    sup_a: float
    c_stab: float
    n_sampled: int

    def __str__(self):
        status = "granted" if self.granted else "DENIED"
        return "stability %s: dt=%s, dt_max=%s (sup|a|=%s over %d samples, c_stab=%s)" % (
            status, fmt_float(self.dt), fmt_float(self.dt_max),
            fmt_float(self.sup_a), self.n_sampled, fmt_float(self.c_stab))


def stability_check(spec, grid, c_stab=0.5, n_probe_times=5, path=None):
    """Advisory parabolic step bound dt <= c_stab h^2 / (2 n sup|a|).

    sup|a| is taken over grid nodes at a few probe times (and the probe path
    if one is given); unbounded coefficients are only seen through these
    samples.
    """
    xs = grid.xs
    ts = np.linspace(0.0, grid.horizon, n_probe_times)
    sup_a = 0.0
    for t in ts:
        if path is not None:
            # probe at the nearest whole path step at or before t
            dtp = path.config.dt
            tick = min(int(t / dtp + 1e-12), path.config.n_steps) * dtp
            t = tick
            w = path.restrict(tick)
        else:
            w = ZeroPathView(spec.modes, t)
        vals = spec.a.on_grid(xs, float(t), w)
        sup_a = max(sup_a, float(np.max(np.abs(vals))))
    if sup_a == 0.0:
        dt_max = math.inf
    else:
        dt_max = c_stab * grid.h ** 2 / (2.0 * spec.dim * sup_a)
    granted = grid.dt <= dt_max * (1.0 + 1e-12)
    return StabilityCertificate(granted=granted, dt=grid.dt, dt_max=dt_max,
                                sup_a=sup_a, c_stab=c_stab,
                                n_sampled=len(xs) * n_probe_times)


def make_grid(spec, n_points, horizon=None, c_stab=0.5, length=None):
    """Build a grid whose dt satisfies the stability bound for spec."""
    horizon = spec.horizon if horizon is None else horizon
    length = spec.length if length is None else length
    probe = SpaceTimeGrid(n_points, length, 1, horizon)
    cert = stability_check(spec, probe, c_stab=c_stab)
    if not math.isfinite(cert.dt_max):
        n_steps = 1
    else:
        n_steps = max(1, int(math.ceil(horizon / cert.dt_max - 1e-12)))
    return SpaceTimeGrid(n_points, length, n_steps, horizon)


# ---------------------------------------------------------------------------
# solutions

class GridSolution:
    """Field values on stored time slices of a space grid.

    values has shape (n_stored, n_nodes); state_indices maps each row to a
    global state index (0 = initial data, j = state after step j).  xs are
    node coordinates; for cylinder windows these are torus-unrolled around
    the window center and the field is not periodic.
    """

    def __init__(self, xs, times, state_indices, values, h, dt, periodic=True,
                 valid_mask=None, meta=None):
        self.xs = np.asarray(xs, dtype=np.float64)
        self.times = np.asarray(times, dtype=np.float64)
        self.state_indices = np.asarray(state_indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.h = float(h)
        self.dt = float(dt)
        self.periodic = bool(periodic)
        if valid_mask is None:
            valid_mask = np.ones(self.xs.shape[0], dtype=bool)
        self.valid_mask = valid_mask
        self.meta = dict(meta or {})
        if self.values.shape != (self.times.shape[0], self.xs.shape[0]):
            raise ValueError("values shape %s does not match times/nodes" % (self.values.shape,))
        for arr in (self.xs, self.times, self.state_indices, self.values, self.valid_mask):
            arr.setflags(write=False)

    @property
    def n_stored(self):
        return self.times.shape[0]

    def row_at(self, t):
        """Row index of a stored time (exact up to rounding)."""
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError("time %s is not stored" % fmt_float(t))
        return idx

    def at_time(self, t):
        return self.values[self.row_at(t)]

    def node_at(self, x):
        idx = int(np.argmin(np.abs(self.xs - x)))
        if abs(self.xs[idx] - x) > 1e-9 * max(1.0, abs(x)) + 1e-12:
            raise KeyError("x %s is not a grid node" % fmt_float(x))
        return idx

    def sample(self, x, t):
        return float(self.values[self.row_at(t), self.node_at(x)])


def discrete_derivative(sol, order):
    """Centered-difference x-derivative of stored slices.

    Returns a GridSolution of the same shape.  For periodic fields the wrap
    stencil is used everywhere but the two seam nodes are flagged in
    meta['seam_nodes'] (a non-periodic field sampled onto the torus is wrong
    there).  For window fields the edge nodes are dropped from valid_mask.
    """
    if order == 0:
        return sol
    if order not in (1, 2):
        raise ValueError("order must be 0, 1 or 2")
    v = sol.values
    h = sol.h
    mask = sol.valid_mask.copy()
    if sol.periodic:
        up = np.roll(v, -1, axis=1)
        um = np.roll(v, 1, axis=1)
        meta = dict(sol.meta)
        meta["seam_nodes"] = [0, v.shape[1] - 1]
    else:
        up = np.empty_like(v)
        um = np.empty_like(v)
        up[:, :-1] = v[:, 1:]
        um[:, 1:] = v[:, :-1]
        up[:, -1] = v[:, -1]
        um[:, 0] = v[:, 0]
        mask[0] = mask[-1] = False
        meta = dict(sol.meta)
    if order == 1:
        dv = (up - um) / (2.0 * h)
    else:
        dv = (up - 2.0 * v + um) / (h * h)
    meta["derivative_order"] = order + sol.meta.get("derivative_order", 0)
    return GridSolution(sol.xs, sol.times, sol.state_indices, dv, h, sol.dt,
                        periodic=sol.periodic, valid_mask=mask, meta=meta)


# ---------------------------------------------------------------------------
# coefficient evaluation plans

class CoefficientPlan:
    """Evaluates the four stencil weight blocks for chunks of steps.

    Static fields (no t or path dependence) are evaluated once per grid; the
    noise contraction sum_k dW_k sigma_k etc. is a single matrix product per
    chunk in that case.
    """

    def __init__(self, spec, xs, path, dt, freeze=None):
        self.spec = spec
        self.xs = xs
        self.path = path
        self.dt = dt
        self.nx = xs.shape[0]
        z = ZeroPathView(spec.modes)
        self.static = {}
        for name in ("a", "b", "c", "f"):
            fld = getattr(spec, name)
            if not fld.depends_t and not fld.depends_path:
                self.static[name] = fld.on_grid(xs, 0.0, z)
        for name in ("sigma", "nu", "g"):
            fld = getattr(spec, name)
            if not fld.depends_t and not fld.depends_path:
                self.static[name] = fld.on_grid(xs, 0.0, z)

    def _rows(self, name, j0, j1, out2d):
        """Fill (cs, nx) values of a scalar field over the chunk."""
        fld = getattr(self.spec, name)
        if name in self.static:
            out2d[:] = self.static[name]
            return
        for r in range(j1 - j0):
            t = (j0 + r) * self.dt
            w = self.path.restrict(t)
            out2d[r] = fld.on_grid(self.xs, t, w)

    def _mode_rows(self, name, j0, j1):
        """(cs, modes, nx) values of a mode field, or the static (modes, nx)."""
        fld = getattr(self.spec, name)
        if name in self.static:
            return self.static[name]
        cs = j1 - j0
        out = np.empty((cs, self.spec.modes, self.nx))
        for r in range(cs):
            t = (j0 + r) * self.dt
            w = self.path.restrict(t)
            out[r] = fld.on_grid(self.xs, t, w)
        return out

    def weights(self, j0, j1, alap, agrad, aself, asrc):
        """Fill the stencil weights for steps j0..j1-1 (dt and dW folded in)."""
        dt = self.dt
        dW = np.ascontiguousarray(self.path.increments[:, j0:j1].T)  # (cs, modes)
        self._rows("a", j0, j1, alap)
        alap *= dt
        self._rows("b", j0, j1, agrad)
        agrad *= dt
        self._rows("c", j0, j1, aself)
        aself *= dt
        self._rows("f", j0, j1, asrc)
        asrc *= dt
        for name, target in (("sigma", agrad), ("nu", aself), ("g", asrc)):
            vals = self._mode_rows(name, j0, j1)
            if vals.ndim == 2:
                if np.any(vals):
                    target += dW @ vals
            else:
                target += np.einsum("rm,rmn->rn", dW, vals)


# ---------------------------------------------------------------------------
# solve driver

def _store_indices(store, n_steps):
    if isinstance(store, str):
        if store == "all":
            return np.arange(n_steps + 1)
        if store == "final":
            return np.array([n_steps])
        raise ValueError("unknown store policy %r" % store)
    if isinstance(store, int):
        idx = np.arange(0, n_steps + 1, store)
        if idx[-1] != n_steps:
            idx = np.append(idx, n_steps)
        return idx
    idx = np.unique(np.asarray(store, dtype=np.int64))
    if len(idx) == 0 or idx[0] < 0 or idx[-1] > n_steps:
        raise ValueError("store indices out of range 0..%d" % n_steps)
    return idx


def solve_realization(spec, path, grid, store="all", chunk_steps=512,
                      observers=(), initial_state=None, blowup=1e12,
                      certificate=None, enforce_stability=True, backend=None):
    """March one realization across [0, horizon] and return a GridSolution.

    The contract is zero initial data (problems with data are reduced to this
    by subtracting the data path); initial_state exists for controlled
    comparisons against closed-form references.

    Observers are callables observe(state_indices, states) fed every computed
    slice in order, including the initial one; `store` selects which state
    indices the returned solution keeps ("all", "final", a stride, or an
    explicit index list).
    """
    if spec.dim != 1:
        raise ValueError("time stepping is implemented for dim = 1")
    if path.config.n_steps != grid.n_steps:
        raise ValueError("path has %d steps, grid has %d" % (path.config.n_steps, grid.n_steps))
    if abs(path.config.horizon - grid.horizon) > 1e-9 * grid.horizon:
        raise ValueError("path horizon %s != grid horizon %s"
                         % (fmt_float(path.config.horizon), fmt_float(grid.horizon)))
    if path.config.modes != spec.modes:
        raise ValueError("path has %d modes, problem has %d" % (path.config.modes, spec.modes))
    if certificate is None:
        certificate = stability_check(spec, grid, path=path)
    if enforce_stability and not certificate.granted:
        raise StabilityError(str(certificate))

    kern = _kernels if backend is None else _kernels.available_backends()[backend]
    nx, n_steps = grid.n_points, grid.n_steps
    dt, h = grid.dt, grid.h
    xs = grid.xs

    u = np.zeros(nx)
    if initial_state is not None:
        init = initial_state(xs) if callable(initial_state) else initial_state
        u[:] = np.asarray(init, dtype=np.float64)

    stored_idx = _store_indices(store, n_steps)
    stored = np.empty((len(stored_idx), nx))
    stored_pos = {int(s): i for i, s in enumerate(stored_idx)}
    if 0 in stored_pos:
        stored[stored_pos[0]] = u
    for obs in observers:
        obs(np.array([0]), u[None, :])

    plan = CoefficientPlan(spec, xs, path, dt)
    cs_max = min(chunk_steps, n_steps)
    alap = np.empty((cs_max, nx)); agrad = np.empty((cs_max, nx))
    aself = np.empty((cs_max, nx)); asrc = np.empty((cs_max, nx))
    hist = np.empty((cs_max, nx))
    t0 = _time.perf_counter()

    j = 0
    while j < n_steps:
        cs = min(cs_max, n_steps - j)
        wl, wg, wsf, wsrc = alap[:cs], agrad[:cs], aself[:cs], asrc[:cs]
        plan.weights(j, j + cs, wl, wg, wsf, wsrc)
        block = hist[:cs]
        bad = kern.step_periodic(u, wl, wg, wsf, wsrc, 1.0 / h ** 2, 0.5 / h, blowup, block)
        if bad >= 0:
            step = j + bad + 1
            sup = float(np.max(np.abs(block[bad][np.isfinite(block[bad])]))) if np.any(np.isfinite(block[bad])) else math.inf
            raise BlowUpError(step=step, time=step * dt, sup=sup, threshold=blowup)
        sidx = np.arange(j + 1, j + cs + 1)
        for obs in observers:
            obs(sidx, block)
        for r, s in enumerate(sidx):
            if int(s) in stored_pos:
                stored[stored_pos[int(s)]] = block[r]
        j += cs

    meta = {
        "seed_key": getattr(path, "seed_key", None),
        "problem": spec.name,
        "backend": _kernels.BACKEND if backend is None else backend,
        "runtime_s": _time.perf_counter() - t0,
    }
    return GridSolution(xs, stored_idx * dt, stored_idx, stored, h, dt,
                        periodic=True, meta=meta)


# ---------------------------------------------------------------------------
# cylinder sub-solve with boundary data copied from a base solution

def window_for_cylinder(grid, cylinder, pad=0):
    """Snapped node window and step range covering a cylinder.

    The radius rounds outward to whole node offsets around the nearest node
    to the center; the time bottom rounds down to a whole step.  Returns
    (center_node, node_offsets, j_bottom, j_top).
    """
    h, dt = grid.h, grid.dt
    ic = int(round(cylinder.center_x / h))
    if abs(ic * h - cylinder.center_x) > 1e-9 * grid.length:
        raise ResolutionError("cylinder center %s is not on the grid" % fmt_float(cylinder.center_x))
    half = int(math.ceil(cylinder.radius / h - 1e-12)) + pad
    if 2 * half + 1 > grid.n_points:
        raise ResolutionError("cylinder of radius %s does not fit the grid" % fmt_float(cylinder.radius))
    if half < 4:
        raise ResolutionError(
            "cylinder radius %s spans %d nodes; need at least 4 per side"
            % (fmt_float(cylinder.radius), half))
    j_top = int(round(cylinder.center_t / dt))
    if abs(j_top * dt - cylinder.center_t) > 1e-9 * max(1.0, grid.horizon):
        raise ResolutionError("cylinder top %s is not a step time" % fmt_float(cylinder.center_t))
    depth = cylinder.radius ** 2
    j_bottom = max(0, int(math.floor((cylinder.center_t - depth) / dt + 1e-12)))
    return ic, np.arange(-half, half + 1), j_bottom, j_top


def solve_on_cylinder(spec, path, grid, cylinder, base, blowup=1e12,
                      chunk_steps=512, backend=None):
    """Solve the same equation inside a cylinder, copying lateral boundary
    values from a base solution stored at every step of the window.

    The initial slice is the base slice at the window bottom.  Returns a
    window GridSolution (non-periodic, torus-unrolled node coordinates).
    """
    ic, offs, j_bot, j_top = window_for_cylinder(grid, cylinder)
    need = np.arange(j_bot, j_top + 1)
    if not np.all(np.isin(need, base.state_indices)):
        raise ValueError("base solution must store every step of the window")
    rows = np.searchsorted(base.state_indices, need)
    cols = (ic + offs) % grid.n_points
    xs_win = cylinder.center_x + offs * grid.h
    base_win = base.values[np.ix_(rows, cols)]  # (n_times, n_win)

    kern = _kernels if backend is None else _kernels.available_backends()[backend]
    plan = CoefficientPlan(spec, xs_win, path, grid.dt)
    nw = len(offs)
    n_lvl_steps = j_top - j_bot
    u = base_win[0].copy()
    out = np.empty((n_lvl_steps, nw))
    cs_max = min(chunk_steps, max(1, n_lvl_steps))
    alap = np.empty((cs_max, nw)); agrad = np.empty((cs_max, nw))
    aself = np.empty((cs_max, nw)); asrc = np.empty((cs_max, nw))

    j = j_bot
    while j < j_top:
        cs = min(cs_max, j_top - j)
        wl, wg, wsf, wsrc = alap[:cs], agrad[:cs], aself[:cs], asrc[:cs]
        plan.weights(j, j + cs, wl, wg, wsf, wsrc)
        lo = j - j_bot
        left = np.ascontiguousarray(base_win[lo + 1: lo + cs + 1, 0])
        right = np.ascontiguousarray(base_win[lo + 1: lo + cs + 1, -1])
        bad = kern.step_dirichlet(u, wl, wg, wsf, wsrc, left, right,
                                  1.0 / grid.h ** 2, 0.5 / grid.h, blowup, out[lo: lo + cs])
        if bad >= 0:
            step = j + bad + 1
            raise BlowUpError(step=step, time=step * grid.dt, sup=math.inf, threshold=blowup)
        j += cs

    values = np.concatenate([base_win[:1], out], axis=0)
    times = need * grid.dt
    mask = np.ones(nw, dtype=bool)
    mask[0] = mask[-1] = True  # boundary nodes hold copied data but are valid values
    return GridSolution(xs_win, times, need, values, grid.h, grid.dt,
                        periodic=False, valid_mask=mask,
                        meta={"window_center": cylinder.center_x, "radius": cylinder.radius})


# ---------------------------------------------------------------------------
# ensembles

class Ensemble:
    """Realizations of one problem on one grid under one store policy."""

    def __init__(self, solutions, master_seed):
        if len(solutions) < 1:
            raise ValueError("ensemble needs at least one member")
        ref = solutions[0]
        for s in solutions[1:]:
            if s.values.shape != ref.values.shape or not np.array_equal(s.state_indices, ref.state_indices):
                raise ValueError("ensemble members disagree on grid or store policy")
        self.members = list(solutions)
        self.master_seed = master_seed
        self.xs = ref.xs
        self.times = ref.times
        self.state_indices = ref.state_indices
        self.h = ref.h
        self.dt = ref.dt
        self.periodic = ref.periodic
        self.valid_mask = ref.valid_mask
        self.stacked = np.stack([s.values for s in self.members])  # (N, nt, nx)
        self.stacked.setflags(write=False)

    @property
    def n_samples(self):
        return len(self.members)

    def derived(self, order):
        """Stacked x-derivatives (N, nt, nx) plus the node validity mask."""
        if order == 0:
            return self.stacked, self.valid_mask
        ds = [discrete_derivative(s, order) for s in self.members]
        return np.stack([d.values for d in ds]), ds[0].valid_mask


def run_ensemble(spec, grid, master_seed, n_samples, store="all", workers=1,
                 observer_factory=None, initial_state=None, blowup=1e12,
                 chunk_steps=512, backend=None):
    """Solve n_samples independent realizations; reproducible per index.

    Returns (Ensemble, observer_results) where observer_results[i] is whatever
    observer_factory(i) returned (the factory result's callable attribute
    `observe` is registered, or the object itself if callable).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ncfg = NoiseConfig(modes=spec.modes, n_steps=grid.n_steps, horizon=grid.horizon)
    cert = stability_check(spec, grid)
    if not cert.granted:
        raise StabilityError(str(cert))

    sols = [None] * n_samples
    obs_results = [None] * n_samples

    def work(i):
        path = sample_path(ncfg, master_seed, i)
        observers = []
        if observer_factory is not None:
            ob = observer_factory(i)
            obs_results[i] = ob
            observers.append(ob.observe if hasattr(ob, "observe") else ob)
        sols[i] = solve_realization(
            spec, path, grid, store=store, observers=observers,
            initial_state=initial_state, blowup=blowup, chunk_steps=chunk_steps,
            certificate=cert, backend=backend)

    if workers <= 1:
        for i in range(n_samples):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, range(n_samples)))

    return Ensemble(sols, master_seed), obs_results


# ---------------------------------------------------------------------------
# export

def solution_to_csv(sol, fp):
    """Long-format dump: state_index, t, x, value."""
    fp.write("state_index,t,x,value\n")
    for r in range(sol.n_stored):
        s = sol.state_indices[r]
        t = sol.times[r]
        for i, x in enumerate(sol.xs):
            fp.write("%d,%s,%s,%s\n" % (s, fmt_float(t), fmt_float(x), fmt_float(sol.values[r, i])))


def solution_to_npz(sol, path):
    np.savez_compressed(
        path, xs=sol.xs, times=sol.times, state_indices=sol.state_indices,
        values=sol.values, h=sol.h, dt=sol.dt, periodic=sol.periodic,
        valid_mask=sol.valid_mask)


def ensemble_to_npz(ens, path):
    np.savez_compressed(
        path, xs=ens.xs, times=ens.times, state_indices=ens.state_indices,
        stacked=ens.stacked, h=ens.h, dt=ens.dt,
        master_seed=np.int64(ens.master_seed))
