"""Frozen-coefficient solves on nested parabolic cylinders.

A base realization is marched across the whole torus while companion
problems with coefficients and forcing frozen at the cylinder center are
marched on dyadically shrinking windows, all on one shared grid and one
shared noise path.  Everything downstream -- mean-square gaps to the base
solution, sup norms of derivative differences between consecutive levels,
second derivatives at the center -- is accumulated while stepping, so no
full space-time history is ever held.

Level l solves on the cylinder of radius radius * rho^l; consecutive-level
differences are measured two levels further in, where their derivatives are
clean of boundary effects.
"""

import math
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .model import (CoefficientField, ModeField, ZeroPathView, mode_field,
                    scalar_field)
from .noise import NoiseConfig, sample_path
from .norms import (DiniModulus, FieldLattice, dini_integrals, dini_modulus,
                    lattice_from_field)
from .solver import (BlowUpError, CoefficientPlan, Ensemble, GridSolution,
                     StabilityError, make_grid, run_ensemble, stability_check)
from .util import fmt_float, log_spaced_indices, to_json_text


@dataclass(frozen=True)
class CascadeConfig:
    center_x: float
    rho: float = 0.5
    levels: int = 5
    radius: float = 1.0
    n_points: int = 256
    n_samples: int = 2
    master_seed: int = 0
    c_stab: float = 0.5
    chunk_steps: int = 1024
    refine_max: int = 3
    store_slices: int = 65
    eval_slices: int = 24
    blowup: float = 1e12
    workers: int = 1

    def __post_init__(self):
        if not (0.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def freeze_problem(spec, x0, h):
    """Coefficients and f frozen at x = x0; g linearized to first order there.

    The x-derivative of g is taken as a centered difference with the solve
    spacing h, so the frozen problem sees exactly the data the discrete
    scheme sees.
    """
    x0 = float(x0)
    xp = np.asarray([x0])

    def frozen_scalar(fld):
        if not fld.depends_x:
            return fld
        def fn(x, t, w, _fld=fld):
            v = np.asarray(_fld(xp, t, w), dtype=np.float64).reshape(-1)[0]
            return np.broadcast_to(v, np.shape(x)) if np.ndim(x) else v
        return CoefficientField(fn, depends_x=False, depends_t=fld.depends_t,
                                depends_path=fld.depends_path, name=fld.name + "@center")

    def frozen_mode(fld):
        if not fld.depends_x:
            return fld
        def fn(x, t, w, _fld=fld):
            v = _fld.on_grid(xp, t, w)  # (modes, 1)
            return np.broadcast_to(v, (_fld.modes, np.size(x)))
        return ModeField(fn, fld.modes, depends_x=False, depends_t=fld.depends_t,
                         depends_path=fld.depends_path, name=fld.name + "@center")

    g0 = spec.g
    if g0.depends_x:
        xpm = np.asarray([x0 - h, x0 + h])

        def g_fn(x, t, w):
            v0 = g0.on_grid(xp, t, w)            # (modes, 1)
            vpm = g0.on_grid(xpm, t, w)          # (modes, 2)
            gx = (vpm[:, 1:2] - vpm[:, 0:1]) / (2.0 * h)
            dx = np.asarray(x) - x0
            return v0 + gx * dx[None, :]

        g_new = ModeField(g_fn, g0.modes, depends_x=True, depends_t=g0.depends_t,
                          depends_path=g0.depends_path, name="g@center+linear")
    else:
        g_new = g0

    return replace(
        spec,
        a=frozen_scalar(spec.a), b=frozen_scalar(spec.b), c=frozen_scalar(spec.c),
        f=frozen_scalar(spec.f),
        sigma=frozen_mode(spec.sigma), nu=frozen_mode(spec.nu), g=g_new,
        name=spec.name + "@frozen")


# ---------------------------------------------------------------------------
# geometry helpers

def _cascade_grid(spec, cfg):
    """Choose the shared grid: refine by doublings until the deepest window
    and the deepest evaluation cylinder are resolved; truncate levels if the
    refinement cap is hit."""
    notices = []
    levels = cfg.levels
    n_points = cfg.n_points
    horizon = cfg.radius ** 2
    if abs(spec.horizon - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(
            "problem horizon %s must equal radius^2 = %s for the cascade"
            % (fmt_float(spec.horizon), fmt_float(horizon)))

    def h_needed(lv):
        return cfg.radius * min(cfg.rho ** lv / 4.0, cfg.rho ** (lv + 1) / 2.0)

    doublings = 0
    while spec.length / n_points > h_needed(levels) and doublings < cfg.refine_max:
        n_points *= 2
        doublings += 1
    if spec.length / n_points > h_needed(levels):
        while levels > 2 and spec.length / n_points > h_needed(levels):
            levels -= 1
        notices.append("levels truncated to %d: refinement cap %d doublings reached"
                       % (levels, cfg.refine_max))
    if doublings:
        notices.append("grid refined %dx to n_points=%d" % (2 ** doublings, n_points))

    grid = make_grid(spec, n_points, horizon=horizon, c_stab=cfg.c_stab)
    return grid, levels, notices


def _eval_steps(n_steps, depth_steps, count):
    """Log-spaced ladder of state indices below the top slice."""
    depth = max(1, depth_steps)
    offs = log_spaced_indices(depth, count)
    return np.unique(n_steps - offs)


def _window_data_lattices(spec, grid, center, ic, radius, times, paths):
    """f, g and g_x lattices on the torus window around the center.

    Values and the g derivative are taken on the full periodic lattice first
    and then gathered by column, so a window straddling the coordinate seam
    keeps contiguous geometry and exact seam derivatives.
    """
    half = int(math.ceil(radius / grid.h - 1e-12))
    offs = np.arange(-half, half + 1)
    cols = (ic + offs) % grid.n_points
    xs_win = center + offs * grid.h
    f_full = lattice_from_field(spec.f, grid.xs, times, paths, grid.h,
                                periodic=True, length=spec.length)
    g_full = lattice_from_field(spec.g, grid.xs, times, paths, grid.h,
                                periodic=True, length=spec.length,
                                modes=spec.modes)
    gx_full = g_full.derivative(1)
    f_lat = FieldLattice(f_full.values[..., cols], xs_win, times, grid.h,
                         periodic=False)
    g_lat = FieldLattice(g_full.values[..., cols], xs_win, times, grid.h,
                         periodic=False)
    gx_lat = FieldLattice(gx_full.values[..., cols], xs_win, times, grid.h,
                          periodic=False)
    return f_lat, g_lat, gx_lat


@dataclass
class _LevelGeometry:
    level: int
    radius: float
    half: int
    cols: np.ndarray          # base-grid columns of the window
    xs: np.ndarray            # unrolled coordinates
    j_bot: int
    j_sel: np.ndarray         # window-local nodes with |x - c| <= radius


def _build_geometry(spec, cfg, grid, levels):
    h, dt = grid.h, grid.dt
    n_steps = grid.n_steps
    ic = int(round(cfg.center_x / h))
    center = ic * h
    geoms = []
    for l in range(levels + 1):
        r = cfg.radius * cfg.rho ** l
        half = int(math.ceil(r / h - 1e-12))
        if half < 4:
            raise ValueError("level %d window has %d nodes per side; grid too coarse" % (l, half))
        offs = np.arange(-half, half + 1)
        cols = (ic + offs) % grid.n_points
        xs = center + offs * h
        j_bot = max(0, int(math.floor((grid.horizon - r * r) / dt + 1e-9)))
        j_sel = np.flatnonzero(np.abs(offs) * h <= r + 1e-12)
        geoms.append(_LevelGeometry(level=l, radius=r, half=half, cols=cols,
                                    xs=xs, j_bot=j_bot, j_sel=j_sel))
    return ic, center, geoms


# ---------------------------------------------------------------------------
# the interleaved engine

class _SampleRun:
    """State and accumulators for one realization."""

    def __init__(self, spec, frozen, grid, geoms, path, cfg, store_idx, eval_specs):
        self.grid = grid
        self.geoms = geoms
        self.cfg = cfg
        self.path = path
        nx = grid.n_points
        self.u_base = np.zeros(nx)
        self.base_plan = CoefficientPlan(spec, grid.xs, path, grid.dt)
        self.level_plans = [CoefficientPlan(frozen, g.xs, path, grid.dt) for g in geoms]
        self.u_levels = [None] * len(geoms)
        self.j_quad = np.zeros(len(geoms))
        self.j_count = np.zeros(len(geoms), dtype=np.int64)
        self.store_idx = store_idx
        self.store_pos = {int(s): i for i, s in enumerate(store_idx)}
        self.stored = np.zeros((len(store_idx), nx))
        # eval_specs: per pair l: (steps, sel_window_nodes) on window l+1
        self.eval_specs = eval_specs
        self.captures = [np.zeros((len(steps), len(geoms[l + 1].xs)))
                         for l, (steps, _) in enumerate(eval_specs)]
        self.capture_rows = [{int(s): r for r, s in enumerate(steps)}
                             for (steps, _) in eval_specs]

    def bottom_init(self, j):
        for l, g in enumerate(self.geoms):
            if g.j_bot == j and self.u_levels[l] is None:
                self.u_levels[l] = self.u_base[g.cols].copy()

    def consume(self, j0, base_hist, level_hists):
        cs = base_hist.shape[0]
        sidx = np.arange(j0 + 1, j0 + cs + 1)
        for r, s in enumerate(sidx):
            pos = self.store_pos.get(int(s))
            if pos is not None:
                self.stored[pos] = base_hist[r]
        for l, g in enumerate(self.geoms):
            hist = level_hists[l]
            if hist is None:
                continue
            d = hist[:, g.j_sel] - base_hist[:, g.cols[g.j_sel]]
            self.j_quad[l] += float(np.sum(d * d))
            self.j_count[l] += d.size
        for l, (steps, _) in enumerate(self.eval_specs):
            if level_hists[l] is None or level_hists[l + 1] is None:
                continue
            gA, gB = self.geoms[l], self.geoms[l + 1]
            lo = gA.half - gB.half
            rows = self.capture_rows[l]
            for r, s in enumerate(sidx):
                rr = rows.get(int(s))
                if rr is not None:
                    self.captures[l][rr] = (
                        level_hists[l][r, lo: lo + len(gB.xs)] - level_hists[l + 1][r])

    def center_uxx(self):
        h2 = self.grid.h ** 2
        out = []
        for l, g in enumerate(self.geoms):
            u = self.u_levels[l]
            c = g.half
            out.append((u[c + 1] - 2.0 * u[c] + u[c - 1]) / h2)
        return np.array(out)

    def base_center_uxx(self, ic):
        u = self.u_base
        nx = len(u)
        h2 = self.grid.h ** 2
        return (u[(ic + 1) % nx] - 2.0 * u[ic] + u[(ic - 1) % nx]) / h2


def _segments(n_steps, breakpoints, chunk):
    pts = sorted(set([0, n_steps] + [b for b in breakpoints if 0 < b < n_steps]))
    for a, b in zip(pts[:-1], pts[1:]):
        j = a
        while j < b:
            cs = min(chunk, b - j)
            yield j, j + cs
            j += cs


def _run_one_sample(spec, frozen, grid, geoms, cfg, store_idx, eval_specs, sample_index):
    ncfg = NoiseConfig(modes=spec.modes, n_steps=grid.n_steps, horizon=grid.horizon)
    path = sample_path(ncfg, cfg.master_seed, sample_index)
    run = _SampleRun(spec, frozen, grid, geoms, path, cfg, store_idx, eval_specs)
    nx = grid.n_points
    cs_max = min(cfg.chunk_steps, grid.n_steps)
    kern = _kernels
    inv_h2, inv_2h = 1.0 / grid.h ** 2, 0.5 / grid.h

    buf = [np.empty((cs_max, nx)) for _ in range(5)]
    lbuf = [[np.empty((cs_max, len(g.xs))) for _ in range(5)] for g in geoms]

    for j0, j1 in _segments(grid.n_steps, [g.j_bot for g in geoms], cs_max):
        run.bottom_init(j0)
        cs = j1 - j0
        wl, wg, ws, wf, hist = (b[:cs] for b in buf)
        run.base_plan.weights(j0, j1, wl, wg, ws, wf)
        bad = kern.step_periodic(run.u_base, wl, wg, ws, wf, inv_h2, inv_2h,
                                 cfg.blowup, hist)
        if bad >= 0:
            step = j0 + bad + 1
            raise BlowUpError(step=step, time=step * grid.dt, sup=math.inf,
                              threshold=cfg.blowup)
        level_hists = [None] * len(geoms)
        for l, g in enumerate(geoms):
            if run.u_levels[l] is None:
                continue
            ll, lg, ls, lf, lhist = (b[:cs] for b in lbuf[l])
            run.level_plans[l].weights(j0, j1, ll, lg, ls, lf)
            left = np.ascontiguousarray(hist[:, g.cols[0]])
            right = np.ascontiguousarray(hist[:, g.cols[-1]])
            bad = kern.step_dirichlet(run.u_levels[l], ll, lg, ls, lf, left, right,
                                      inv_h2, inv_2h, cfg.blowup, lhist)
            if bad >= 0:
                step = j0 + bad + 1
                raise BlowUpError(step=step, time=step * grid.dt, sup=math.inf,
                                  threshold=cfg.blowup)
            level_hists[l] = lhist
        run.consume(j0, hist, level_hists)
    return run


# ---------------------------------------------------------------------------
# report

@dataclass
class CascadeReport:
    config: dict
    notices: list
    level_rows: list          # per pair l: radii, sup gaps, decay ratios
    j_rows: list              # per level l: mean-square gap to the base run
    uxx_rows: list            # per level l: center second-derivative gap
    omega: DiniModulus
    m1_terms: dict
    fits: dict
    tails: list
    uxx_base: float = 0.0
    base_ensemble: Ensemble = None
    runtime_s: float = 0.0

    def to_dict(self):
        return {
            "config": self.config,
            "notices": list(self.notices),
            "j_rows": self.j_rows,
            "level_rows": self.level_rows,
            "uxx_rows": self.uxx_rows,
            "m1_terms": self.m1_terms,
            "fits": self.fits,
            "tails": self.tails,
            "uxx_base": self.uxx_base,
            "omega": {"radii": self.omega.radii, "omega": self.omega.omega},
            "runtime_s": self.runtime_s,
        }

    def to_json(self, indent=2):
        return to_json_text(self.to_dict(), indent=indent)

    def levels_csv(self, fp):
        fp.write("level,radius,mean_square_gap,diff_sup_d1,diff_sup_d2,"
                 "decay_ratio_d1,decay_ratio_d2\n")
        for row in self.level_rows:
            fp.write("%d,%s,%s,%s,%s,%s,%s\n" % (
                row["level"], fmt_float(row["radius"]),
                fmt_float(row["mean_square_gap"]),
                fmt_float(row["diff_sup_d1"]), fmt_float(row["diff_sup_d2"]),
                fmt_float(row["decay_ratio_d1"]), fmt_float(row["decay_ratio_d2"])))


def run_cascade(spec, cfg, base_ensemble=None):
    """Execute the cascade and measure every decay quantity.

    If base_ensemble is given it supplies the master seed and is cross-checked
    against the internally recomputed base run (the stream of boundary values
    needs every step, which stored ensembles do not keep).
    """
    t_start = _time.perf_counter()
    if spec.dim != 1:
        raise ValueError("the cascade runs in one dimension")
    if base_ensemble is not None:
        cfg = replace(cfg, master_seed=base_ensemble.master_seed,
                      n_samples=base_ensemble.n_samples)
    grid, levels, notices = _cascade_grid(spec, cfg)
    cert = stability_check(spec, grid, c_stab=cfg.c_stab)
    if not cert.granted:
        raise StabilityError(str(cert))
    ic, center, geoms = _build_geometry(spec, cfg, grid, levels)
    if abs(center - cfg.center_x) > 1e-12 * max(1.0, abs(cfg.center_x)):
        notices.append("center snapped to node %s" % fmt_float(center))
    frozen = freeze_problem(spec, center, grid.h)

    n_steps = grid.n_steps
    store_idx = np.unique(np.concatenate(
        [log_spaced_indices(n_steps + 1, cfg.store_slices), [0, n_steps]]))
    eval_specs = []
    for l in range(levels):
        r_eval = cfg.radius * cfg.rho ** (l + 2)
        depth = int(r_eval ** 2 / grid.dt)
        steps = _eval_steps(n_steps, depth, cfg.eval_slices)
        g_in = geoms[l + 1]
        offs = np.arange(-g_in.half, g_in.half + 1)
        sel = np.flatnonzero((np.abs(offs) * grid.h <= r_eval + 1e-12)
                             & (np.abs(offs) <= g_in.half - 2))
        eval_specs.append((steps, sel))

    runs = [None] * cfg.n_samples

    def work(i):
        runs[i] = _run_one_sample(spec, frozen, grid, geoms, cfg, store_idx, eval_specs, i)

    if cfg.workers <= 1:
        for i in range(cfg.n_samples):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            list(ex.map(work, range(cfg.n_samples)))

    p = spec.holder.p
    N = cfg.n_samples

    # base ensemble snapshot (strided) for norms, modulus and cross-checks
    sols = []
    for i, run in enumerate(runs):
        sols.append(GridSolution(grid.xs, store_idx * grid.dt, store_idx,
                                 run.stored, grid.h, grid.dt, periodic=True,
                                 meta={"seed_key": (cfg.master_seed, i)}))
    base_ens = Ensemble(sols, cfg.master_seed)
    if base_ensemble is not None:
        common = np.intersect1d(base_ensemble.state_indices, base_ens.state_indices)
        if len(common):
            ra = np.searchsorted(base_ensemble.state_indices, common)
            rb = np.searchsorted(base_ens.state_indices, common)
            gap = float(np.max(np.abs(base_ensemble.stacked[:, ra, :]
                                      - base_ens.stacked[:, rb, :])))
            if gap > 1e-9:
                notices.append("base ensemble mismatch: max |gap| = %s" % fmt_float(gap))

    # modulus of the data over the base cylinder
    node_mask = np.abs(((grid.xs - center + spec.length / 2) % spec.length)
                       - spec.length / 2) <= cfg.radius + 1e-12
    times = store_idx * grid.dt
    ncfg = NoiseConfig(spec.modes, n_steps, grid.horizon)
    if spec.f.depends_path or spec.g.depends_path:
        paths = [sample_path(ncfg, cfg.master_seed, i) for i in range(N)]
    else:
        paths = [None]
    f_lat, g_lat, gx_lat = _window_data_lattices(spec, grid, center, ic,
                                                 cfg.radius, times, paths)
    omega = dini_modulus(f_lat, gx_lat, p=p)

    # M1 = sup |u| + sup |f| + (sup |g| + sup |g_x|) over the base cylinder
    def _sup(lat):
        vals = _lp_lattice(lat.magnitudes(), p)
        return float(np.max(vals[..., lat.valid_mask]))

    m1_u = float(np.max(_lp_lattice(base_ens.stacked[..., node_mask], p)))
    m1_f = _sup(f_lat)
    m1_g = _sup(g_lat)
    m1_gx = _sup(gx_lat)
    m1 = m1_u + m1_f + m1_g + m1_gx
    m1_terms = {"u_sup": m1_u, "f_sup": m1_f, "g_sup": m1_g, "gx_sup": m1_gx, "M1": m1}

    # J rows: J_l = || avg over Q^l of (u^l - u)^2 ||_{p/2}^{1/2}
    j_rows = []
    omega_at = [omega.omega_at(g.radius) for g in geoms]
    for l, g in enumerate(geoms):
        z = np.array([run.j_quad[l] / max(run.j_count[l], 1) for run in runs])
        jl = float(np.mean(z ** (p / 2.0)) ** (1.0 / p))
        bound = cfg.rho ** (2 * l) * omega_at[l]
        j_rows.append({"level": l, "radius": g.radius, "j": jl,
                       "bound_scale": bound,
                       "ratio": _vacuous_ratio(jl, bound)})

    # pair rows: sup over the inner evaluation cylinder of |D^m (u^l - u^{l+1})|
    level_rows = []
    h = grid.h
    for l, (steps, sel) in enumerate(eval_specs):
        diffs = np.stack([run.captures[l] for run in runs])  # (N, n_eval, w)
        d1 = (diffs[..., 2:] - diffs[..., :-2]) / (2 * h)
        d2 = (diffs[..., 2:] - 2 * diffs[..., 1:-1] + diffs[..., :-2]) / (h * h)
        sel1 = sel - 1  # arrays above lose one node at each edge
        i1 = float(np.max(_lp_lattice(d1[..., sel1], p)))
        i2 = float(np.max(_lp_lattice(d2[..., sel1], p)))
        w_l = omega_at[l]
        r1 = _vacuous_ratio(i1, cfg.rho ** l * w_l)
        r2 = _vacuous_ratio(i2, w_l)
        level_rows.append({
            "level": l, "radius": geoms[l].radius,
            "eval_radius": cfg.radius * cfg.rho ** (l + 2),
            "mean_square_gap": j_rows[l]["j"],
            "diff_sup_d1": i1, "diff_sup_d2": i2,
            "decay_ratio_d1": r1, "decay_ratio_d2": r2,
            "omega": w_l, "n_eval_times": len(steps), "n_eval_nodes": len(sel),
        })

    # center second derivatives
    base_uxx = np.array([run.base_center_uxx(ic) for run in runs])
    uxx_rows = []
    for l, g in enumerate(geoms):
        lvl = np.array([run.center_uxx()[l] for run in runs])
        gapv = lvl - base_uxx
        gap_l2 = float(np.sqrt(np.mean(gapv ** 2)))
        gap_lp = float(np.mean(np.abs(gapv) ** p) ** (1.0 / p))
        uxx_rows.append({"level": l, "radius": g.radius,
                         "uxx_level": float(np.sqrt(np.mean(lvl ** 2))),
                         "gap_l2": gap_l2, "gap_lp": gap_lp})

    # fits: decay slope of J, effective modulus exponent, pair decay ratio
    fits = {}
    rs = np.array([row["radius"] for row in j_rows])
    js = np.array([row["j"] for row in j_rows])
    ok = js > 0
    if ok.sum() >= 2:
        fits["j_slope"] = float(np.polyfit(np.log(rs[ok]), np.log(js[ok]), 1)[0])
    else:
        fits["j_slope"] = math.nan
    w_ok = np.array(omega_at) > 0
    if w_ok.sum() >= 2:
        fits["alpha_eff"] = float(np.polyfit(np.log(rs[w_ok]),
                                             np.log(np.array(omega_at)[w_ok]), 1)[0])
    else:
        fits["alpha_eff"] = math.nan
    i2s = np.array([row["diff_sup_d2"] for row in level_rows])
    if np.all(i2s[:-1] > 0):
        qs = i2s[1:] / i2s[:-1]
        fits["decay_q"] = float(np.median(qs))
    else:
        fits["decay_q"] = math.nan

    # tail sums of the d2 gaps, closed with a geometric extrapolation
    tails = []
    q = fits["decay_q"]
    extrap = i2s[-1] * q / (1 - q) if (np.isfinite(q) and 0 < q < 1) else math.nan
    for l in range(len(level_rows)):
        tail = float(np.sum(i2s[l:]) + (extrap if np.isfinite(extrap) else 0.0))
        i_small, _ = dini_integrals(omega, delta=geoms[l].radius, r_top=cfg.radius)
        tails.append({"level": l, "tail": tail, "dini_small": i_small,
                      "c_fit": tail / i_small if i_small > 0 else math.inf})
    fits["tail_extrapolation"] = float(extrap) if np.isfinite(extrap) else math.nan

    cfg_echo = {
        "rho": cfg.rho, "levels": levels, "radius": cfg.radius,
        "center_x": center, "n_points": grid.n_points, "n_steps": grid.n_steps,
        "h": grid.h, "dt": grid.dt, "n_samples": N, "master_seed": cfg.master_seed,
        "p": p,
    }
    return CascadeReport(config=cfg_echo, notices=notices, level_rows=level_rows,
                         j_rows=j_rows, uxx_rows=uxx_rows, omega=omega,
                         m1_terms=m1_terms, fits=fits, tails=tails,
                         uxx_base=float(np.sqrt(np.mean(base_uxx ** 2))),
                         base_ensemble=base_ens,
                         runtime_s=_time.perf_counter() - t_start)


def _lp_lattice(vals, p):
    if p == 2:
        return np.sqrt(np.mean(vals * vals, axis=0))
    return np.mean(np.abs(vals) ** p, axis=0) ** (1.0 / p)


def _vacuous_ratio(num, den, tol=1e-12):
    """num/den, with 0/0 counting as trivially satisfied rather than infinite."""
    if den > 0:
        return num / den
    return 0.0 if num <= tol else math.inf


# ---------------------------------------------------------------------------
# decay checks

@dataclass
class CheckResult:
    name: str
    ok: bool
    values: dict
    notes: list = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        core = ", ".join("%s=%s" % (k, fmt_float(v) if isinstance(v, float) else v)
                         for k, v in self.values.items())
        return "%s %s: %s" % (self.name, status, core)


def check_difference_decay(report, spread_max=10.0, slope_tol=0.3):
    """Bounded decay ratios for the consecutive-level differences, and the
    mean-square gap decaying like radius^(2 + alpha_eff)."""
    rows = report.level_rows
    if len(rows) < 3:
        raise ValueError("need at least 3 levels, got %d" % len(rows))
    ratios = np.array([r["decay_ratio_d2"] for r in rows])
    omegas = np.array([r["omega"] for r in rows])
    sups = np.array([r["diff_sup_d2"] for r in rows])
    if np.any((omegas == 0) & (sups > 1e-12)):
        return CheckResult("difference-decay", False,
                           {"spread": math.inf},
                           ["zero modulus with nonzero level differences"])
    if np.all(sups <= 1e-14) and np.all(omegas <= 1e-14):
        return CheckResult("difference-decay", True, {"spread": 1.0},
                           ["vacuous: data and level differences are zero"])
    med = float(np.median(ratios))
    spread = float(np.max(ratios) / med) if med > 0 else math.inf
    slope_gap = report.fits["j_slope"] - (2.0 + report.fits["alpha_eff"])
    ok = bool(np.all(np.isfinite(ratios))) and spread <= spread_max \
        and abs(slope_gap) <= slope_tol
    return CheckResult("difference-decay", ok,
                       {"spread": spread, "j_slope": report.fits["j_slope"],
                        "expected_slope": 2.0 + report.fits["alpha_eff"],
                        "slope_gap": float(slope_gap)})


def check_second_derivative_convergence(report, variation_max=3.0, gap_factor=2.0):
    """Tail sums controlled by the small-radius Dini integral with a stable
    constant, and the deepest center gap within a factor of the extrapolated
    tail."""
    i2s = np.array([r["diff_sup_d2"] for r in report.level_rows])
    if np.all(i2s <= 1e-14) and report.uxx_rows[-1]["gap_l2"] <= 1e-14:
        return CheckResult("uxx-convergence", True, {"c_variation": 1.0},
                           ["vacuous: all level differences are zero"])
    if len(i2s) >= 3 and np.all(np.diff(i2s[-3:]) > 0):
        return CheckResult("uxx-convergence", False,
                           {"trace": list(map(float, i2s))},
                           ["level differences increasing: no convergence"])
    cs = np.array([t["c_fit"] for t in report.tails])
    cs = cs[np.isfinite(cs) & (cs > 0)]
    variation = float(np.max(cs) / np.min(cs)) if len(cs) else math.inf
    deepest_gap = report.uxx_rows[-1]["gap_l2"]
    extrap = report.fits.get("tail_extrapolation", math.nan)
    gap_ok = bool(np.isfinite(extrap)) and deepest_gap <= gap_factor * extrap
    ok = variation <= variation_max and gap_ok
    return CheckResult("uxx-convergence", ok,
                       {"c_variation": variation, "deepest_gap": deepest_gap,
                        "extrapolated_tail": extrap,
                        "gap_over_tail": deepest_gap / extrap if extrap else math.inf})


# ---------------------------------------------------------------------------
# interior estimate over random pairs

def dini_estimate_check(spec, cfg, pairs=100, eval_fraction=0.25, pair_seed=0,
                        store_slices=48, workers=1):
    """Ratio of ||u_xx(X) - u_xx(Y)||_p to the modulus-based bound
    delta*M1 + int_0^delta omega/r dr + delta int_delta^1 omega/r^2 dr
    over pairs X, Y in the shrunken cylinder.

    pairs may be an explicit list of ((x,t),(y,s)) or a count of seeded
    stratified random pairs.  Points are snapped to the stored lattice.
    """
    t0 = _time.perf_counter()
    grid, levels, notices = _cascade_grid(spec, cfg)
    ic, center, geoms = _build_geometry(spec, cfg, grid, levels)
    n_steps = grid.n_steps
    r_eval = cfg.radius * eval_fraction
    depth = int(r_eval ** 2 / grid.dt)
    eval_idx = _eval_steps(n_steps, depth, store_slices)
    store_idx = np.unique(np.concatenate(
        [log_spaced_indices(n_steps + 1, cfg.store_slices), eval_idx, [0, n_steps]]))
    ens, _ = run_ensemble(spec, grid, cfg.master_seed, cfg.n_samples,
                          store=store_idx, workers=max(1, workers),
                          chunk_steps=cfg.chunk_steps, blowup=cfg.blowup)

    # measured modulus and M1 over the base cylinder (as in run_cascade)
    node_mask = np.abs(((grid.xs - center + spec.length / 2) % spec.length)
                       - spec.length / 2) <= cfg.radius + 1e-12
    times = store_idx * grid.dt
    p = spec.holder.p
    ncfg = NoiseConfig(spec.modes, n_steps, grid.horizon)
    paths = ([sample_path(ncfg, cfg.master_seed, i) for i in range(cfg.n_samples)]
             if (spec.f.depends_path or spec.g.depends_path) else [None])
    f_lat, g_lat, gx_lat = _window_data_lattices(spec, grid, center, ic,
                                                 cfg.radius, times, paths)
    omega = dini_modulus(f_lat, gx_lat, p=p)
    mags = np.abs(ens.stacked[..., node_mask])
    m1 = float(np.max(_lp_lattice(mags, p)))

    def _sup(lat):
        v = lat.magnitudes()[..., lat.valid_mask]
        return float(np.max(_lp_lattice(v, p)))

    m1 += _sup(f_lat) + _sup(g_lat) + _sup(gx_lat)

    # second-derivative lattice restricted to the evaluation cylinder
    uxx, uxx_mask = ens.derived(2)
    exs = grid.xs
    dxs = np.abs(((exs - center + spec.length / 2) % spec.length) - spec.length / 2)
    in_nodes = np.flatnonzero((dxs <= r_eval + 1e-12) & uxx_mask)
    in_times = np.flatnonzero((times > grid.horizon - r_eval ** 2 + 1e-12)
                              & (times <= grid.horizon + 1e-12))
    if len(in_nodes) < 2 or len(in_times) < 1:
        raise ValueError("evaluation cylinder is unresolved on this grid")

    if isinstance(pairs, int):
        rng = np.random.default_rng(pair_seed)
        cand = pairs * 20
        ia = rng.integers(0, len(in_times), cand)
        ja = rng.integers(0, len(in_nodes), cand)
        ib = rng.integers(0, len(in_times), cand)
        jb = rng.integers(0, len(in_nodes), cand)
        keep = (ia != ib) | (ja != jb)
        ia, ja, ib, jb = ia[keep], ja[keep], ib[keep], jb[keep]
        dx = np.abs(exs[in_nodes[ja]] - exs[in_nodes[jb]])
        dx = np.minimum(dx, spec.length - dx)
        deltas = dx + np.sqrt(np.abs(times[in_times[ia]] - times[in_times[ib]]))
        bins = np.digitize(np.log(deltas), np.linspace(
            np.log(max(deltas.min(), 1e-12)), np.log(deltas.max()) + 1e-9, 11))
        chosen = []
        per_bin = max(1, pairs // 10)
        for b in range(1, 12):
            idx = np.flatnonzero(bins == b)
            if len(idx):
                chosen.append(rng.choice(idx, size=min(per_bin, len(idx)), replace=False))
        sel = rng.permutation(np.concatenate(chosen))[:pairs]
        pair_list = [((exs[in_nodes[ja[k]]], times[in_times[ia[k]]]),
                      (exs[in_nodes[jb[k]]], times[in_times[ib[k]]])) for k in sel]
    else:
        pair_list = pairs
        for (x1, t1), (x2, t2) in pair_list:
            d1 = abs(((x1 - center + spec.length / 2) % spec.length) - spec.length / 2)
            d2 = abs(((x2 - center + spec.length / 2) % spec.length) - spec.length / 2)
            if d1 > r_eval + 1e-9 or d2 > r_eval + 1e-9 \
                    or not (grid.horizon - r_eval ** 2 - 1e-9 < t1 <= grid.horizon + 1e-9) \
                    or not (grid.horizon - r_eval ** 2 - 1e-9 < t2 <= grid.horizon + 1e-9):
                raise ValueError("pair outside the evaluation cylinder of radius %s"
                                 % fmt_float(r_eval))

    rows = []
    for (x1, t1), (x2, t2) in pair_list:
        r1 = int(np.argmin(np.abs(times - t1)))
        i1 = int(np.argmin(np.abs(exs - x1)))
        r2 = int(np.argmin(np.abs(times - t2)))
        i2 = int(np.argmin(np.abs(exs - x2)))
        dx = abs(exs[i1] - exs[i2])
        dx = min(dx, spec.length - dx)
        delta = dx + math.sqrt(abs(times[r1] - times[r2]))
        if delta <= 0:
            continue
        lhs_samples = uxx[:, r1, i1] - uxx[:, r2, i2]
        lhs = float(np.mean(np.abs(lhs_samples) ** p) ** (1.0 / p))
        i_small, i_large = dini_integrals(omega, delta=delta, r_top=cfg.radius)
        rhs = delta * m1 + i_small + i_large
        rows.append({"x1": float(exs[i1]), "t1": float(times[r1]),
                     "x2": float(exs[i2]), "t2": float(times[r2]),
                     "delta": float(delta), "lhs": lhs, "rhs": float(rhs),
                     "ratio": lhs / rhs})
    ratios = np.array([r["ratio"] for r in rows])
    deltas = np.array([r["delta"] for r in rows])
    finite = np.isfinite(ratios) & (ratios > 0)
    if finite.sum() >= 3:
        slope = float(np.polyfit(np.log(deltas[finite]), np.log(ratios[finite]), 1)[0])
    else:
        slope = math.nan
    return {
        "rows": rows, "m1": m1, "n_pairs": len(rows),
        "max_ratio": float(np.max(ratios)) if len(ratios) else math.nan,
        "median_ratio": float(np.median(ratios)) if len(ratios) else math.nan,
        "ratio_slope": slope, "pair_seed": pair_seed,
        "notices": notices, "runtime_s": _time.perf_counter() - t0,
    }


# ---------------------------------------------------------------------------
# energy estimate

def energy_estimate_check(spec, radii, cfg, p=None, center_x=None):
    """Measured constants in ||u|| <= C (r^2 ||f|| + r ||g||) over cylinders
    B_r(x_c) x (0, r^2], all norms L^p(Omega; L^2).

    Runs two variants of the problem: g zeroed (reports rho_f) and f zeroed
    (reports rho_g); identically-zero variants are skipped.
    """
    t0 = _time.perf_counter()
    radii = sorted(radii, reverse=True)
    horizon = radii[0] ** 2
    if abs(spec.horizon - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("problem horizon must equal max(radius)^2 = %s"
                         % fmt_float(horizon))
    p = spec.holder.p if p is None else p
    grid = make_grid(spec, cfg.n_points, horizon=horizon, c_stab=cfg.c_stab)
    center = (cfg.center_x if center_x is None else center_x)
    ic = int(round(center / grid.h))
    center = ic * grid.h
    dxs = np.abs(((grid.xs - center + spec.length / 2) % spec.length) - spec.length / 2)
    masks = [dxs < r - 1e-12 for r in radii]
    depth_steps = [max(1, int(round(r * r / grid.dt))) for r in radii]

    out = {"radii": [float(r) for r in radii], "variants": {},
           "config": {"n_points": grid.n_points, "n_steps": grid.n_steps,
                      "center_x": center, "p": p}}

    for variant, keep in (("f", "f"), ("g", "g")):
        vspec = _zero_out(spec, keep)
        probe = ZeroPathView(spec.modes)
        f_static = not (vspec.f.depends_t or vspec.f.depends_path)
        g_static = not (vspec.g.depends_t or vspec.g.depends_path)
        fv = vspec.f.on_grid(grid.xs, 0.0, probe) if f_static else None
        gv = vspec.g.on_grid(grid.xs, 0.0, probe) if g_static else None
        trivial = ((keep == "f" and f_static and not np.any(fv))
                   or (keep == "g" and g_static and not np.any(gv)))
        if trivial:
            out["variants"][variant] = {"skipped": "forcing identically zero"}
            continue

        n_samples = cfg.n_samples
        acc = np.zeros((n_samples, len(radii)))
        last = np.zeros((n_samples, len(radii)))

        def factory(i):
            def obs(sidx, block, i=i):
                for r_i, (mask, dsteps) in enumerate(zip(masks, depth_steps)):
                    inside = (sidx >= 1) & (sidx <= dsteps)
                    if not np.any(inside):
                        continue
                    rows = block[inside][:, mask]
                    acc[i, r_i] += float(np.sum(rows * rows))
                    if dsteps >= sidx[0] and dsteps <= sidx[-1]:
                        pos = int(dsteps - sidx[0])
                        last[i, r_i] = float(np.sum(block[pos][mask] ** 2))
            return obs

        run_ensemble(vspec, grid, cfg.master_seed, n_samples, store="final",
                     observer_factory=factory, workers=cfg.workers,
                     chunk_steps=cfg.chunk_steps, blowup=cfg.blowup)

        rows = []
        for r_i, r in enumerate(radii):
            # trapezoid in t: full interior weights, half weight at the top
            quad = (acc[:, r_i] - 0.5 * last[:, r_i]) * grid.dt * grid.h
            u_norm = float(np.mean(np.maximum(quad, 0.0) ** (p / 2.0)) ** (1.0 / p))
            fq, gq = _forcing_quadrature(vspec, grid, masks[r_i], depth_steps[r_i],
                                         cfg, n_samples)
            f_norm = float(np.mean(fq ** (p / 2.0)) ** (1.0 / p))
            g_norm = float(np.mean(gq ** (p / 2.0)) ** (1.0 / p))
            denom = r * r * f_norm + r * g_norm
            row = {"r": float(r), "u_norm": u_norm, "f_norm": f_norm,
                   "g_norm": g_norm}
            if denom < 1e-14:
                row["vacuous"] = True
            else:
                row["rho"] = u_norm / denom
            rows.append(row)
        ratios = [row["rho"] for row in rows if "rho" in row]
        out["variants"][variant] = {
            "rows": rows,
            "spread": (max(ratios) / min(ratios)) if ratios and min(ratios) > 0 else math.inf,
        }
    out["runtime_s"] = _time.perf_counter() - t0
    return out


def _zero_out(spec, keep):
    if keep == "f":
        return replace(spec, g=mode_field(0.0, spec.modes, name="g_zero"),
                       name=spec.name + "-f-only")
    return replace(spec, f=scalar_field(0.0, name="f_zero"),
                   name=spec.name + "-g-only")


def _forcing_quadrature(spec, grid, mask, depth_steps, cfg, n_samples):
    """Per-sample squared L^2(Q_r) mass of f and of g (l2 over modes)."""
    probe = ZeroPathView(spec.modes)
    depth = depth_steps * grid.dt
    f_static = not (spec.f.depends_t or spec.f.depends_path)
    g_static = not (spec.g.depends_t or spec.g.depends_path)
    out_f = np.zeros(n_samples)
    out_g = np.zeros(n_samples)
    if f_static:
        fv = spec.f.on_grid(grid.xs, 0.0, probe)[mask]
        out_f[:] = float(np.sum(fv * fv)) * grid.h * depth
    if g_static:
        gv = spec.g.on_grid(grid.xs, 0.0, probe)[:, mask]
        out_g[:] = float(np.sum(gv * gv)) * grid.h * depth
    if f_static and g_static:
        return out_f, out_g
    ncfg = NoiseConfig(spec.modes, grid.n_steps, grid.horizon)
    for i in range(n_samples):
        path = sample_path(ncfg, cfg.master_seed, i)
        sf = sg = 0.0
        for j in range(depth_steps):
            t = j * grid.dt
            w = path.restrict(t)
            if not f_static:
                fv = spec.f.on_grid(grid.xs, t, w)[mask]
                sf += float(np.sum(fv * fv))
            if not g_static:
                gv = spec.g.on_grid(grid.xs, t, w)[:, mask]
                sg += float(np.sum(gv * gv))
        if not f_static:
            out_f[i] = sf * grid.h * grid.dt
        if not g_static:
            out_g[i] = sg * grid.h * grid.dt
    return out_f, out_g
