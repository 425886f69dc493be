"""Cross-checks of the solver against structure it must reproduce exactly:
closed-form solutions, linearity, grid-refinement convergence, and the
a-priori ratio between solution and data norms.
"""

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .model import scale_forcing
from .noise import NoiseConfig, sample_path
from .norms import holder_norm_x, lattice_from_ensemble, lattice_from_field, parabolic_holder_norm
from .solver import GridSolution, run_ensemble
from .util import fmt_float, sha256_text, to_json_text


def oracle_characteristics(a, sigma, profile, path, grid, store="all"):
    """Exact solution of du = a u_xx dt + sigma u_x dW for trigonometric data.

    profile lists (k, cos_amp, sin_amp) modes of the initial state.  The
    solution is phi(x + sigma W_t, t) where phi solves the heat equation with
    diffusivity a - sigma^2/2; that coefficient must be positive (it equals
    half the parabolicity margin plus lam/2).
    """
    nu_eff = a - 0.5 * sigma * sigma
    if nu_eff <= 0:
        raise ValueError("a - sigma^2/2 = %s <= 0: not parabolic" % fmt_float(nu_eff))
    from .solver import _store_indices

    idx = _store_indices(store, grid.n_steps)
    xs = grid.xs
    vals = np.zeros((len(idx), grid.n_points))
    for r, s in enumerate(idx):
        t = s * grid.dt
        shift = sigma * path.cumulative[0, s]
        y = xs + shift
        for (k, ca, sa) in profile:
            damp = math.exp(-k * k * nu_eff * t)
            vals[r] += damp * (ca * np.cos(k * y) + sa * np.sin(k * y))
    return GridSolution(xs, idx * grid.dt, idx, vals, grid.h, grid.dt,
                        periodic=True, meta={"oracle": "characteristics"})


def linearity_test(spec, scalars, grid, master_seed, n_samples=2, workers=1):
    """Max node-wise relative deviation of solve(c f, c g) from c solve(f, g)."""
    base, _ = run_ensemble(spec, grid, master_seed, n_samples, store="final", workers=workers)
    rows = []
    worst = 0.0
    for c in scalars:
        scaled, _ = run_ensemble(scale_forcing(spec, c), grid, master_seed,
                                 n_samples, store="final", workers=workers)
        ref = c * base.stacked
        scale = max(float(np.max(np.abs(ref))), 1e-300)
        dev = float(np.max(np.abs(scaled.stacked - ref))) / scale
        rows.append({"c": float(c), "max_rel_dev": dev})
        worst = max(worst, dev)
    return {"rows": rows, "max_rel_dev": worst}


def convergence_study(spec, grids, oracle_final, master_seed, n_samples,
                      initial_state=None, workers=1, p=2.0):
    """Strong final-time error against an exact per-path oracle, per grid.

    oracle_final(path, grid) must return the exact final slice.  Reports the
    L^p(Omega; L^2_x) error, the oracle norm, and the error ratio between
    consecutive grids.
    """
    rows = []
    prev_err = None
    for grid in grids:
        t0 = _time.perf_counter()
        ens, _ = run_ensemble(spec, grid, master_seed, n_samples, store="final",
                              initial_state=initial_state, workers=workers)
        ncfg = NoiseConfig(spec.modes, grid.n_steps, grid.horizon)
        errs = np.empty(n_samples)
        norms_ = np.empty(n_samples)
        for i in range(n_samples):
            path = sample_path(ncfg, master_seed, i)
            exact = oracle_final(path, grid)
            diff = ens.stacked[i, -1] - exact
            errs[i] = math.sqrt(float(np.mean(diff ** 2)) * grid.length)
            norms_[i] = math.sqrt(float(np.mean(exact ** 2)) * grid.length)
        err = float(np.mean(np.abs(errs) ** p) ** (1.0 / p))
        den = float(np.mean(np.abs(norms_) ** p) ** (1.0 / p))
        row = {
            "n_points": grid.n_points, "n_steps": grid.n_steps,
            "h": grid.h, "dt": grid.dt,
            "err": err, "oracle_norm": den, "rel_err": err / den,
            "ratio_vs_prev": (prev_err / err) if prev_err else math.nan,
            "runtime_s": _time.perf_counter() - t0,
        }
        rows.append(row)
        prev_err = err
    if len(rows) >= 2:
        hs = np.log([r["h"] for r in rows])
        es = np.log([r["err"] for r in rows])
        rate = float(np.polyfit(hs, es, 1)[0])
    else:
        rate = math.nan
    return {"rows": rows, "rate": rate}


@dataclass
class SchauderReport:
    rows: list
    spread: float
    spread_max: float
    ok: bool
    skipped: list = field(default_factory=list)

    def table(self):
        lines = ["%-24s %12s %12s %12s %10s" % ("member", "|u|", "|f|", "|g|", "ratio")]
        for r in self.rows:
            lines.append("%-24s %12.5g %12.5g %12.5g %10.4g" % (
                r["name"], r["u_norm"], r["f_norm"], r["g_norm"], r["ratio"]))
        lines.append("spread = %.4g (max allowed %.4g): %s" % (
            self.spread, self.spread_max, "pass" if self.ok else "FAIL"))
        return "\n".join(lines)


def schauder_ratio_experiment(members, grid, master_seed, n_samples, alpha, p,
                              store=8, spread_max=10.0, pair_budget=400_000,
                              workers=1, norm_floor=1e-10, subsample_seed=0):
    """Ratio |u|_(2+alpha) / (|f|_alpha + |g|_(1+alpha)) across a family.

    Each member is (name, spec); all solve from zero data on the same grid
    with the same seed.  Members whose data norm falls below norm_floor are
    reported as skipped rather than divided by.
    """
    rows = []
    skipped = []
    for name, spec in members:
        ens, _ = run_ensemble(spec, grid, master_seed, n_samples, store=store, workers=workers)
        u_lat = lattice_from_ensemble(ens)
        u_rep = parabolic_holder_norm(u_lat, m=2, alpha=alpha, p=p,
                                      pair_budget=pair_budget, seed=subsample_seed)
        ncfg = NoiseConfig(spec.modes, grid.n_steps, grid.horizon)
        if spec.f.depends_path or spec.g.depends_path:
            paths = [sample_path(ncfg, master_seed, i) for i in range(n_samples)]
        else:
            paths = [None]
        f_lat = lattice_from_field(spec.f, ens.xs, ens.times, paths, ens.h,
                                   periodic=True, length=spec.length)
        g_lat = lattice_from_field(spec.g, ens.xs, ens.times, paths, ens.h,
                                   periodic=True, length=spec.length, modes=spec.modes)
        f_rep = holder_norm_x(f_lat, m=0, alpha=alpha, p=p,
                              pair_budget=pair_budget, seed=subsample_seed)
        g_rep = holder_norm_x(g_lat, m=1, alpha=alpha, p=p,
                              pair_budget=pair_budget, seed=subsample_seed)
        data_norm = f_rep.norm_x + g_rep.norm_x
        row = {"name": name, "u_norm": u_rep.norm_parabolic,
               "f_norm": f_rep.norm_x, "g_norm": g_rep.norm_x,
               "data_norm": data_norm}
        if data_norm < norm_floor:
            skipped.append(name)
            continue
        row["ratio"] = u_rep.norm_parabolic / data_norm
        rows.append(row)
    ratios = [r["ratio"] for r in rows]
    spread = (max(ratios) / min(ratios)) if ratios and min(ratios) > 0 else math.inf
    return SchauderReport(rows=rows, spread=spread, spread_max=spread_max,
                          ok=spread <= spread_max, skipped=skipped)


# ---------------------------------------------------------------------------
# experiment records

@dataclass
class ExperimentResult:
    name: str
    config: dict
    seed: int
    values: dict
    verdict: bool
    runtime_s: float

    @property
    def digest(self):
        return sha256_text(to_json_text({"name": self.name, "config": self.config,
                                         "seed": self.seed}))

    def to_dict(self):
        return {"name": self.name, "digest": self.digest, "seed": self.seed,
                "config": self.config, "values": self.values,
                "verdict": self.verdict, "runtime_s": self.runtime_s}


def append_jsonl(results, fp):
    for r in results:
        fp.write(to_json_text(r.to_dict()) + "\n")
