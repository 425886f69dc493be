"""Moment-norm estimators on space-time lattices of random fields.

Every norm here measures differences in L^p over the sample axis first and
takes suprema over lattice points second.  Holder quotients are scanned over
pair families organized by spatial shift and stored-time pair; when the full
family exceeds the pair budget, a distance-stratified random subsample is
drawn from a recorded seed so results stay reproducible.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .util import fmt_float


class DegenerateRegionError(Exception):
    """Region contains too few lattice points for the requested estimate."""


class FieldLattice:
    """Samples of a random field on a space-time lattice.

    values: (n_samples, nt, nx) for scalar fields, (n_samples, modes, nt, nx)
    for mode-vector fields (measured in l2 over modes before L^p).  xs are
    node coordinates with uniform spacing h; on a periodic lattice distances
    use the torus metric with period `length`.
    """

    def __init__(self, values, xs, times, h, periodic=True, length=None, valid_mask=None):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim == 3:
            self.vector = False
        elif self.values.ndim == 4:
            self.vector = True
        else:
            raise ValueError("values must have shape (N, nt, nx) or (N, modes, nt, nx)")
        self.xs = np.asarray(xs, dtype=np.float64)
        self.times = np.asarray(times, dtype=np.float64)
        self.h = float(h)
        self.periodic = bool(periodic)
        self.length = float(length) if length is not None else (
            self.h * len(self.xs) if periodic else float(self.xs[-1] - self.xs[0]))
        if valid_mask is None:
            valid_mask = np.ones(len(self.xs), dtype=bool)
        self.valid_mask = np.asarray(valid_mask, dtype=bool)
        if self.values.shape[-2:] != (len(self.times), len(self.xs)):
            raise ValueError("values trailing shape %s does not match lattice"
                             % (self.values.shape[-2:],))

    @property
    def n_samples(self):
        return self.values.shape[0]

    def node_distance(self, s):
        """Distance spanned by a node shift of s."""
        d = s * self.h
        if self.periodic:
            return min(d, self.length - d)
        return d

    def derivative(self, order):
        """Centered x-derivative lattice of the given order (0, 1 or 2)."""
        if order == 0:
            return self
        if order not in (1, 2):
            raise ValueError("order must be 0, 1 or 2")
        v = self.values
        mask = self.valid_mask.copy()
        if self.periodic:
            up = np.roll(v, -1, axis=-1)
            um = np.roll(v, 1, axis=-1)
        else:
            up = np.empty_like(v)
            um = np.empty_like(v)
            up[..., :-1] = v[..., 1:]
            um[..., 1:] = v[..., :-1]
            up[..., -1] = v[..., -1]
            um[..., 0] = v[..., 0]
            mask[0] = mask[-1] = False
        if order == 1:
            dv = (up - um) / (2.0 * self.h)
        else:
            dv = (up - 2.0 * v + um) / (self.h * self.h)
        return FieldLattice(dv, self.xs, self.times, self.h, self.periodic,
                            self.length, mask)

    def magnitudes(self):
        """(n_samples, nt, nx) pointwise magnitudes (l2 over modes if vector)."""
        if self.vector:
            return np.sqrt(np.sum(self.values ** 2, axis=1))
        return np.abs(self.values)


def lattice_from_ensemble(ens, order=0):
    vals, mask = ens.derived(order)
    length = ens.h * len(ens.xs) if ens.periodic else None
    return FieldLattice(vals, ens.xs, ens.times, ens.h, ens.periodic, length, mask)


def lattice_from_field(fld, xs, times, paths, h, periodic=True, length=None, modes=None):
    """Evaluate a coefficient field over (paths x times x nodes).

    paths may be WienerPath objects (restricted per time for adaptedness) or
    [None] for deterministic fields.
    """
    from .model import ZeroPathView

    n = len(paths)
    nt = len(times)
    nx = len(xs)
    if modes is None:
        out = np.empty((n, nt, nx))
    else:
        out = np.empty((n, modes, nt, nx))
    for i, p in enumerate(paths):
        for r, t in enumerate(times):
            w = p.restrict(t) if p is not None else ZeroPathView(getattr(fld, "modes", 1), t)
            if modes is None:
                out[i, r] = np.broadcast_to(np.asarray(fld(xs, t, w), dtype=np.float64), (nx,))
            else:
                out[i, :, r, :] = fld.on_grid(xs, t, w)
    return FieldLattice(out, xs, times, h, periodic, length)


# ---------------------------------------------------------------------------
# L^p reductions

def _lp_over_samples(diff, p, vector):
    """L^p over the sample axis; mode-vector differences reduce in l2 first."""
    if vector:
        mag2 = np.sum(diff * diff, axis=1)
        if p == 2:
            return np.sqrt(np.mean(mag2, axis=0))
        return np.mean(mag2 ** (p / 2.0), axis=0) ** (1.0 / p)
    if p == 2:
        return np.sqrt(np.mean(diff * diff, axis=0))
    return np.mean(np.abs(diff) ** p, axis=0) ** (1.0 / p)


def lp_norm_point(lat, x, t, p, order=0):
    """(estimate, jackknife_se) of the L^p moment norm at one lattice point."""
    d = lat.derivative(order)
    r = int(np.argmin(np.abs(d.times - t)))
    i = int(np.argmin(np.abs(d.xs - x)))
    if abs(d.times[r] - t) > 1e-9 * max(1.0, abs(t)):
        raise KeyError("time %s not on the lattice" % fmt_float(t))
    if abs(d.xs[i] - x) > 1e-9 * max(1.0, abs(x)) + 1e-12:
        raise KeyError("x %s not on the lattice" % fmt_float(x))
    if not d.valid_mask[i]:
        raise DegenerateRegionError("node %s is outside the valid stencil region" % fmt_float(x))
    v = d.magnitudes()[:, r, i]
    return jackknife_lp(v, p)


def jackknife_lp(v, p):
    """Power-mean L^p estimate with leave-one-out jackknife standard error."""
    v = np.asarray(v, dtype=np.float64)
    n = len(v)
    powers = np.abs(v) ** p
    s = float(np.sum(powers))
    est = (s / n) ** (1.0 / p)
    if n < 2:
        return est, math.nan
    loo = ((s - powers) / (n - 1)) ** (1.0 / p)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - np.mean(loo)) ** 2)))
    return est, se


# ---------------------------------------------------------------------------
# regions

def _region_masks(lat, region):
    """(node_mask, time_mask) for a Cylinder region (torus-aware in x)."""
    if region is None:
        return lat.valid_mask.copy(), np.ones(len(lat.times), dtype=bool)
    dx = np.abs(lat.xs - region.center_x)
    if lat.periodic:
        dx = np.minimum(dx, lat.length - dx)
    tol = 1e-9 * max(1.0, lat.length)
    node_mask = (dx < region.radius + tol) & lat.valid_mask
    tmask = (lat.times > region.t_bottom - tol) & (lat.times <= region.center_t + tol)
    if node_mask.sum() < 2 or tmask.sum() < 1:
        raise DegenerateRegionError(
            "region r=%s around x=%s covers %d nodes, %d times"
            % (fmt_float(region.radius), fmt_float(region.center_x),
               int(node_mask.sum()), int(tmask.sum())))
    return node_mask, tmask


# ---------------------------------------------------------------------------
# Holder reports

@dataclass
class HolderReport:
    m: int
    alpha: float
    p: float
    sup_part: float
    seminorm_x: float
    seminorm_parabolic: float
    sup_witness: tuple
    witness_x: tuple
    witness_parabolic: tuple
    pairs_used: int
    pairs_total: int
    subsample_seed: int
    notes: list = field(default_factory=list)

    @property
    def norm_x(self):
        return self.sup_part + self.seminorm_x

    @property
    def norm_parabolic(self):
        return self.sup_part + self.seminorm_parabolic

    def to_dict(self):
        return {
            "m": self.m, "alpha": self.alpha, "p": self.p,
            "sup_part": self.sup_part,
            "seminorm_x": self.seminorm_x,
            "seminorm_parabolic": self.seminorm_parabolic,
            "norm_x": self.norm_x,
            "norm_parabolic": self.norm_parabolic,
            "sup_witness": list(self.sup_witness),
            "witness_x": list(self.witness_x),
            "witness_parabolic": list(self.witness_parabolic),
            "pairs_used": self.pairs_used,
            "pairs_total": self.pairs_total,
            "subsample_seed": self.subsample_seed,
            "notes": list(self.notes),
        }


def _sup_over_orders(lat, m, p, region):
    """max over derivative orders 0..m and lattice points of the L^p norm."""
    best = -math.inf
    witness = None
    for order in range(m + 1):
        d = lat.derivative(order)
        node_mask, tmask = _region_masks(d, region)
        vals = _lp_over_samples(d.values[..., tmask, :][..., node_mask],
                                p, d.vector)
        if vals.size == 0:
            raise DegenerateRegionError("no lattice points in region")
        k = int(np.argmax(vals))
        v = float(vals.flat[k])
        if v > best:
            rr, ii = np.unravel_index(k, vals.shape)
            t_sel = d.times[tmask][rr]
            x_sel = d.xs[node_mask][ii]
            best = v
            witness = (order, float(t_sel), float(x_sel), v)
    return best, witness


def _select_shifts(max_shift, n_keep, rng):
    """Distance-stratified shift subsample: all of a log ladder plus random
    fill, always keeping shift 1 and the largest."""
    allsh = np.arange(1, max_shift + 1)
    if len(allsh) <= n_keep:
        return allsh
    ladder = np.unique(np.round(np.geomspace(1, max_shift, min(n_keep // 2, 24))).astype(int))
    rest = np.setdiff1d(allsh, ladder)
    extra = rng.choice(rest, size=min(len(rest), max(0, n_keep - len(ladder))), replace=False)
    return np.unique(np.concatenate([ladder, extra]))


def _spatial_seminorm(lat, m, alpha, p, region, budget, seed):
    """sup over same-time pairs of ||D^m u(x) - D^m u(y)||_p / |x-y|^alpha."""
    d = lat.derivative(m)
    node_mask, tmask = _region_masks(d, region)
    vals = d.values[..., tmask, :]
    nt = int(tmask.sum())
    nx = len(d.xs)
    max_shift = nx // 2 if d.periodic else nx - 1
    per_shift = nt * nx
    total = max_shift * per_shift
    rng = np.random.default_rng(seed)
    n_keep = max(1, int(budget // per_shift))
    shifts = _select_shifts(max_shift, n_keep, rng)
    used = 0
    best = 0.0
    witness = (math.nan, math.nan, math.nan, 0.0)
    for s in shifts:
        dist = d.node_distance(int(s))
        if dist <= 0:
            continue
        if d.periodic:
            diff = np.roll(vals, -int(s), axis=-1) - vals
            pair_ok = node_mask & np.roll(node_mask, -int(s))
        else:
            diff = vals[..., int(s):] - vals[..., : nx - int(s)]
            pair_ok = node_mask[int(s):] & node_mask[: nx - int(s)]
        if not np.any(pair_ok):
            continue
        q = _lp_over_samples(diff[..., pair_ok], p, d.vector) / dist ** alpha
        used += q.size
        k = int(np.argmax(q))
        v = float(q.flat[k])
        if v > best:
            rr, ii = np.unravel_index(k, q.shape)
            idx = np.flatnonzero(pair_ok)[ii]
            x1 = d.xs[idx]
            x2 = d.xs[(idx + int(s)) % nx] if d.periodic else d.xs[idx + int(s)]
            best = v
            witness = (float(d.times[tmask][rr]), float(x1), float(x2), v)
    return best, witness, used, total


def _parabolic_seminorm(lat, m, alpha, p, region, budget, seed):
    """sup over space-time pairs of ||D^m u(X) - D^m u(Y)||_p / <X-Y>^alpha.

    Pairs are organized as (stored-time pair, node shift) combos; each combo
    is evaluated vectorized over base nodes.  Combos are subsampled with
    distance stratification when the full family exceeds the budget.
    """
    d = lat.derivative(m)
    node_mask, tmask = _region_masks(d, region)
    t_idx = np.flatnonzero(tmask)
    nt = len(t_idx)
    nx = len(d.xs)
    max_shift = nx // 2 if d.periodic else nx - 1

    # candidate combos: same-time spatial pairs, same-node time pairs, mixed
    shift_candidates = np.unique(np.round(np.geomspace(1, max_shift, 24)).astype(int)) if max_shift >= 1 else np.array([], dtype=int)
    combos = []
    for a_i in range(nt):
        for b_i in range(a_i, nt):
            if a_i == b_i:
                for s in shift_candidates:
                    combos.append((a_i, b_i, int(s)))
            else:
                combos.append((a_i, b_i, 0))
                for s in shift_candidates:
                    combos.append((a_i, b_i, int(s)))
    if not combos:
        raise DegenerateRegionError("no space-time pairs available")
    combos = np.array(combos, dtype=np.int64)
    dts = np.abs(d.times[t_idx[combos[:, 1]]] - d.times[t_idx[combos[:, 0]]])
    dxs = np.array([d.node_distance(int(s)) for s in combos[:, 2]])
    deltas = dxs + np.sqrt(dts)
    ok = deltas > 0
    combos, deltas = combos[ok], deltas[ok]

    per_combo = nx
    total = len(combos) * per_combo
    target = max(1, int(budget // per_combo))
    rng = np.random.default_rng(seed)
    if len(combos) > target:
        # stratify by log distance so small separations stay represented
        bins = np.digitize(np.log(deltas), np.linspace(
            np.log(deltas.min()), np.log(deltas.max()) + 1e-12, 13))
        chosen = []
        quota = max(1, target // 12)
        for b in range(1, 14):
            idx = np.flatnonzero(bins == b)
            if len(idx) == 0:
                continue
            take = min(len(idx), quota)
            chosen.append(rng.choice(idx, size=take, replace=False))
        sel = np.unique(np.concatenate(chosen))
        combos, deltas = combos[sel], deltas[sel]

    vals = d.values[..., tmask, :]
    used = 0
    best = 0.0
    witness = ((math.nan, math.nan), (math.nan, math.nan), 0.0)
    for (a_i, b_i, s), delta in zip(combos, deltas):
        va = vals[..., a_i, :]
        vb = vals[..., b_i, :]
        if s:
            if d.periodic:
                vb = np.roll(vb, -int(s), axis=-1)
                pair_ok = node_mask & np.roll(node_mask, -int(s))
            else:
                va = va[..., : nx - int(s)]
                vb = vb[..., int(s):]
                pair_ok = node_mask[: nx - int(s)] & node_mask[int(s):]
        else:
            pair_ok = node_mask
        if not np.any(pair_ok):
            continue
        q = _lp_over_samples((vb - va)[..., pair_ok], p, d.vector) / delta ** alpha
        used += q.size
        k = int(np.argmax(q))
        v = float(q[k])
        if v > best:
            idx = np.flatnonzero(pair_ok)[k]
            x1 = d.xs[idx]
            x2 = d.xs[(idx + int(s)) % nx] if (s and d.periodic) else (d.xs[idx + int(s)] if s else x1)
            best = v
            witness = ((float(d.times[t_idx[a_i]]), float(x1)),
                       (float(d.times[t_idx[b_i]]), float(x2)), v)
    return best, witness, used, total


def holder_norm_x(lat, m=None, alpha=None, p=None, region=None,
                  pair_budget=1_000_000, seed=0):
    """Spatial Holder norm report: sup of derivatives up to order m plus the
    order-m same-time Holder seminorm."""
    m = 0 if m is None else m
    sup_part, sup_w = _sup_over_orders(lat, m, p, region)
    semi, w_x, used, total = _spatial_seminorm(lat, m, alpha, p, region, pair_budget, seed)
    return HolderReport(m=m, alpha=alpha, p=p, sup_part=sup_part,
                        seminorm_x=semi, seminorm_parabolic=math.nan,
                        sup_witness=sup_w, witness_x=w_x,
                        witness_parabolic=((math.nan, math.nan), (math.nan, math.nan), math.nan),
                        pairs_used=used, pairs_total=total, subsample_seed=seed)


def parabolic_holder_norm(lat, m=None, alpha=None, p=None, region=None,
                          pair_budget=1_000_000, seed=0):
    """Space-time Holder norm report: sup part plus the order-m seminorm in
    the parabolic distance |x-y| + sqrt|t-s| (same-time pairs included)."""
    m = 0 if m is None else m
    sup_part, sup_w = _sup_over_orders(lat, m, p, region)
    semi_x, w_x, used_x, total_x = _spatial_seminorm(lat, m, alpha, p, region, pair_budget // 2, seed)
    semi_pt, w_pt, used_t, total_t = _parabolic_seminorm(lat, m, alpha, p, region, pair_budget // 2, seed + 1)
    semi = max(semi_x, semi_pt)
    return HolderReport(m=m, alpha=alpha, p=p, sup_part=sup_part,
                        seminorm_x=semi_x, seminorm_parabolic=semi,
                        sup_witness=sup_w, witness_x=w_x, witness_parabolic=w_pt,
                        pairs_used=used_x + used_t, pairs_total=total_x + total_t,
                        subsample_seed=seed)


# ---------------------------------------------------------------------------
# Dini modulus

@dataclass
class DiniModulus:
    """Tabulated modulus of continuity, radii descending."""

    radii: np.ndarray
    omega: np.ndarray
    p: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        if len(self.radii) != len(self.omega):
            raise ValueError("radii and omega must have equal length")
        if len(self.radii) >= 2 and not np.all(np.diff(self.radii) < 0):
            raise ValueError("radii must be strictly decreasing")
        if np.any(self.omega < 0):
            raise ValueError("omega must be nonnegative")
        if len(self.omega) >= 2 and np.any(np.diff(self.omega) > 1e-12):
            raise ValueError("omega must be nondecreasing in r")

    @property
    def r_min(self):
        return float(self.radii[-1])

    @property
    def r_max(self):
        return float(self.radii[0])

    def omega_at(self, r):
        """Log-linear interpolation between tabulated radii; a fitted power
        law extends below the smallest radius, constant above the largest."""
        if r >= self.radii[0]:
            return float(self.omega[0])
        if r < self.radii[-1]:
            c, beta = self.tail_power()
            return float(c * r ** beta)
        return float(np.interp(math.log(r), np.log(self.radii[::-1]), self.omega[::-1]))

    def tail_power(self):
        """Fit omega ~ c r^beta over the smallest tabulated decade."""
        r = self.radii[::-1]
        w = self.omega[::-1]
        keep = (r <= r[0] * 10.0 + 1e-300) & (w > 0)
        if keep.sum() < 2:
            return (float(w[0] / max(r[0], 1e-300)), 1.0)
        lr, lw = np.log(r[keep]), np.log(w[keep])
        beta, logc = np.polyfit(lr, lw, 1)
        return float(np.exp(logc)), float(beta)

    def to_csv(self, fp):
        fp.write("r,omega\n")
        for r, w in zip(self.radii, self.omega):
            fp.write("%s,%s\n" % (fmt_float(r), fmt_float(w)))


def dini_modulus(f_lat, gx_lat, p, radii=None):
    """Measured modulus: sup over same-time node pairs at distance <= r of
    ||f(x)-f(y)||_p + ||g_x(x)-g_x(y)||_p, tabulated on node shift distances.

    gx_lat may be None (no noise forcing).  radii defaults to every distinct
    shift distance of the lattice.
    """
    nx = len(f_lat.xs)
    max_shift = nx // 2 if f_lat.periodic else nx - 1
    dists = []
    sups = []
    fm = f_lat.valid_mask
    for s in range(1, max_shift + 1):
        dist = f_lat.node_distance(s)
        if dist <= 0:
            continue
        if f_lat.periodic:
            df = np.roll(f_lat.values, -s, axis=-1) - f_lat.values
            ok = fm & np.roll(fm, -s)
        else:
            df = f_lat.values[..., s:] - f_lat.values[..., :-s]
            ok = fm[s:] & fm[:-s]
        if gx_lat is not None:
            # the sup runs over one pair set: both terms at the same (t, x, y)
            if gx_lat.periodic:
                dg = np.roll(gx_lat.values, -s, axis=-1) - gx_lat.values
                ok = ok & gx_lat.valid_mask & np.roll(gx_lat.valid_mask, -s)
            else:
                dg = gx_lat.values[..., s:] - gx_lat.values[..., :-s]
                ok = ok & gx_lat.valid_mask[s:] & gx_lat.valid_mask[:-s]
        if not np.any(ok):
            continue
        total = _lp_over_samples(df[..., ok], p, f_lat.vector)
        if gx_lat is not None:
            total = total + _lp_over_samples(dg[..., ok], p, gx_lat.vector)
        dists.append(dist)
        sups.append(float(np.max(total)))
    if not dists:
        raise DegenerateRegionError("lattice has no usable node pairs")
    order = np.argsort(dists)
    dists = np.asarray(dists)[order]
    sups = np.asarray(sups)[order]
    # enforce monotonicity: omega(r) is a sup over pairs at distance <= r
    sups = np.maximum.accumulate(sups)
    dists, keep = np.unique(dists, return_index=True)
    sups = sups[keep]
    if radii is not None:
        radii = np.asarray(sorted(radii, reverse=True), dtype=np.float64)
        if radii[-1] < dists[0] - 1e-12:
            raise DegenerateRegionError(
                "requested radius %s below lattice resolution %s"
                % (fmt_float(radii[-1]), fmt_float(dists[0])))
        vals = np.array([np.max(sups[dists <= r + 1e-12]) for r in radii])
        return DiniModulus(radii=radii, omega=vals, p=p,
                           meta={"n_shifts": len(dists)})
    return DiniModulus(radii=dists[::-1].copy(), omega=sups[::-1].copy(), p=p,
                       meta={"n_shifts": len(dists)})


def dini_integrals(modulus, delta, r_top=1.0):
    """(I_small, I_large) = (int_0^delta omega/r dr, delta int_delta^r_top omega/r^2 dr).

    The tabulated range is integrated by the trapezoid rule in log r; below
    the smallest tabulated radius a fitted power law omega ~ c r^beta closes
    the integral (beta <= 0 means the measured modulus is not Dini and is an
    error).
    """
    if not (0 < delta):
        raise ValueError("delta must be positive")
    if modulus.r_max < r_top - 1e-12:
        raise ValueError("modulus tabulated only to %s < r_top=%s"
                         % (fmt_float(modulus.r_max), fmt_float(r_top)))
    r = modulus.radii[::-1]
    w = modulus.omega[::-1]
    r_lo = r[0]
    c, beta = modulus.tail_power()
    if delta <= r_lo:
        if beta <= 1e-6:
            raise ValueError("measured modulus does not decay (beta=%s); integral diverges"
                             % fmt_float(beta))
        i_small = c * delta ** beta / beta
    else:
        if beta <= 1e-6:
            raise ValueError("measured modulus does not decay (beta=%s); integral diverges"
                             % fmt_float(beta))
        i_small = c * r_lo ** beta / beta
        grid = np.concatenate([r[(r > r_lo) & (r < delta)], [delta]])
        grid = np.concatenate([[r_lo], grid])
        vals = np.array([modulus.omega_at(x) for x in grid])
        # trapezoid of omega d(log r)
        i_small += float(np.trapezoid(vals, np.log(grid)))
    if delta >= r_top:
        i_large = 0.0
    else:
        grid = np.concatenate([[delta], r[(r > delta) & (r < r_top)], [r_top]])
        vals = np.array([modulus.omega_at(x) / x for x in grid])
        i_large = delta * float(np.trapezoid(vals, np.log(grid)))
    return float(i_small), float(i_large)


def modulus_from_function(fn, r_lo=1e-5, r_hi=1.0, n=400):
    """Tabulate a closed-form modulus densely (for cross-checks)."""
    radii = np.geomspace(r_lo, r_hi, n)[::-1]
    return DiniModulus(radii=radii, omega=np.array([fn(r) for r in radii]), p=2.0)


# ---------------------------------------------------------------------------
# localized sup

def localized_sup(lat, x, r, tau, p):
    """sup over stored times in [0, tau] of the ball-averaged moment
    ( avg_{|y-x|<r} E|u(t,y)|^p )^{1/p}."""
    dx = np.abs(lat.xs - x)
    if lat.periodic:
        dx = np.minimum(dx, lat.length - dx)
    node_mask = (dx < r + 1e-12) & lat.valid_mask
    tmask = (lat.times >= -1e-15) & (lat.times <= tau + 1e-12)
    if node_mask.sum() < 1 or tmask.sum() < 1:
        raise DegenerateRegionError("ball radius %s around %s covers no nodes"
                                    % (fmt_float(r), fmt_float(x)))
    mags = lat.magnitudes()[:, tmask, :][:, :, node_mask]
    per_point = np.mean(np.abs(mags) ** p, axis=0)   # E|u|^p on the lattice
    return float(np.max(np.mean(per_point, axis=1) ** (1.0 / p)))
