"""Problem data for the stochastic parabolic equation

    du = (a u_xx + b u_x + c u + f) dt + sum_k (sigma_k u_x + nu_k u + g_k) dW^k

on a periodic torus, together with the geometry (parabolic distance,
cylinders) and the structural validation used before any solve.

Coefficient fields are callables (x, t, w) -> value where w is an
adaptedness-restricted path view.  In one dimension the callables broadcast
over a node array x; scalar fields return shapes broadcastable to (nx,),
mode fields to (modes, nx).  For dim >= 2 only pointwise evaluation is used
(a returns an (n, n) matrix, sigma an (n, modes) matrix) and only the
validation operations apply; time stepping is one-dimensional.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .noise import RestrictedPath
from .util import fmt_float


class StructuralError(Exception):
    """Malformed coefficient structure (e.g. asymmetric diffusion matrix)."""


@dataclass(frozen=True)
class EllipticityBounds:
    lam: float  # lower bound in 2a - sigma sigma^T >= lam * I
    K: float    # upper bound for sampled coefficient Holder norms

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive, got %s" % fmt_float(self.lam))
        if self.K < self.lam:
            raise ValueError("K must be >= lam")


@dataclass(frozen=True)
class HolderParams:
    alpha: float
    p: float
    m: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1), got %s" % fmt_float(self.alpha))
        if self.p < 2:
            raise ValueError("p must be >= 2, got %s" % fmt_float(self.p))
        if self.m < 0:
            raise ValueError("m must be >= 0")


class CoefficientField:
    """Scalar coefficient with declared dependence on x, t and the path.

    The dependence flags let evaluation plans cache aggressively: a field
    with depends_t=False and depends_path=False is evaluated once per grid.
    """

    def __init__(self, fn, depends_x=True, depends_t=True, depends_path=True, name="field"):
        self.fn = fn
        self.depends_x = bool(depends_x)
        self.depends_t = bool(depends_t)
        self.depends_path = bool(depends_path)
        self.name = name

    def __call__(self, x, t, w):
        return self.fn(x, t, w)

    def on_grid(self, xs, t, w):
        """Evaluate over a 1-d node array, materialized to shape (nx,)."""
        out = np.asarray(self.fn(xs, t, w), dtype=np.float64)
        return np.ascontiguousarray(np.broadcast_to(out, xs.shape))

    def __repr__(self):
        return "CoefficientField(%s)" % self.name


class ModeField:
    """Mode-vector coefficient: (x, t, w) -> values for each noise mode."""

    def __init__(self, fn, modes, depends_x=True, depends_t=True, depends_path=True, name="field"):
        self.fn = fn
        self.modes = int(modes)
        self.depends_x = bool(depends_x)
        self.depends_t = bool(depends_t)
        self.depends_path = bool(depends_path)
        self.name = name

    def __call__(self, x, t, w):
        return self.fn(x, t, w)

    def on_grid(self, xs, t, w):
        """Evaluate over a 1-d node array, materialized to shape (modes, nx)."""
        out = np.asarray(self.fn(xs, t, w), dtype=np.float64)
        return np.ascontiguousarray(np.broadcast_to(out, (self.modes, xs.shape[0])))

    def at_point(self, x, t, w):
        out = np.asarray(self.fn(np.asarray([float(x)]), t, w), dtype=np.float64)
        return np.broadcast_to(out, (self.modes, 1))[:, 0].copy()

    def __repr__(self):
        return "ModeField(%s, modes=%d)" % (self.name, self.modes)


def scalar_field(value, name="field", **deps):
    """Wrap a constant or a callable as a CoefficientField."""
    if isinstance(value, CoefficientField):
        return value
    if callable(value):
        return CoefficientField(value, name=name, **deps)
    v = float(value)
    return CoefficientField(
        lambda x, t, w: v, depends_x=False, depends_t=False, depends_path=False, name=name
    )


def mode_field(value, modes, name="field", **deps):
    """Wrap constants (scalar or per-mode list) or a callable as a ModeField."""
    if isinstance(value, ModeField):
        if value.modes != modes:
            raise ValueError("mode field %s has %d modes, expected %d" % (value.name, value.modes, modes))
        return value
    if callable(value):
        return ModeField(value, modes, name=name, **deps)
    arr = np.zeros(modes)
    vals = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if vals.size > modes:
        raise ValueError("got %d mode values for %d modes" % (vals.size, modes))
    arr[: vals.size] = vals
    col = arr[:, None].copy()
    return ModeField(
        lambda x, t, w: col, modes, depends_x=False, depends_t=False, depends_path=False, name=name
    )


class ZeroPathView:
    """Path stand-in for purely structural evaluations (no noise sampled)."""

    def __init__(self, modes, t_limit=0.0):
        self.modes = modes
        self.t_limit = float(t_limit)
        self.limit_index = 0
        self.path = None

    def value(self, t):
        if t > self.t_limit + 1e-15:
            from .noise import AdaptednessError

            raise AdaptednessError(
                "path value at t=%s requested, restriction is t=%s"
                % (fmt_float(t), fmt_float(self.t_limit))
            )
        return np.zeros(self.modes)

    @property
    def current(self):
        return np.zeros(self.modes)

    @property
    def increments(self):
        return np.zeros((self.modes, 0))


@dataclass(frozen=True)
class ProblemSpec:
    """Full description of one problem: coefficients, bounds, norm parameters.

    The equation runs from zero initial data over [0, horizon] on a torus of
    period `length`.  Fields a, b, c, f are scalar CoefficientFields; sigma,
    nu, g are ModeFields over `modes` noise modes.
    """

    dim: int
    horizon: float
    modes: int
    a: CoefficientField
    b: CoefficientField
    c: CoefficientField
    f: CoefficientField
    sigma: ModeField
    nu: ModeField
    g: ModeField
    bounds: EllipticityBounds
    holder: HolderParams
    length: float = 2.0 * math.pi
    name: str = "problem"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if not self.length > 0:
            raise ValueError("length must be positive")
        for mf in (self.sigma, self.nu, self.g):
            if mf.modes != self.modes:
                raise ValueError(
                    "mode field %s declares %d modes, problem has %d"
                    % (mf.name, mf.modes, self.modes)
                )

    def field_map(self):
        return {
            "a": self.a, "b": self.b, "c": self.c, "f": self.f,
            "sigma": self.sigma, "nu": self.nu, "g": self.g,
        }


def make_problem(dim=1, horizon=1.0, modes=1, a=1.0, b=0.0, c=0.0, f=0.0,
                 sigma=0.0, nu=0.0, g=0.0, lam=1.0, K=10.0,
                 alpha=0.5, p=2.0, m=0, length=2.0 * math.pi, name="problem"):
    """Convenience constructor wrapping raw values/callables into fields."""
    return ProblemSpec(
        dim=dim, horizon=horizon, modes=modes,
        a=scalar_field(a, name="a"), b=scalar_field(b, name="b"),
        c=scalar_field(c, name="c"), f=scalar_field(f, name="f"),
        sigma=mode_field(sigma, modes, name="sigma"),
        nu=mode_field(nu, modes, name="nu"),
        g=mode_field(g, modes, name="g"),
        bounds=EllipticityBounds(lam=lam, K=K),
        holder=HolderParams(alpha=alpha, p=p, m=m),
        length=length, name=name,
    )


def scale_forcing(spec, factor):
    """New problem with f and g multiplied by a scalar (coefficients kept)."""
    from dataclasses import replace

    c = float(factor)
    f0, g0 = spec.f, spec.g
    f2 = CoefficientField(lambda x, t, w: c * np.asarray(f0(x, t, w)),
                          depends_x=f0.depends_x, depends_t=f0.depends_t,
                          depends_path=f0.depends_path, name=f0.name + "_scaled")
    g2 = ModeField(lambda x, t, w: c * np.asarray(g0(x, t, w)), g0.modes,
                   depends_x=g0.depends_x, depends_t=g0.depends_t,
                   depends_path=g0.depends_path, name=g0.name + "_scaled")
    return replace(spec, f=f2, g=g2, name=spec.name + "*%s" % fmt_float(c))


# ---------------------------------------------------------------------------
# geometry

def parabolic_distance(X, Y):
    """|x - y| + sqrt(|t - s|) for space-time points X = (x, t), Y = (y, s)."""
    x, t = X
    y, s = Y
    dx = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)))
    return float(dx + math.sqrt(abs(float(t) - float(s))))


@dataclass(frozen=True)
class Cylinder:
    """Parabolic cylinder: ball of given radius around center_x, times in
    (center_t - radius**2, center_t]."""

    center_x: float
    center_t: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive, got %s" % fmt_float(self.radius))

    @property
    def t_bottom(self):
        return self.center_t - self.radius ** 2

    def contains(self, x, t, slack=0.0):
        dx = np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float) - self.center_x))
        return (dx < self.radius + slack) and (self.t_bottom - slack < t <= self.center_t + slack)

    def shrunk(self, factor):
        return Cylinder(self.center_x, self.center_t, self.radius * factor)


def make_cylinder(center, radius):
    """Build a cylinder from a combined center (x..., t) tuple."""
    center = tuple(np.atleast_1d(np.asarray(center, dtype=float)))
    if len(center) != 2:
        raise ValueError("center must be (x, t) for one spatial dimension")
    return Cylinder(center_x=center[0], center_t=center[1], radius=float(radius))


# ---------------------------------------------------------------------------
# validation

@dataclass
class MarginReport:
    ok: bool
    margin: float          # min over samples of eig_min(2a - sigma sigma^T) - lam
    worst_point: tuple     # (x, t) achieving the margin
    lam: float
    n_points: int

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        return "parabolicity %s: margin %s at (x=%s, t=%s) over %d points" % (
            status, fmt_float(self.margin), fmt_float(self.worst_point[0]),
            fmt_float(self.worst_point[1]), self.n_points)


def _as_matrix(value, n):
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.shape == (1, 1) and n == 1:
        return arr
    if arr.shape != (n, n):
        raise StructuralError("diffusion value has shape %s, expected (%d, %d)" % (arr.shape, n, n))
    return arr


def _as_sigma(value, n, modes):
    arr = np.asarray(value, dtype=float)
    if n == 1:
        arr = arr.reshape(1, -1)
    if arr.shape != (n, modes):
        raise StructuralError("sigma value has shape %s, expected (%d, %d)" % (arr.shape, n, modes))
    return arr


def validate_parabolicity(spec, sample_points, path=None):
    """Check 2a - sigma sigma^T >= lam * I at the given (x, t) samples.

    Returns a MarginReport with the worst eigenvalue margin.  Asymmetric
    diffusion matrices raise StructuralError naming the sample point.
    """
    if not sample_points:
        raise ValueError("sample_points must be non-empty")
    worst = math.inf
    worst_pt = None
    for (x, t) in sample_points:
        w = path.restrict(t) if path is not None else ZeroPathView(spec.modes, t)
        a_val = _as_matrix(spec.a(x, t, w), spec.dim)
        if not np.allclose(a_val, a_val.T, rtol=1e-12, atol=1e-12):
            raise StructuralError(
                "diffusion matrix asymmetric at (x=%s, t=%s)" % (x, fmt_float(float(t)))
            )
        s_val = _as_sigma(spec.sigma(x, t, w), spec.dim, spec.modes)
        mat = 2.0 * a_val - s_val @ s_val.T
        eig_min = float(np.linalg.eigvalsh(mat)[0])
        margin = eig_min - spec.bounds.lam
        if margin < worst:
            worst = margin
            worst_pt = (x, float(t))
    return MarginReport(ok=worst >= 0.0, margin=worst, worst_point=worst_pt,
                        lam=spec.bounds.lam, n_points=len(sample_points))


def default_sample_points(spec, n_x=33, n_t=9):
    xs = np.linspace(0.0, spec.length, n_x, endpoint=False)
    ts = np.linspace(0.0, spec.horizon, n_t)
    return [(float(x), float(t)) for t in ts for x in xs]


@dataclass
class BoundsReport:
    ok: bool
    worst_field: str
    worst_value: float
    K: float
    table: dict

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        return "coefficient bounds %s: max sampled norm %s (%s), K = %s" % (
            status, fmt_float(self.worst_value), self.worst_field, fmt_float(self.K))


def check_coefficient_bounds(spec, n_x=64, n_t=5, path=None):
    """Sampled sup + Holder-alpha seminorm of a, b, c, sigma, nu and the
    discrete x-derivatives sigma_x, nu_x against bounds.K (dim = 1 only)."""
    if spec.dim != 1:
        raise ValueError("coefficient bound sampling is implemented for dim = 1")
    xs = np.arange(n_x) * (spec.length / n_x)
    h = spec.length / n_x
    ts = np.linspace(0.0, spec.horizon, n_t)
    alpha = spec.holder.alpha

    def sampled_norm(values_by_t):
        # values_by_t: list of (nx,) arrays; sup plus max Holder quotient
        # over same-time node pairs (torus metric).
        sup = max(float(np.max(np.abs(v))) for v in values_by_t)
        semi = 0.0
        n = len(values_by_t[0])
        for s in range(1, n // 2 + 1):
            d = min(s * h, spec.length - s * h)
            if d <= 0:
                continue
            for v in values_by_t:
                q = float(np.max(np.abs(np.roll(v, -s) - v))) / d ** alpha
                semi = max(semi, q)
        return sup + semi

    table = {}
    for name in ("a", "b", "c"):
        fld = getattr(spec, name)
        vals = []
        for t in ts:
            w = path.restrict(t) if path is not None else ZeroPathView(spec.modes, t)
            vals.append(fld.on_grid(xs, t, w))
        table[name] = sampled_norm(vals)
    for name in ("sigma", "nu"):
        fld = getattr(spec, name)
        flat, dflat = [], []
        for t in ts:
            w = path.restrict(t) if path is not None else ZeroPathView(spec.modes, t)
            v = fld.on_grid(xs, t, w)          # (modes, nx)
            dv = (np.roll(v, -1, axis=1) - np.roll(v, 1, axis=1)) / (2 * h)
            # mode vector measured in l2 before taking sups
            flat.append(np.linalg.norm(v, axis=0))
            dflat.append(np.linalg.norm(dv, axis=0))
        table[name] = sampled_norm(flat)
        table[name + "_x"] = sampled_norm(dflat)

    worst_field = max(table, key=table.get)
    worst = table[worst_field]
    return BoundsReport(ok=worst <= spec.bounds.K, worst_field=worst_field,
                        worst_value=worst, K=spec.bounds.K, table=table)


# ---------------------------------------------------------------------------
# named coefficient families

def _ou_scalar(base, amplitude, theta, kappa):
    """a(t) = base + amplitude * tanh(Y_t) with dY = -theta Y dt + kappa dW^1.

    The state is rebuilt only for new time indices; a per-path cache keyed on
    the underlying path carries the recursion forward.  Only increments the
    restricted view exposes are ever read.
    """
    cache = {}

    def fn(x, t, w):
        inc = w.increments  # (modes, j): increments inside [0, t]
        j = inc.shape[1]
        key = id(w.path) if isinstance(w, RestrictedPath) else None
        ys = cache.get(key) if key is not None else None
        if ys is None:
            ys = [0.0]
        if len(ys) <= j:
            # ys[k] is the state at tick k; increment k-1 produces it
            dt = w.config.dt if hasattr(w, "config") else 0.0
            for k in range(len(ys) - 1, j):
                y = ys[-1]
                ys.append(y - theta * y * dt + kappa * inc[0, k])
            if key is not None:
                cache[key] = ys
        val = base + amplitude * math.tanh(ys[j])
        return np.broadcast_to(val, np.shape(x)) if np.ndim(x) else val

    return fn


def make_family(family, modes=1, horizon=1.0, length=2.0 * math.pi,
                lam=1.0, K=10.0, alpha=0.5, p=2.0, m=0, **params):
    """Construct a ProblemSpec from a named coefficient family.

    Families:
      constant   all coefficients constant in x, t and the path
      trig       smooth trigonometric x-profiles, deterministic
      random-ou  diffusion modulated by an adapted scalar state driven by
                 the first noise mode
    """
    P = dict(params)

    def take(key, default):
        return P.pop(key, default)

    if family == "constant":
        spec = make_problem(
            dim=1, horizon=horizon, modes=modes, length=length,
            a=take("a0", 1.0), b=take("b0", 0.0), c=take("c0", 0.0),
            f=take("f0", 0.0), sigma=take("sigma0", 0.0),
            nu=take("nu0", 0.0), g=take("g0", 0.0),
            lam=lam, K=K, alpha=alpha, p=p, m=m, name="constant",
        )
    elif family == "trig":
        a0 = take("a0", 1.0); a1 = take("a1", 0.1); ka = take("ka", 1)
        b1 = take("b1", 0.5); kb = take("kb", 1)
        c0 = take("c0", 0.0)
        f1 = take("f1", 1.0); kf = take("kf", 2)
        s0 = take("sigma0", 0.5)
        g1 = take("g1", 0.0); kg = take("kg", 1)
        spec = make_problem(
            dim=1, horizon=horizon, modes=modes, length=length,
            a=CoefficientField(lambda x, t, w: a0 + a1 * np.cos(ka * x),
                               depends_t=False, depends_path=False, name="a"),
            b=CoefficientField(lambda x, t, w: b1 * np.sin(kb * x),
                               depends_t=False, depends_path=False, name="b"),
            c=c0,
            f=CoefficientField(lambda x, t, w: f1 * np.cos(kf * x),
                               depends_t=False, depends_path=False, name="f"),
            sigma=s0, nu=0.0,
            g=ModeField(lambda x, t, w: np.broadcast_to(g1 * np.sin(kg * x), (modes, np.size(x))),
                        modes, depends_t=False, depends_path=False, name="g"),
            lam=lam, K=K, alpha=alpha, p=p, m=m, name="trig",
        )
    elif family == "random-ou":
        a0 = take("a0", 1.0); a_mod = take("a_mod", 0.25)
        theta = take("theta", 1.0); kappa = take("kappa", 0.5)
        s0 = take("sigma0", 0.5)
        f0 = take("f0", 1.0); g0 = take("g0", 0.1)
        # sup a = a0 + a_mod, inf 2a - sigma^2 = 2(a0 - a_mod) - s0^2; keep >= lam
        if 2 * (a0 - a_mod) - s0 ** 2 < lam:
            raise ValueError("random-ou parameters violate the ellipticity bound")
        spec = make_problem(
            dim=1, horizon=horizon, modes=modes, length=length,
            a=CoefficientField(_ou_scalar(a0, a_mod, theta, kappa),
                               depends_x=False, name="a"),
            b=0.0, c=0.0, f=f0, sigma=s0, nu=0.0, g=g0,
            lam=lam, K=K, alpha=alpha, p=p, m=m, name="random-ou",
        )
    else:
        raise ValueError("unknown coefficient family %r" % family)
    if P:
        raise ValueError("unknown parameters for family %r: %s" % (family, sorted(P)))
    return spec
