"""Problem structure: parabolicity margins, geometry, coefficient families."""

import math

import numpy as np
import pytest

from spdelab.model import (
    Cylinder, EllipticityBounds, HolderParams, StructuralError, ZeroPathView,
    check_coefficient_bounds, default_sample_points, make_cylinder, make_family,
    make_problem, parabolic_distance, validate_parabolicity,
)
from spdelab.noise import NoiseConfig, sample_path


def test_parabolicity_margin_constant():
    # 2a - sigma^2 = 2 - 1 = 1 = lam: margin exactly zero, still passes
    spec = make_problem(a=1.0, sigma=1.0, lam=1.0)
    rep = validate_parabolicity(spec, default_sample_points(spec))
    assert rep.ok
    assert abs(rep.margin) < 1e-14
    print(rep)


def test_parabolicity_margin_failure():
    spec = make_problem(a=1.0, sigma=1.5, lam=1.0)  # 2 - 2.25 < 0
    rep = validate_parabolicity(spec, default_sample_points(spec))
    assert not rep.ok
    assert rep.margin < 0


def test_parabolicity_two_dimensional():
    # a = I, one noise mode with sigma = (1, 0): 2I - diag(1,0) has
    # eigenvalues {1, 2}; against lam = 0.5 the margin is 0.5
    spec = make_problem(
        dim=2, a=lambda x, t, w: np.eye(2), sigma=lambda x, t, w: np.array([[1.0], [0.0]]),
        lam=0.5)
    rep = validate_parabolicity(spec, [((0.0, 0.0), 0.0)])
    assert rep.ok
    assert abs(rep.margin - 0.5) < 1e-12


def test_asymmetric_diffusion_rejected():
    spec = make_problem(dim=2, a=lambda x, t, w: np.array([[1.0, 0.3], [0.0, 1.0]]), lam=0.5)
    with pytest.raises(StructuralError):
        validate_parabolicity(spec, [((0.0, 0.0), 0.0)])


def test_parabolic_distance_triangle():
    rng = np.random.default_rng(31)
    pts = [(rng.normal(), rng.normal()) for _ in range(300)]
    bad = 0
    for i in range(100):
        X, Y, Z = pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]
        if parabolic_distance(X, Z) > parabolic_distance(X, Y) + parabolic_distance(Y, Z) + 1e-12:
            bad += 1
    assert bad == 0


def test_parabolic_distance_scaling():
    x, t = 0.7, -0.3
    for r in (0.5, 2.0):
        lhs = parabolic_distance((r * x, r * r * t), (0.0, 0.0))
        rhs = r * parabolic_distance((x, t), (0.0, 0.0))
        assert abs(lhs - rhs) < 1e-12


def test_cylinder_membership():
    q = make_cylinder((0.0, 0.0), 0.5)
    assert q.contains(0.2, -0.1)
    assert not q.contains(0.2, -0.3)   # below the bottom 0 - 0.25
    assert not q.contains(0.6, -0.1)
    big = Cylinder(0.0, 0.0, 1.0)
    assert big.contains(0.5, -0.5)
    with pytest.raises(ValueError):
        make_cylinder((0.0, 0.0), -1.0)


def test_cylinder_nesting():
    rho = 0.5
    top = Cylinder(0.3, 1.0, 1.0)
    rng = np.random.default_rng(5)
    for lvl in range(4):
        inner = top.shrunk(rho ** (lvl + 1))
        outer = top.shrunk(rho ** lvl)
        for _ in range(200):
            x = inner.center_x + rng.uniform(-inner.radius, inner.radius)
            t = rng.uniform(inner.t_bottom, inner.center_t)
            if inner.contains(x, t):
                assert outer.contains(x, t)


def test_coefficient_bounds_pass_and_fail():
    spec = make_family("trig", K=10.0)
    rep = check_coefficient_bounds(spec)
    assert rep.ok
    print(rep)
    tight = make_problem(a=1.0, lam=0.1, K=0.5)
    rep2 = check_coefficient_bounds(tight)
    assert not rep2.ok
    assert rep2.worst_field == "a"


def test_family_adapted_coefficients():
    spec = make_family("random-ou", horizon=1.0)
    cfg = NoiseConfig(modes=1, n_steps=100, horizon=1.0)
    p1 = sample_path(cfg, 11, 0)
    p2 = sample_path(cfg, 11, 1)
    # splice: same increments up to step 50, different after
    mixed = p1.increments.copy()
    mixed[:, 50:] = p2.increments[:, 50:]
    from spdelab.noise import WienerPath
    p3 = WienerPath(cfg, mixed, (11, "spliced"))
    t = 0.5
    v1 = spec.a(0.0, t, p1.restrict(t))
    v3 = spec.a(0.0, t, p3.restrict(t))
    assert v1 == v3  # agreement on [0, t] is all that may matter
    t2 = 1.0
    v1b = spec.a(0.0, t2, p1.restrict(t2))
    v3b = spec.a(0.0, t2, p3.restrict(t2))
    assert v1b != v3b


def test_family_ou_respects_ellipticity():
    with pytest.raises(ValueError):
        make_family("random-ou", a0=1.0, a_mod=0.9, sigma0=1.0, lam=1.0)


def test_family_unknown_params_rejected():
    with pytest.raises(ValueError):
        make_family("constant", bogus=1.0)
    with pytest.raises(ValueError):
        make_family("nope")


def test_bounds_and_params_validation():
    with pytest.raises(ValueError):
        EllipticityBounds(lam=0.0, K=1.0)
    with pytest.raises(ValueError):
        EllipticityBounds(lam=2.0, K=1.0)
    with pytest.raises(ValueError):
        HolderParams(alpha=1.0, p=2.0)
    with pytest.raises(ValueError):
        HolderParams(alpha=0.5, p=1.0)


def test_zero_path_view_blocks_future():
    from spdelab.noise import AdaptednessError
    w = ZeroPathView(2, t_limit=0.5)
    assert np.all(w.value(0.5) == 0.0)
    with pytest.raises(AdaptednessError):
        w.value(0.7)
