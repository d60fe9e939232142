"""Geometry layer: signed distance, projections, charts, shape constants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenlab.errors import ChartError, PreconditionError, ResolutionError
from greenlab.geometry import (
    Ball,
    BumpedBall,
    Domain,
    Ellipsoid,
    HalfSpace,
    Intersection,
    boundary_distance,
    chart_at,
    collar_reflect,
    coplumpness_bound,
    coplumpness_constant,
    sample_pairs,
    uniformity_bound,
    uniformity_constant,
)

DOMAINS = [Ball(), Ellipsoid(), BumpedBall()]


def _random_points(domain, rng, count, pad=0.3):
    lo, hi = domain.bounding_box()
    span = hi - lo
    return (lo - pad * span) + rng.random((count, 3)) * (1 + 2 * pad) * span


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_signed_distance_is_1_lipschitz(domain):
    rng = np.random.default_rng(11)
    a = _random_points(domain, rng, 10_000)
    b = _random_points(domain, rng, 10_000)
    sd_a = domain.signed_distance(a)
    sd_b = domain.signed_distance(b)
    gap = np.abs(sd_a - sd_b) - np.linalg.norm(a - b, axis=-1)
    assert gap.max() <= 1e-9, f"Lipschitz violation {gap.max():.3e} on {domain.name}"


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_signed_distance_sign_matches_implicit(domain):
    rng = np.random.default_rng(3)
    pts = _random_points(domain, rng, 2000)
    sd = domain.signed_distance(pts)
    g = domain.implicit(pts)
    off_surface = np.abs(g) > 1e-9
    assert np.all((sd[off_surface] > 0) == (g[off_surface] < 0))


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_nearest_boundary_matches_distance_in_collar(domain):
    rng = np.random.default_rng(7)
    pts = _random_points(domain, rng, 4000)
    sd = domain.signed_distance(pts)
    collar = np.abs(sd) < 0.5 * domain.chart_radius
    pts, sd = pts[collar], sd[collar]
    assert len(pts) > 50
    nb = domain.nearest_boundary(pts)
    on_bd = np.abs(domain.signed_distance(nb))
    assert on_bd.max() < 1e-9
    gap = np.abs(np.linalg.norm(pts - nb, axis=-1) - np.abs(sd))
    assert gap.max() < 1e-9, f"projection distance mismatch {gap.max():.3e}"


@pytest.mark.parametrize("domain", [Ellipsoid(), BumpedBall()],
                         ids=lambda d: d.name)
def test_implicit_derivatives_match_finite_differences(domain):
    rng = np.random.default_rng(5)
    pts = _random_points(domain, rng, 40, pad=0.0)
    pts = pts[np.abs(domain.signed_distance(pts)) < 0.3][:12]
    assert len(pts) >= 4
    h = 1e-6
    eye = np.eye(3)
    grad = domain.implicit_grad(pts).reshape(-1, 3)
    hess = domain.implicit_hess(pts)
    for k in range(3):
        fd = (domain.implicit(pts + h * eye[k]) -
              domain.implicit(pts - h * eye[k])) / (2 * h)
        assert np.abs(fd - grad[:, k]).max() < 5e-6
        fd2 = (domain.implicit_grad(pts + h * eye[k]).reshape(-1, 3) -
               domain.implicit_grad(pts - h * eye[k]).reshape(-1, 3)) / (2 * h)
        assert np.abs(fd2 - hess[:, :, k]).max() < 5e-6


def test_boundary_distance_clamps_outside():
    d = Ball()
    assert boundary_distance(d, np.array([2.0, 0, 0])) == 0.0
    assert np.isclose(boundary_distance(d, np.array([0.25, 0, 0])), 0.75)


def test_chart_radius_constraint_enforced():
    with pytest.raises(PreconditionError):
        Ball(radius=1.0, chart_radius=0.6)


# -- charts -------------------------------------------------------------------


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_chart_round_trip(domain):
    rng = np.random.default_rng(2)
    p = domain.nearest_boundary(rng.normal(size=3))
    chart = chart_at(domain, p)
    offsets = rng.normal(size=(200, 3))
    offsets *= (0.8 * chart.radius * rng.random((200, 1))
                / np.linalg.norm(offsets, axis=-1, keepdims=True))
    pts = p[None, :] + offsets
    back = chart.inverse(chart.forward(pts))
    assert np.abs(back - pts).max() < 1e-10


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_chart_flattens_boundary_and_orients_inside(domain):
    rng = np.random.default_rng(4)
    p = domain.nearest_boundary(rng.normal(size=3))
    chart = chart_at(domain, p)
    # boundary points map to the plane {y3 = 0}
    raw = p[None, :] + 0.5 * chart.radius * rng.normal(size=(100, 3))
    bpts = domain.nearest_boundary(raw)
    yb = chart.forward(bpts)
    assert np.abs(yb[:, 2]).max() < 1e-9
    # inside points map to positive height
    inside = bpts - 0.1 * chart.radius * np.asarray(domain.outward_normal(bpts))
    yi = chart.forward(inside)
    assert yi[:, 2].min() > 0


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_chart_derivatives_match_finite_differences(domain):
    rng = np.random.default_rng(9)
    p = domain.nearest_boundary(rng.normal(size=3))
    chart = chart_at(domain, p)
    pts = p[None, :] + 0.3 * chart.radius * rng.normal(size=(6, 3))
    h = 1e-6
    eye = np.eye(3)
    jac = chart.forward_jacobian(pts)
    hess = chart.forward_hessian(pts)
    for r in range(3):
        fd = (chart.forward(pts + h * eye[r]) -
              chart.forward(pts - h * eye[r])) / (2 * h)
        assert np.abs(fd - jac[:, :, r]).max() < 5e-6
        fdj = (chart.forward_jacobian(pts + h * eye[r]) -
               chart.forward_jacobian(pts - h * eye[r])) / (2 * h)
        assert np.abs(fdj - hess[:, :, :, r]).max() < 5e-5
    ys = chart.forward(pts)
    inv_jac = chart.inverse_jacobian(ys)
    inv_hess = chart.inverse_hessian(ys)
    for r in range(3):
        fd = (chart.inverse(ys + h * eye[r]) -
              chart.inverse(ys - h * eye[r])) / (2 * h)
        assert np.abs(fd - inv_jac[:, :, r]).max() < 5e-6
        fdj = (chart.inverse_jacobian(ys + h * eye[r]) -
               chart.inverse_jacobian(ys - h * eye[r])) / (2 * h)
        assert np.abs(fdj - inv_hess[:, :, :, r]).max() < 5e-5
    # chain rule: forward and inverse jacobians invert each other
    prod = np.einsum("nij,njk->nik", jac, inv_jac)
    assert np.abs(prod - np.eye(3)[None]).max() < 1e-8


def test_half_space_chart_is_exact_isometry():
    d = HalfSpace()
    chart = chart_at(d, np.array([0.1, -0.2, 0.0]))
    assert chart.norm_bound == 1.0
    rng = np.random.default_rng(0)
    pts = np.array([0.1, -0.2, 0.0]) + 0.3 * rng.normal(size=(50, 3))
    y = chart.forward(pts)
    # exact isometry: distances preserved, boundary plane to {y3 = 0}
    dmat_x = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    dmat_y = np.linalg.norm(y[:, None] - y[None, :], axis=-1)
    assert np.abs(dmat_x - dmat_y).max() < 1e-12
    assert np.abs(chart.forward_hessian(pts)).max() < 1e-12
    flat = pts.copy()
    flat[:, 2] = 0.0
    assert np.abs(chart.forward(flat)[:, 2]).max() < 1e-12


def test_chart_requires_boundary_point():
    with pytest.raises(ChartError):
        chart_at(Ball(), np.array([0.5, 0.0, 0.0]))


def test_ball_chart_curvature_matches_sphere():
    # the flattening subtracts the boundary height, whose curvature at
    # the contact point of the unit sphere is 1 in both tangent slots
    chart = chart_at(Ball(), np.array([0.0, 0.0, 1.0]))
    hess = chart.forward_hessian(np.array([0.0, 0.0, 1.0]))
    t1, t2 = chart.frame[:, 0], chart.frame[:, 1]
    h11 = t1 @ hess[2] @ t1
    h22 = t2 @ hess[2] @ t2
    assert np.isclose(h11, -1.0, atol=1e-8) and np.isclose(h22, -1.0, atol=1e-8)


# -- collar reflection ---------------------------------------------------------


def test_collar_reflect_ball_example():
    d = Ball()
    out = collar_reflect(d, np.array([1.1, 0.0, 0.0]))
    assert np.allclose(out, [0.9, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("domain", DOMAINS, ids=lambda d: d.name)
def test_collar_reflect_contract(domain):
    rng = np.random.default_rng(21)
    nb = domain.nearest_boundary(rng.normal(size=(300, 3)))
    depth = 0.4 * domain.chart_radius * rng.random((300, 1))
    outside = nb + depth * np.asarray(domain.outward_normal(nb))
    outside = outside[domain.signed_distance(outside) < -1e-12]
    refl = collar_reflect(domain, outside)
    sd_in = domain.signed_distance(refl)
    assert sd_in.min() > 0, "reflection must land inside"
    moved = np.linalg.norm(refl - outside, axis=-1)
    expect = 2.0 * np.abs(domain.signed_distance(outside))
    assert np.abs(moved - expect).max() < 1e-9
    again = collar_reflect(domain, refl)
    assert np.abs(again - outside).max() < 1e-9, "involution failure"


def test_collar_reflect_rejects_deep_points():
    with pytest.raises(PreconditionError):
        collar_reflect(Ball(), np.array([0.0, 0.0, 0.0]))


# -- stratified pairs -----------------------------------------------------------


def test_sample_pairs_exact_count_and_strata():
    d = Ball()
    batch = sample_pairs(d, n_shells=4, n_buckets=4, per_stratum=100, seed=1)
    assert len(batch) == 1600
    r = np.linalg.norm(batch.x - batch.y, axis=-1)
    assert r.min() > 0, "pairs must be distinct"
    bd = boundary_distance(d, batch.x)
    t = bd / r
    diam = d.diameter
    for j in range(4):
        in_shell = (r >= diam * 0.5 ** (j + 2)) & (r < diam * 0.5 ** (j + 1))
        assert np.all(in_shell[batch.shell == j])
    assert np.all(t[batch.bucket == 0] >= 1.0)
    for k in range(1, 4):
        sel = batch.bucket == k
        assert np.all((t[sel] >= 0.5**k) & (t[sel] < 0.5 ** (k - 1)))


def test_sample_pairs_seed_determinism():
    a = sample_pairs(Ball(), per_stratum=5, seed=42)
    b = sample_pairs(Ball(), per_stratum=5, seed=42)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_sample_pairs_snap_and_pool():
    d = Ball()
    origin = np.array([-1.0, -1.0, -1.0])
    h = 2.0 / 16
    batch = sample_pairs(d, n_shells=2, n_buckets=2, per_stratum=10, seed=3,
                         snap=(origin, h), pool_x=2, min_separation=2 * h)
    on_lattice = np.abs((batch.x - origin) / h - np.round((batch.x - origin) / h))
    assert on_lattice.max() < 1e-9
    for j in range(2):
        for k in range(2):
            sel = (batch.shell == j) & (batch.bucket == k)
            uniq = np.unique(batch.x[sel], axis=0)
            assert len(uniq) <= 2


def test_sample_pairs_total_trim():
    batch = sample_pairs(Ball(), n_shells=4, n_buckets=4, per_stratum=13,
                         seed=5, total=200)
    assert len(batch) == 200


# -- shape constants -------------------------------------------------------------


def test_uniformity_constant_ball():
    c = uniformity_constant(Ball(), grid_resolution=33, pair_samples=24, seed=0)
    assert 1.0 <= c <= 10.0, f"measured chain constant {c:.2f} out of range"
    assert c <= uniformity_bound(Ball())


def test_uniformity_disconnected_raises():
    class TwoBalls(Domain):
        name = "two_balls"

        def __init__(self):
            super().__init__(chart_radius=0.2, chart_norm=4.0)
            self.a = Ball(center=(-2.0, 0, 0), radius=0.7, chart_radius=0.3)
            self.b = Ball(center=(2.0, 0, 0), radius=0.7, chart_radius=0.3)

        @property
        def diameter(self):
            return 5.4

        def bounding_box(self):
            return np.array([-2.7, -0.7, -0.7]), np.array([2.7, 0.7, 0.7])

        def implicit(self, x):
            return np.minimum(self.a.implicit(x), self.b.implicit(x))

        def signed_distance(self, x):
            return np.maximum(self.a.signed_distance(x),
                              self.b.signed_distance(x))

    with pytest.raises(ResolutionError):
        uniformity_constant(TwoBalls(), grid_resolution=21, pair_samples=40,
                            seed=2, c_cap=64.0)


def test_coplumpness_constant_ball():
    c = coplumpness_constant(Ball(), samples=32, seed=0)
    assert 1.0 <= c <= 4.0, f"measured plumpness constant {c:.2f} out of range"
    assert c <= coplumpness_bound(Ball())


@given(st.floats(min_value=0.05, max_value=0.24))
@settings(max_examples=20, deadline=None)
def test_bounds_scale_with_chart_radius(ratio):
    d = Ball(chart_radius=2.0 * ratio)
    assert uniformity_bound(d) > 0
    assert coplumpness_bound(d) > 0
    assert uniformity_bound(d) >= coplumpness_bound(d)
