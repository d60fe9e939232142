"""Tricubic spline wrapper and backend parity."""

import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.ndimage import map_coordinates

from greenlab import _native
from greenlab._native import fallback
from greenlab.errors import EvalPlanError
from greenlab.interp import TricubicSpline, lattice_points

RNG = np.random.default_rng(11)


def _random_table(n=14, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, n, n))


def _random_index_coords(shape, m, seed=1, margin=0.0):
    rng = np.random.default_rng(seed)
    t = np.empty((m, 3))
    for ax in range(3):
        t[:, ax] = rng.uniform(margin, shape[ax] - 1 - margin, size=m)
    return t


def test_backend_reports_a_known_name():
    assert _native.BACKEND in {"native", "python"}


def test_env_override_forces_fallback():
    code = (
        "import greenlab._native as n; print(n.BACKEND)"
    )
    env = dict(os.environ, GREENLAB_NO_NATIVE="1")
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("orders", [(0, 0, 0), (1, 0, 0), (0, 2, 0),
                                    (1, 1, 0), (2, 1, 0), (2, 2, 2)])
def test_backends_agree(orders):
    coeff = np.ascontiguousarray(_random_table(12, seed=3))
    t = np.ascontiguousarray(_random_index_coords(coeff.shape, 500, seed=4))
    a = fallback.evaluate(coeff, t, *orders)
    b = _native.evaluate(coeff, t, *orders)
    assert np.abs(a - b).max() < 1e-11 * max(1.0, np.abs(a).max())


def test_matches_scipy_spline_evaluation():
    table = _random_table(13, seed=5)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    t = _random_index_coords(table.shape, 800, seed=6)
    ours = sp.evaluate(t, (0, 0, 0))
    ref = map_coordinates(sp.coeff, t.T, order=3, prefilter=False,
                          mode="mirror")
    assert np.abs(ours - ref).max() < 1e-11


def test_matches_scipy_near_edges():
    table = _random_table(9, seed=7)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    t = _random_index_coords(table.shape, 400, seed=8, margin=0.0)
    t[:100, 0] = RNG.uniform(0.0, 0.6, size=100)
    t[100:200, 2] = RNG.uniform(table.shape[2] - 1.6, table.shape[2] - 1,
                                size=100)
    ours = sp.evaluate(t, (0, 0, 0))
    ref = map_coordinates(sp.coeff, t.T, order=3, prefilter=False,
                          mode="mirror")
    assert np.abs(ours - ref).max() < 1e-11


def test_reproduces_table_at_nodes():
    table = _random_table(10, seed=9)
    sp = TricubicSpline(table, origin=(-1.0, 0.5, 2.0), spacing=0.25)
    nodes = lattice_points((-1.0, 0.5, 2.0), 0.25, table.shape)
    vals = sp(nodes.reshape(-1, 3))
    assert np.abs(vals - table.ravel()).max() < 1e-9


def _cubic(pts):
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    return (
        0.3 * x**3
        - 0.2 * y**3
        + 0.15 * z**3
        + 0.4 * x * y * z
        + 0.7 * x**2 * z
        - 1.1 * y
        + 2.0
    )


def test_reproduces_cubics_deep_in_the_interior():
    # The mirror end condition perturbs coefficients near the lattice
    # edge with geometric decay (~0.27 per node); ten nodes in, cubics
    # come back to five digits and each node deeper gains a digit's
    # worth of factor four.
    shape = (28, 28, 28)
    nodes = lattice_points((0.0, 0.0, 0.0), 0.2, shape)
    sp = TricubicSpline(_cubic(nodes), origin=(0.0, 0.0, 0.0), spacing=0.2)
    pts = RNG.uniform(0.2 * 10, 0.2 * 17, size=(300, 3))
    assert np.abs(sp(pts) - _cubic(pts)).max() < 1e-5


def test_cubic_derivatives_deep_in_the_interior():
    shape = (28, 28, 28)
    h = 0.2
    nodes = lattice_points((0.0, 0.0, 0.0), h, shape)
    sp = TricubicSpline(_cubic(nodes), origin=(0.0, 0.0, 0.0), spacing=h)
    pts = RNG.uniform(h * 10, h * 17, size=(100, 3))
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    checks = {
        (1, 0, 0): 0.9 * x**2 + 0.4 * y * z + 1.4 * x * z,
        (0, 1, 0): -0.6 * y**2 + 0.4 * x * z - 1.1,
        (0, 0, 1): 0.45 * z**2 + 0.4 * x * y + 0.7 * x**2,
        (2, 0, 0): 1.8 * x + 1.4 * z,
        (1, 0, 1): 0.4 * y + 1.4 * x,
        (0, 1, 1): 0.4 * x,
        (0, 2, 0): -1.2 * y,
    }
    for orders, exact in checks.items():
        got = sp.evaluate(pts, orders)
        scale = max(1.0, np.abs(exact).max())
        assert np.abs(got - exact).max() < 2e-4 * scale, orders


def test_fourth_order_convergence_for_compact_data():
    # Data vanishing near the lattice edge is the library's actual use;
    # there the mirror condition is exact and interpolation converges
    # at fourth order.
    def bump(p):
        r2 = ((p - 0.5) ** 2).sum(axis=-1)
        return np.exp(-80.0 * r2)

    errs = {}
    for n in (17, 33):
        h = 1.0 / (n - 1)
        nodes = lattice_points((0.0, 0.0, 0.0), h, (n, n, n))
        sp = TricubicSpline(bump(nodes), origin=(0.0, 0.0, 0.0), spacing=h)
        pts = RNG.uniform(0.25, 0.75, size=(400, 3))
        errs[n] = np.abs(sp(pts) - bump(pts)).max()
    assert errs[33] < errs[17] / 10.0


def test_derivatives_match_finite_differences_of_spline():
    table = _random_table(14, seed=10)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=0.5)
    pts = RNG.uniform(0.5 * 3, 0.5 * 10, size=(50, 3))
    eps = 1e-5
    for ax in range(3):
        e = np.zeros(3)
        e[ax] = eps
        orders = tuple(int(k == ax) for k in range(3))
        fd = (sp(pts + e) - sp(pts - e)) / (2 * eps)
        assert np.abs(fd - sp.evaluate(pts, orders)).max() < 1e-6


def test_gradient_and_hessian_shapes():
    table = _random_table(8, seed=12)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    pts = RNG.uniform(2.0, 5.0, size=(20, 3))
    g = sp.gradient(pts)
    h = sp.hessian(pts)
    assert g.shape == (20, 3)
    assert h.shape == (20, 3, 3)
    assert np.array_equal(h, np.swapaxes(h, -1, -2))
    one_g = sp.gradient(pts[0])
    assert one_g.shape == (3,)


def test_derivative_scaling_with_spacing():
    table = _random_table(12, seed=13)
    fine = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=0.1)
    coarse = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    t = _random_index_coords(table.shape, 50, seed=14, margin=2.0)
    d_fine = fine.evaluate(0.1 * t, (1, 0, 0))
    d_coarse = coarse.evaluate(t, (1, 0, 0))
    assert np.allclose(d_fine, 10.0 * d_coarse, rtol=1e-12)


def test_points_outside_lattice_raise():
    table = _random_table(8, seed=15)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    with pytest.raises(EvalPlanError):
        sp(np.array([8.5, 3.0, 3.0]))
    with pytest.raises(EvalPlanError):
        sp(np.array([-0.5, 3.0, 3.0]))


def test_bad_order_and_small_table_raise():
    table = _random_table(8, seed=16)
    sp = TricubicSpline(table, origin=(0.0, 0.0, 0.0), spacing=1.0)
    with pytest.raises(EvalPlanError):
        sp.evaluate(np.array([3.0, 3.0, 3.0]), (3, 0, 0))
    with pytest.raises(EvalPlanError):
        TricubicSpline(np.zeros((3, 8, 8)), origin=(0, 0, 0), spacing=1.0)
