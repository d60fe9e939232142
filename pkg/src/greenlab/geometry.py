"""Smooth bounded domains with signed distance, boundary charts, and
measured shape constants.

Domains are subsets of R^3 described by a smooth implicit function that
is negative inside.  Every domain provides a signed distance (positive
inside, 1-Lipschitz), a nearest-boundary projection, and local boundary
charts that flatten the boundary onto a coordinate plane.  Shape quality
is quantified two ways: a chain condition (interior point pairs joined
by lattice paths with boundary clearance proportional to the distance to
the nearer endpoint) and a complement plumpness condition (exterior
balls of comparable size near every exterior point and scale).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import (
    ChartError,
    PreconditionError,
    ResolutionError,
    StratificationError,
)

# Convention constant normalizing the chain (cigar) diameter; enters the
# closed-form admissibility bounds below.
CHAIN_NORM_CONSTANT = 2.0


def _as_points(x) -> Tuple[np.ndarray, bool]:
    """Return (pts, was_single) with pts of shape (N, 3)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        return a[None, :], True
    return a.reshape(-1, a.shape[-1]), False


class Domain:
    """Base class: bounded open subset of R^3 with smooth boundary.

    Subclasses supply the implicit function (negative inside) and its
    first two derivatives.  Generic nearest-boundary projection assumes
    the domain is star shaped about the origin; presets that have exact
    formulas override the generic paths.
    """

    name = "domain"
    dim = 3

    def __init__(self, chart_radius: float, chart_norm: float):
        self.chart_radius = float(chart_radius)
        self.chart_norm = float(chart_norm)

    def _finalize(self) -> None:
        # Enforced at construction: chart radius must be small next to
        # the domain diameter.
        if not self.chart_radius / self.diameter < 0.25:
            raise PreconditionError(
                f"chart radius {self.chart_radius} too large for diameter "
                f"{self.diameter}"
            )

    # -- implicit description -------------------------------------------------

    def implicit(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def implicit_grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def implicit_hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- metric description ----------------------------------------------------

    def signed_distance(self, x) -> np.ndarray:
        """Distance to the boundary, positive inside, negative outside."""
        pts, single = _as_points(x)
        proj = self._project_boundary(pts)
        dist = np.linalg.norm(pts - proj, axis=-1)
        sign = np.where(self.implicit(pts) <= 0.0, 1.0, -1.0)
        out = sign * dist
        return out[0] if single else out.reshape(np.asarray(x).shape[:-1])

    def nearest_boundary(self, x) -> np.ndarray:
        """Closest boundary point; exact to 1e-10 inside the collar."""
        pts, single = _as_points(x)
        proj = self._project_boundary(pts)
        return proj[0] if single else proj.reshape(np.asarray(x).shape)

    def outward_normal(self, b) -> np.ndarray:
        """Unit outward normal at boundary points."""
        pts, single = _as_points(b)
        g = self.implicit_grad(pts)
        nu = g / np.linalg.norm(g, axis=-1, keepdims=True)
        return nu[0] if single else nu.reshape(np.asarray(b).shape)

    def contains(self, x) -> np.ndarray:
        return self.signed_distance(x) > 0.0

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    @property
    def resolution_scale(self) -> float:
        """Interior-ball scale governing the coarsest admissible grid:
        the radius of the largest ball that fits against any boundary
        point.  Defaults to the chart radius; presets with round
        boundaries override with the larger osculating-ball radius."""
        return self.chart_radius

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    # -- generic Newton projection ----------------------------------------------

    def _radial_boundary_guess(self, pts: np.ndarray) -> np.ndarray:
        """Boundary point on the ray from the origin through each input.

        Requires the implicit function to be negative at the origin and
        positive far out, which holds for every built-in preset.
        """
        u = pts.copy()
        norms = np.linalg.norm(u, axis=-1, keepdims=True)
        fallback = np.zeros_like(u)
        fallback[:, 2] = 1.0
        u = np.where(norms > 1e-12, u / np.maximum(norms, 1e-300), fallback)
        lo = np.full(pts.shape[0], 1e-9)
        hi = np.full(pts.shape[0], max(1.0, self.diameter))
        # expand hi until outside
        for _ in range(60):
            outside = self.implicit(hi[:, None] * u) > 0.0
            if outside.all():
                break
            hi = np.where(outside, hi, hi * 1.5)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            inside = self.implicit(mid[:, None] * u) <= 0.0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return 0.5 * (lo + hi)[:, None] * u

    def _pole_seeds(self) -> np.ndarray:
        """Boundary points along the coordinate axes, used as extra
        Newton starts; they catch deep-interior queries whose nearest
        boundary point is far from the radial ray."""
        if not hasattr(self, "_pole_cache"):
            dirs = np.concatenate([np.eye(3), -np.eye(3)], axis=0)
            self._pole_cache = self._radial_boundary_guess(dirs)
        return self._pole_cache

    def _project_boundary(self, pts: np.ndarray) -> np.ndarray:
        """Damped multi-start Newton on the closest-point stationarity
        system; the returned point is the closest converged root."""
        n = pts.shape[0]
        seeds = [self._radial_boundary_guess(pts)]
        # one implicit-function pull toward the boundary
        g = self.implicit(pts)
        gd = self.implicit_grad(pts).reshape(-1, 3)
        gg = np.maximum(np.einsum("ni,ni->n", gd, gd), 1e-12)
        seeds.append(pts - (g / gg)[:, None] * gd)
        for pole in self._pole_seeds():
            seeds.append(np.broadcast_to(pole, (n, 3)).copy())
        stack = np.concatenate(seeds, axis=0)
        queries = np.tile(pts, (len(seeds), 1))
        roots, resid = self._newton_closest(queries, stack)
        roots = roots.reshape(len(seeds), n, 3)
        resid = resid.reshape(len(seeds), n)
        dist = np.linalg.norm(roots - pts[None, :, :], axis=-1)
        scale = max(self.diameter, 1.0)
        dist = np.where(resid < 1e-9 * scale, dist, np.inf)
        # fall back to the smallest-residual root if none converged
        best = np.argmin(dist, axis=0)
        none_ok = ~np.isfinite(dist[best, np.arange(n)])
        if none_ok.any():
            best[none_ok] = np.argmin(resid[:, none_ok], axis=0)
        return roots[best, np.arange(n)]

    def _newton_closest(self, pts: np.ndarray, p: np.ndarray):
        grad = self.implicit_grad(p)
        gg = np.einsum("ni,ni->n", grad, grad)
        mu = np.einsum("ni,ni->n", pts - p, grad) / np.maximum(gg, 1e-12)
        scale = max(self.diameter, 1.0)
        n = pts.shape[0]
        eye = np.eye(3)

        def residual(p, mu):
            grad = self.implicit_grad(p)
            r1 = p - pts + mu[:, None] * grad
            r2 = self.implicit(p)
            return r1, r2, grad

        r1, r2, grad = residual(p, mu)
        res = np.sqrt(np.einsum("ni,ni->n", r1, r1) + r2 * r2)
        for _ in range(50):
            if res.max() < 1e-12 * scale:
                break
            hess = self.implicit_hess(p)
            jac = np.empty((n, 4, 4))
            jac[:, :3, :3] = eye[None] + mu[:, None, None] * hess
            jac[:, :3, 3] = grad
            jac[:, 3, :3] = grad
            jac[:, 3, 3] = 0.0
            rhs = np.concatenate([r1, r2[:, None]], axis=1)[:, :, None]
            try:
                step = np.linalg.solve(jac, rhs)[:, :, 0]
            except np.linalg.LinAlgError:
                jac = jac + 1e-12 * np.eye(4)[None]
                step = np.linalg.solve(jac, rhs)[:, :, 0]
            # damping: halve until the residual does not grow
            alpha = np.ones(n)
            for _ in range(8):
                p_new = p - alpha[:, None] * step[:, :3]
                mu_new = mu - alpha * step[:, 3]
                r1n, r2n, grad_n = residual(p_new, mu_new)
                res_new = np.sqrt(np.einsum("ni,ni->n", r1n, r1n) + r2n * r2n)
                bad = res_new > res
                if not bad.any():
                    break
                alpha = np.where(bad, alpha * 0.5, alpha)
            p, mu, r1, r2, grad, res = p_new, mu_new, r1n, r2n, grad_n, res_new
        return p, res


class Ball(Domain):
    """Round ball; every geometric map is exact."""

    name = "ball"

    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 1.0,
                 chart_radius: float = 0.4, chart_norm: float = 4.0):
        super().__init__(chart_radius, chart_norm)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self._finalize()

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def resolution_scale(self) -> float:
        return self.radius

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def implicit(self, x):
        pts, single = _as_points(x)
        g = np.linalg.norm(pts - self.center, axis=-1) - self.radius
        return g[0] if single else g.reshape(np.asarray(x).shape[:-1])

    def implicit_grad(self, x):
        pts, single = _as_points(x)
        d = pts - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        u = np.where(r > 1e-14, d / np.maximum(r, 1e-300), 0.0)
        return u[0] if single else u.reshape(np.asarray(x).shape)

    def implicit_hess(self, x):
        pts, _ = _as_points(x)
        d = pts - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        r = np.maximum(r, 1e-14)
        u = d / r
        h = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / r[:, :, None]
        return h

    def signed_distance(self, x):
        pts, single = _as_points(x)
        sd = self.radius - np.linalg.norm(pts - self.center, axis=-1)
        return sd[0] if single else sd.reshape(np.asarray(x).shape[:-1])

    def nearest_boundary(self, x):
        pts, single = _as_points(x)
        d = pts - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        u = np.where(r > 1e-14, d / np.maximum(r, 1e-300),
                     np.array([0.0, 0.0, 1.0])[None, :])
        nb = self.center + self.radius * u
        return nb[0] if single else nb.reshape(np.asarray(x).shape)


class Ellipsoid(Domain):
    """Axis-aligned ellipsoid, projection by the generic Newton path."""

    name = "ellipsoid"

    def __init__(self, semiaxes=(1.0, 0.85, 0.7),
                 chart_radius: float = 0.3, chart_norm: float = 5.0):
        super().__init__(chart_radius, chart_norm)
        self.semiaxes = np.asarray(semiaxes, dtype=float)
        if self.semiaxes.min() <= 0:
            raise PreconditionError("semiaxes must be positive")
        self._finalize()

    @property
    def diameter(self) -> float:
        return 2.0 * float(self.semiaxes.max())

    @property
    def resolution_scale(self) -> float:
        # Smallest osculating-ball radius, attained at the long-axis tip.
        return float(self.semiaxes.min() ** 2 / self.semiaxes.max())

    def bounding_box(self):
        return -self.semiaxes.copy(), self.semiaxes.copy()

    def implicit(self, x):
        pts, single = _as_points(x)
        g = np.sum((pts / self.semiaxes) ** 2, axis=-1) - 1.0
        return g[0] if single else g.reshape(np.asarray(x).shape[:-1])

    def implicit_grad(self, x):
        pts, single = _as_points(x)
        g = 2.0 * pts / self.semiaxes**2
        return g[0] if single else g.reshape(np.asarray(x).shape)

    def implicit_hess(self, x):
        pts, _ = _as_points(x)
        h = np.zeros((pts.shape[0], 3, 3))
        h[:] = np.diag(2.0 / self.semiaxes**2)[None]
        return h


class BumpedBall(Domain):
    """Ball with a smooth Gaussian bump on the radial profile.

    The boundary is the level set |x| = 1 + amp * exp(-|u - u0|^2 / width^2)
    with u = x/|x| and u0 the bump direction.
    """

    name = "bumped_ball"

    def __init__(self, amp: float = 0.1, width: float = 0.6,
                 direction=(0.0, 0.0, 1.0),
                 chart_radius: float = 0.25, chart_norm: float = 6.0):
        super().__init__(chart_radius, chart_norm)
        self.amp = float(amp)
        self.width = float(width)
        d = np.asarray(direction, dtype=float)
        self.direction = d / np.linalg.norm(d)
        self._diameter = self._measure_diameter()
        self._finalize()

    def _profile(self, u: np.ndarray) -> np.ndarray:
        d2 = np.sum((u - self.direction) ** 2, axis=-1)
        return 1.0 + self.amp * np.exp(-d2 / self.width**2)

    def _measure_diameter(self) -> float:
        # Fibonacci sphere sample of r(u) + r(-u); the profile is smooth
        # so this is accurate to a fraction of a percent, which is all
        # the closed-form bounds need.  A small safety pad keeps the
        # value an upper bound.
        m = 4000
        i = np.arange(m)
        phi = np.pi * (3.0 - np.sqrt(5.0)) * i
        z = 1.0 - 2.0 * (i + 0.5) / m
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        u = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
        widths = self._profile(u) + self._profile(-u)
        return float(widths.max()) * 1.001

    @property
    def diameter(self) -> float:
        return self._diameter

    @property
    def resolution_scale(self) -> float:
        # The bump raises curvature by about amp * 2 / width^2 on top of
        # the base sphere's 1; half the base radius stays conservative
        # for the preset amplitudes.
        return 0.5

    def bounding_box(self):
        r = 1.0 + self.amp
        return np.full(3, -r), np.full(3, r)

    def implicit(self, x):
        pts, single = _as_points(x)
        r = np.linalg.norm(pts, axis=-1)
        r_safe = np.maximum(r, 1e-14)
        u = pts / r_safe[:, None]
        g = r - self._profile(u)
        g = np.where(r < 1e-14, -1.0, g)
        return g[0] if single else g.reshape(np.asarray(x).shape[:-1])

    def implicit_grad(self, x):
        pts, single = _as_points(x)
        r = np.linalg.norm(pts, axis=-1, keepdims=True)
        r = np.maximum(r, 1e-6)  # formulas are radial; clamp near the center
        u = pts / r
        b = np.exp(-np.sum((u - self.direction) ** 2, axis=-1) / self.width**2)
        v = -2.0 * (u - self.direction) / self.width**2
        jv = (v - np.einsum("ni,ni->n", u, v)[:, None] * u) / r
        g = u - self.amp * b[:, None] * jv
        return g[0] if single else g.reshape(np.asarray(x).shape)

    def implicit_hess(self, x):
        pts, _ = _as_points(x)
        r = np.linalg.norm(pts, axis=-1, keepdims=True)
        r = np.maximum(r, 1e-6)
        u = pts / r
        eye = np.eye(3)[None]
        jmat = (eye - u[:, :, None] * u[:, None, :]) / r[:, :, None]
        b = np.exp(-np.sum((u - self.direction) ** 2, axis=-1) / self.width**2)
        v = -2.0 * (u - self.direction) / self.width**2
        jv = np.einsum("nij,nj->ni", jmat, v)
        uv = np.einsum("ni,ni->n", u, v)
        term = (
            jv[:, :, None] * jv[:, None, :]
            - (
                uv[:, None, None] * jmat
                + u[:, :, None] * jv[:, None, :]
                + jv[:, :, None] * u[:, None, :]
            )
            / r[:, :, None]
            - (2.0 / self.width**2) * np.einsum("nij,njk->nik", jmat, jmat)
        )
        return jmat - self.amp * b[:, None, None] * term


class HalfSpace(Domain):
    """Upper half space {x3 > level} with a finite sampling window.

    Geometry test fixture: the signed distance and projection are exact
    and the boundary chart is an exact isometry with norm bound 1.
    """

    name = "half_space"

    def __init__(self, level: float = 0.0, window_radius: float = 1.0,
                 window_height: float = 2.0, chart_radius: float = 0.5):
        super().__init__(chart_radius, chart_norm=1.0)
        self.level = float(level)
        self.window_radius = float(window_radius)
        self.window_height = float(window_height)
        self._finalize()

    @property
    def diameter(self) -> float:
        return float(
            np.sqrt(8.0 * self.window_radius**2 + self.window_height**2)
        )

    @property
    def resolution_scale(self) -> float:
        return self.window_radius

    def bounding_box(self):
        lo = np.array([-self.window_radius, -self.window_radius, self.level])
        hi = np.array([self.window_radius, self.window_radius,
                       self.level + self.window_height])
        return lo, hi

    def implicit(self, x):
        pts, single = _as_points(x)
        g = self.level - pts[:, 2]
        return g[0] if single else g.reshape(np.asarray(x).shape[:-1])

    def implicit_grad(self, x):
        pts, single = _as_points(x)
        g = np.zeros_like(pts)
        g[:, 2] = -1.0
        return g[0] if single else g.reshape(np.asarray(x).shape)

    def implicit_hess(self, x):
        pts, _ = _as_points(x)
        return np.zeros((pts.shape[0], 3, 3))

    def signed_distance(self, x):
        pts, single = _as_points(x)
        sd = pts[:, 2] - self.level
        return sd[0] if single else sd.reshape(np.asarray(x).shape[:-1])

    def nearest_boundary(self, x):
        pts, single = _as_points(x)
        nb = pts.copy()
        nb[:, 2] = self.level
        return nb[0] if single else nb.reshape(np.asarray(x).shape)


class Intersection(Domain):
    """Intersection of two domains.

    Fixture for boundary-portion experiments (half balls, caps).  The
    signed distance is the minimum of the two parts, which is exact for
    the convex pairs used here.  Boundary charts are not available.
    """

    name = "intersection"

    def __init__(self, first: Domain, second: Domain):
        chart_radius = min(first.chart_radius, second.chart_radius)
        chart_norm = max(first.chart_norm, second.chart_norm)
        self.first = first
        self.second = second
        super().__init__(chart_radius, chart_norm)
        self._finalize()

    @property
    def diameter(self) -> float:
        return min(self.first.diameter, self.second.diameter)

    def bounding_box(self):
        lo1, hi1 = self.first.bounding_box()
        lo2, hi2 = self.second.bounding_box()
        return np.maximum(lo1, lo2), np.minimum(hi1, hi2)

    def implicit(self, x):
        return np.maximum(self.first.implicit(x), self.second.implicit(x))

    def signed_distance(self, x):
        return np.minimum(
            self.first.signed_distance(x), self.second.signed_distance(x)
        )

    def nearest_boundary(self, x):
        pts, single = _as_points(x)
        sd1 = self.first.signed_distance(pts)
        sd2 = self.second.signed_distance(pts)
        nb1 = self.first.nearest_boundary(pts)
        nb2 = self.second.nearest_boundary(pts)
        pick1 = (np.abs(sd1) <= np.abs(sd2))[:, None]
        nb = np.where(pick1, nb1, nb2)
        return nb[0] if single else nb.reshape(np.asarray(x).shape)

    def implicit_grad(self, x):
        pts, single = _as_points(x)
        g1 = self.first.implicit(pts)
        g2 = self.second.implicit(pts)
        d1 = np.asarray(self.first.implicit_grad(pts)).reshape(-1, 3)
        d2 = np.asarray(self.second.implicit_grad(pts)).reshape(-1, 3)
        g = np.where((g1 >= g2)[:, None], d1, d2)
        return g[0] if single else g.reshape(np.asarray(x).shape)

    def implicit_hess(self, x):
        pts, _ = _as_points(x)
        g1 = self.first.implicit(pts)
        g2 = self.second.implicit(pts)
        h1 = self.first.implicit_hess(pts)
        h2 = self.second.implicit_hess(pts)
        return np.where((g1 >= g2)[:, None, None], h1, h2)


# -- boundary charts ---------------------------------------------------------


@dataclass
class Chart:
    """Local boundary-flattening diffeomorphism.

    Maps a boundary neighborhood so that the boundary lands on the
    plane {y3 = 0} and the inside on {y3 > 0}.  Forward and inverse
    evaluators come with first and second derivative evaluators; the
    round trip is exact to 1e-10 inside the chart ball.
    """

    center: np.ndarray
    radius: float
    norm_bound: float
    frame: np.ndarray                 # columns: tangent1, tangent2, -normal
    _graph: Callable                  # (a, b) -> height and derivatives

    def _split(self, x):
        pts, single = _as_points(x)
        u = (pts - self.center) @ self.frame
        return pts, u, single

    def forward(self, x) -> np.ndarray:
        _, u, single = self._split(x)
        phi, _, _ = self._graph(u[:, 0], u[:, 1])
        y = u.copy()
        y[:, 2] = u[:, 2] - phi
        return y[0] if single else y.reshape(np.asarray(x).shape)

    def inverse(self, y) -> np.ndarray:
        pts, single = _as_points(y)
        phi, _, _ = self._graph(pts[:, 0], pts[:, 1])
        u = pts.copy()
        u[:, 2] = pts[:, 2] + phi
        x = self.center + u @ self.frame.T
        return x[0] if single else x.reshape(np.asarray(y).shape)

    def forward_jacobian(self, x) -> np.ndarray:
        """d(forward)/dx, shape (..., 3, 3), row i = gradient of output i."""
        _, u, single = self._split(x)
        _, d1, _ = self._graph(u[:, 0], u[:, 1])
        t1 = self.frame[:, 0]
        t2 = self.frame[:, 1]
        w3 = self.frame[:, 2]
        n = u.shape[0]
        jac = np.empty((n, 3, 3))
        jac[:, 0, :] = t1
        jac[:, 1, :] = t2
        jac[:, 2, :] = (
            w3[None, :]
            - d1[:, 0:1] * t1[None, :]
            - d1[:, 1:2] * t2[None, :]
        )
        return jac[0] if single else jac

    def forward_hessian(self, x) -> np.ndarray:
        """Second derivatives of the forward map, shape (..., 3, 3, 3);
        index [i, r, s] is d^2(output i)/dx_r dx_s."""
        _, u, single = self._split(x)
        _, _, d2 = self._graph(u[:, 0], u[:, 1])
        t1 = self.frame[:, 0]
        t2 = self.frame[:, 1]
        n = u.shape[0]
        hess = np.zeros((n, 3, 3, 3))
        t11 = np.outer(t1, t1)
        t12 = np.outer(t1, t2) + np.outer(t2, t1)
        t22 = np.outer(t2, t2)
        hess[:, 2] = -(
            d2[:, 0, None, None] * t11[None]
            + d2[:, 1, None, None] * t12[None]
            + d2[:, 2, None, None] * t22[None]
        )
        return hess[0] if single else hess

    def inverse_jacobian(self, y) -> np.ndarray:
        pts, single = _as_points(y)
        _, d1, _ = self._graph(pts[:, 0], pts[:, 1])
        n = pts.shape[0]
        jac = np.empty((n, 3, 3))
        # columns of d(inverse)/dy in ambient coordinates
        col0 = self.frame[:, 0][None] + d1[:, 0:1] * self.frame[:, 2][None]
        col1 = self.frame[:, 1][None] + d1[:, 1:2] * self.frame[:, 2][None]
        col2 = np.broadcast_to(self.frame[:, 2][None], (n, 3))
        jac[:, :, 0] = col0
        jac[:, :, 1] = col1
        jac[:, :, 2] = col2
        return jac[0] if single else jac

    def inverse_hessian(self, y) -> np.ndarray:
        pts, single = _as_points(y)
        _, _, d2 = self._graph(pts[:, 0], pts[:, 1])
        n = pts.shape[0]
        hess = np.zeros((n, 3, 3, 3))
        w3 = self.frame[:, 2]
        hess[:, :, 0, 0] = d2[:, 0:1] * w3[None]
        hess[:, :, 0, 1] = d2[:, 1:2] * w3[None]
        hess[:, :, 1, 0] = d2[:, 1:2] * w3[None]
        hess[:, :, 1, 1] = d2[:, 2:3] * w3[None]
        return hess[0] if single else hess


def _tangent_frame(nu: np.ndarray) -> np.ndarray:
    """Orthonormal frame [t1, t2, -nu] as columns."""
    k = int(np.argmin(np.abs(nu)))
    e = np.zeros(3)
    e[k] = 1.0
    t1 = e - np.dot(e, nu) * nu
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(nu, t1)
    return np.stack([t1, t2, -nu], axis=1)


def flat_chart(center=(0.0, 0.0, 0.0), frame=None, radius: float = 1.0,
               norm_bound: float = 1.0) -> Chart:
    """Chart with a flat graph: an isometry (rotation plus shift).

    With the default frame this is the identity map; with an orthogonal
    frame it rotates.  Used to check coefficient transforms against
    closed forms.
    """
    center = np.asarray(center, dtype=float)
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)

    def graph(a, b):
        a = np.asarray(a, dtype=float)
        z = np.zeros_like(a)
        return z, np.zeros(a.shape + (2,)), np.zeros(a.shape + (3,))

    return Chart(center=center, radius=float(radius),
                 norm_bound=float(norm_bound), frame=frame, _graph=graph)


def chart_at(domain: Domain, p, radius: Optional[float] = None) -> Chart:
    """Boundary chart centered at a boundary point.

    The chart straightens the boundary graph over the tangent plane by a
    Newton height solve on the implicit function; first and second
    derivatives of the height come from implicit differentiation.
    """
    if isinstance(domain, Intersection):
        raise ChartError("charts are not available on intersection fixtures")
    p = np.asarray(p, dtype=float)
    sd = float(domain.signed_distance(p))
    if abs(sd) > 1e-8:
        raise ChartError(f"chart center must lie on the boundary, offset {sd:.3e}")
    nu = np.asarray(domain.outward_normal(p), dtype=float)
    frame = _tangent_frame(nu)
    radius = domain.chart_radius if radius is None else float(radius)
    center = p.copy()

    def graph(a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        s = np.zeros_like(a)
        base = center[None, :] + np.outer(a, frame[:, 0]) + np.outer(b, frame[:, 1])
        for _ in range(60):
            pts = base + np.outer(s, frame[:, 2])
            g = domain.implicit(pts)
            gd = domain.implicit_grad(pts).reshape(-1, 3)
            gs = gd @ frame[:, 2]
            step = g / gs
            s = s - step
            if np.max(np.abs(step)) < 1e-13:
                break
        pts = base + np.outer(s, frame[:, 2])
        gd = domain.implicit_grad(pts).reshape(-1, 3)
        hd = domain.implicit_hess(pts)
        ga = gd @ frame[:, 0]
        gb = gd @ frame[:, 1]
        gs = gd @ frame[:, 2]
        phi_a = -ga / gs
        phi_b = -gb / gs
        def form(u, v):
            return np.einsum("i,nij,j->n", u, hd, v)
        t1, t2, w3 = frame[:, 0], frame[:, 1], frame[:, 2]
        gaa = form(t1, t1)
        gab = form(t1, t2)
        gbb = form(t2, t2)
        gas = form(t1, w3)
        gbs = form(t2, w3)
        gss = form(w3, w3)
        phi_aa = -(gaa + 2.0 * gas * phi_a + gss * phi_a**2) / gs
        phi_ab = -(gab + gas * phi_b + gbs * phi_a + gss * phi_a * phi_b) / gs
        phi_bb = -(gbb + 2.0 * gbs * phi_b + gss * phi_b**2) / gs
        d1 = np.stack([phi_a, phi_b], axis=-1)
        d2 = np.stack([phi_aa, phi_ab, phi_bb], axis=-1)
        return s, d1, d2

    return Chart(
        center=center,
        radius=radius,
        norm_bound=domain.chart_norm,
        frame=frame,
        _graph=graph,
    )


# -- basic ops ---------------------------------------------------------------


def boundary_distance(domain: Domain, x) -> np.ndarray:
    """Distance to the boundary for inside points, zero outside."""
    return np.maximum(domain.signed_distance(x), 0.0)


def collar_reflect(domain: Domain, x) -> np.ndarray:
    """Reflect a collar point through the boundary along the normal.

    Defined on the two-sided collar |signed_distance| < chart_radius/2.
    Points just outside the domain land inside at the mirrored depth,
    and the map is an involution to 1e-9.
    """
    pts, single = _as_points(x)
    sd = np.atleast_1d(domain.signed_distance(pts))
    if np.any(np.abs(sd) >= 0.5 * domain.chart_radius):
        raise PreconditionError(
            "collar_reflect needs |signed_distance| < chart_radius/2"
        )
    nb = domain.nearest_boundary(pts).reshape(-1, 3)
    nu = domain.outward_normal(nb).reshape(-1, 3)
    out = pts + 2.0 * sd[:, None] * nu
    return out[0] if single else out.reshape(np.asarray(x).shape)


# -- stratified pair sampling -------------------------------------------------


@dataclass
class PairBatch:
    """Stratified point pairs: dyadic separation shells crossed with
    dyadic buckets of boundary_distance(x) / |x - y|."""

    x: np.ndarray
    y: np.ndarray
    shell: np.ndarray
    bucket: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]


def _bucket_range(k: int) -> Tuple[float, float]:
    # bucket 0 is the deep regime (ratio >= 1); deeper k moves toward
    # the boundary in dyadic steps
    if k == 0:
        return 1.0, np.inf
    return 0.5**k, 0.5 ** (k - 1)


def sample_pairs(
    domain: Domain,
    n_shells: int = 4,
    n_buckets: int = 4,
    per_stratum: int = 100,
    seed: int = 0,
    snap: Optional[Tuple[np.ndarray, float]] = None,
    pool_x: Optional[int] = None,
    min_separation: float = 0.0,
    min_y_depth: float = 0.0,
    total: Optional[int] = None,
) -> PairBatch:
    """Seeded stratified sampler for interior point pairs.

    Strata are dyadic |x - y| shells crossed with dyadic buckets of
    boundary_distance(x)/|x - y|; each stratum receives per_stratum
    pairs (exactly n_shells * n_buckets * per_stratum in total unless
    a smaller total is requested, trimmed evenly).  With snap=(origin, h)
    points land on lattice nodes and strata are rechecked after
    snapping.  pool_x limits each stratum to that many distinct x
    points, which bounds the downstream column-solve budget.
    """
    rng = np.random.default_rng(seed)
    diam = domain.diameter
    lo, hi = domain.bounding_box()
    xs, ys, shells, buckets = [], [], [], []

    def snap_point(p):
        origin, h = snap
        return origin + np.round((p - origin) / h) * h

    for j in range(n_shells):
        s_lo = diam * 0.5 ** (j + 2)
        s_hi = diam * 0.5 ** (j + 1)
        for k in range(n_buckets):
            t_lo, t_hi = _bucket_range(k)
            got = 0
            attempts = 0
            pool: list = []
            pool_uses = 0
            while got < per_stratum:
                attempts += 1
                if attempts > 40000:
                    raise StratificationError(
                        f"stratum shell={j} bucket={k} unfilled after "
                        f"{attempts} draws"
                    )
                if pool_x is not None and len(pool) >= pool_x:
                    x = pool[pool_uses % len(pool)]
                    pool_uses += 1
                else:
                    x = lo + rng.random(3) * (hi - lo)
                    if snap is not None:
                        x = snap_point(x)
                    bd = float(domain.signed_distance(x))
                    if bd <= 0:
                        continue
                    # feasible separation window for this (x, stratum)
                    if not (t_lo * s_lo < bd or t_lo == 1.0):
                        pass
                    window_lo = s_lo if np.isinf(t_hi) else max(s_lo, bd / t_hi)
                    window_hi = min(s_hi, bd / t_lo)
                    if not window_lo < window_hi:
                        continue
                    if pool_x is not None:
                        pool.append(x)
                bd = float(domain.signed_distance(x))
                if bd <= 0:
                    continue
                window_lo = s_lo if np.isinf(t_hi) else max(s_lo, bd / t_hi)
                window_hi = min(s_hi, bd / t_lo)
                if not window_lo < window_hi:
                    continue
                s = window_lo + rng.random() * (window_hi - window_lo)
                w = rng.normal(size=3)
                w /= np.linalg.norm(w)
                y = x + s * w
                if snap is not None:
                    y = snap_point(y)
                r = float(np.linalg.norm(x - y))
                if r <= max(min_separation, 1e-12):
                    continue
                if not (s_lo <= r < s_hi):
                    continue
                t = bd / r
                if not (t_lo <= t) or not (t < t_hi):
                    continue
                if float(domain.signed_distance(y)) <= min_y_depth:
                    continue
                xs.append(x)
                ys.append(y)
                shells.append(j)
                buckets.append(k)
                got += 1

    batch = PairBatch(
        x=np.asarray(xs),
        y=np.asarray(ys),
        shell=np.asarray(shells, dtype=int),
        bucket=np.asarray(buckets, dtype=int),
    )
    if total is not None and total < len(batch):
        keep = np.concatenate(
            [
                np.flatnonzero(
                    (batch.shell == j) & (batch.bucket == k)
                )[: _stratum_quota(total, n_shells * n_buckets, j * n_buckets + k)]
                for j in range(n_shells)
                for k in range(n_buckets)
            ]
        )
        batch = PairBatch(
            x=batch.x[keep], y=batch.y[keep],
            shell=batch.shell[keep], bucket=batch.bucket[keep],
        )
    return batch


def _stratum_quota(total: int, n_strata: int, index: int) -> int:
    base, extra = divmod(total, n_strata)
    return base + (1 if index < extra else 0)


# -- lattice shape constants ---------------------------------------------------


def _lattice(domain: Domain, resolution: int):
    lo, hi = domain.bounding_box()
    pad = 0.02 * (hi - lo)
    lo = lo - pad
    hi = hi + pad
    axes = [np.linspace(lo[d], hi[d], resolution) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return axes, grid


_NEIGHBOR_SHIFTS = [(1, 0), (-1, 0), (1, 1), (-1, 1), (1, 2), (-1, 2)]


def _dilate(mask: np.ndarray, admissible: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for sign, axis in _NEIGHBOR_SHIFTS:
        shifted = np.roll(mask, sign, axis=axis)
        # zero the wrapped slab
        sl = [slice(None)] * 3
        sl[axis] = 0 if sign == 1 else -1
        shifted[tuple(sl)] = False
        out |= shifted
    return out & admissible


def uniformity_constant(
    domain: Domain,
    grid_resolution: int = 33,
    pair_samples: int = 24,
    seed: int = 0,
    c_cap: Optional[float] = None,
) -> float:
    """Measured chain constant on a lattice.

    For sampled interior node pairs, finds (to factor 1.1 by bisection)
    the smallest c admitting a 6-connected lattice path whose nodes stay
    within c |x - y| / 2 of the pair midpoint and keep clearance
    min(|z - x|, |z - y|) <= c * boundary_distance(z).  Raises
    ResolutionError when even the capped c admits no path, which is how
    disconnected samples surface.
    """
    rng = np.random.default_rng(seed)
    axes, grid = _lattice(domain, grid_resolution)
    flat = grid.reshape(-1, 3)
    sd = np.asarray(domain.signed_distance(flat)).reshape(grid.shape[:-1])
    interior = sd > 0.0
    if interior.sum() < 2:
        raise ResolutionError("lattice resolves no interior nodes")
    bd = np.where(interior, sd, 0.0)
    if c_cap is None:
        c_cap = 4.0 * uniformity_bound(domain)
    nodes = np.argwhere(interior)
    dist_scale = float(np.ptp(axes[0])) / (grid_resolution - 1)

    def feasible(c: float, ia, ib) -> bool:
        pa = grid[tuple(ia)]
        pb = grid[tuple(ib)]
        mid = 0.5 * (pa + pb)
        r = np.linalg.norm(pa - pb)
        da = np.linalg.norm(grid - pa, axis=-1)
        db = np.linalg.norm(grid - pb, axis=-1)
        dm = np.linalg.norm(grid - mid, axis=-1)
        admissible = (
            interior
            & (np.minimum(da, db) <= c * bd + 1e-12)
            & (dm <= 0.5 * c * r + 1e-12)
        )
        if not admissible[tuple(ia)] or not admissible[tuple(ib)]:
            return False
        reach = np.zeros_like(admissible)
        reach[tuple(ia)] = True
        for _ in range(3 * grid_resolution):
            new = _dilate(reach, admissible)
            if new[tuple(ib)]:
                return True
            if new.sum() == reach.sum():
                return False
            reach = new
        return bool(reach[tuple(ib)])

    worst = 1.0
    for _ in range(pair_samples):
        ia = nodes[rng.integers(len(nodes))]
        ib = nodes[rng.integers(len(nodes))]
        pa = grid[tuple(ia)]
        pb = grid[tuple(ib)]
        if np.linalg.norm(pa - pb) < 3.0 * dist_scale:
            continue
        hi = 2.0
        while not feasible(hi, ia, ib):
            hi *= 2.0
            if hi > c_cap:
                raise ResolutionError(
                    "no admissible lattice path at the capped chain constant; "
                    "the sampled pair appears disconnected at this resolution"
                )
        lo = 1.0
        while hi / lo > 1.1:
            mid = np.sqrt(lo * hi)
            if feasible(mid, ia, ib):
                hi = mid
            else:
                lo = mid
        worst = max(worst, hi)
    return worst


def uniformity_bound(domain: Domain) -> float:
    """Closed-form admissibility bound for the chain constant in terms
    of the chart data."""
    return (
        200.0
        * CHAIN_NORM_CONSTANT**3
        * domain.chart_norm**6
        * domain.diameter
        / domain.chart_radius
    )


def coplumpness_bound(domain: Domain) -> float:
    """Closed-form admissibility bound for the complement plumpness
    constant in terms of the chart data."""
    return 8.0 * domain.chart_norm**4 * domain.diameter / domain.chart_radius


def coplumpness_constant(
    domain: Domain,
    samples: int = 32,
    grid_resolution: int = 25,
    seed: int = 0,
) -> float:
    """Measured complement plumpness constant.

    For sampled exterior points x and dyadic scales r, searches a local
    lattice for the largest ball inside B(x, r) that avoids the closed
    domain; the constant is the worst r over best ball radius.
    """
    rng = np.random.default_rng(seed)
    lo, hi = domain.bounding_box()
    diam = domain.diameter
    centers = []
    # boundary points and nearby exterior points are the binding cases
    while len(centers) < samples:
        z = lo + rng.random(3) * (hi - lo)
        nb = domain.nearest_boundary(z)
        centers.append(np.asarray(nb))
        out = nb + (0.05 + 0.5 * rng.random()) * diam * np.asarray(
            domain.outward_normal(nb)
        )
        centers.append(out)
    centers = centers[:samples]

    worst = 1.0
    offsets = np.linspace(-1.0, 1.0, grid_resolution)
    cube = np.stack(np.meshgrid(offsets, offsets, offsets, indexing="ij"),
                    axis=-1).reshape(-1, 3)
    for x in centers:
        for j in range(5):
            r = diam * 0.5**j
            pts = x[None, :] + r * cube
            inside_budget = r - np.linalg.norm(pts - x[None, :], axis=-1)
            clearance = np.maximum(-np.asarray(domain.signed_distance(pts)), 0.0)
            best = float(np.minimum(inside_budget, clearance).max())
            if best <= 0.0:
                raise ResolutionError(
                    "no exterior ball resolved; raise grid_resolution"
                )
            worst = max(worst, r / best)
    return worst
