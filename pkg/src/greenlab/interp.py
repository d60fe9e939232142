"""Tricubic interpolation of lattice tables with exact spline derivatives.

Values on a regular cubic lattice are prefiltered once into B-spline
coefficients; evaluation contracts 4x4x4 coefficient stencils against
per-axis weight vectors.  Derivative weights give the spline's own
derivatives through second order per axis, scaled to physical
coordinates by the lattice spacing.
"""

from typing import Sequence, Tuple

import numpy as np
from scipy.ndimage import spline_filter

from . import _native
from .errors import EvalPlanError
from .geometry import _as_points


class TricubicSpline:
    """Interpolant of a scalar table on a regular cubic lattice.

    The lattice is origin + spacing * (i, j, k) with the table shaped
    (n0, n1, n2).  Evaluation is defined on the full lattice box; edge
    cells use mirror extension consistent with the prefilter.
    """

    def __init__(self, values: np.ndarray, origin, spacing: float):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 4:
            raise EvalPlanError(
                f"table must be 3-d with at least 4 nodes per axis, "
                f"got shape {values.shape}"
            )
        self.origin = np.asarray(origin, dtype=np.float64).copy()
        self.spacing = float(spacing)
        self.shape = values.shape
        self.coeff = np.ascontiguousarray(
            spline_filter(values, order=3, mode="mirror")
        )

    def evaluate(self, points, orders: Sequence[int] = (0, 0, 0)) -> np.ndarray:
        """Spline value or partial derivative at physical points.

        orders gives the per-axis derivative order, each in {0, 1, 2};
        the result carries the 1/spacing factor per derivative order.
        """
        o0, o1, o2 = (int(o) for o in orders)
        if not all(o in (0, 1, 2) for o in (o0, o1, o2)):
            raise EvalPlanError(f"axis orders must be in {{0,1,2}}, got {orders}")
        pts, single = _as_points(points)
        t = (pts - self.origin[None, :]) / self.spacing
        tol = 1e-9
        for ax in range(3):
            hi = self.shape[ax] - 1
            bad = (t[:, ax] < -tol) | (t[:, ax] > hi + tol)
            if bad.any():
                raise EvalPlanError(
                    f"{int(bad.sum())} points outside the table lattice "
                    f"on axis {ax}"
                )
        t = np.clip(t, 0.0, np.asarray(self.shape, dtype=float) - 1.0 - 1e-12)
        t = np.ascontiguousarray(t)
        vals = _native.evaluate(self.coeff, t, o0, o1, o2)
        vals = vals / self.spacing ** (o0 + o1 + o2)
        if single:
            return vals[0]
        return vals.reshape(np.asarray(points).shape[:-1])

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points, (0, 0, 0))

    def gradient(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        g = np.stack(
            [
                self.evaluate(pts, tuple(int(k == ax) for k in range(3)))
                for ax in range(3)
            ],
            axis=-1,
        )
        return g[0] if single else g

    def hessian(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        h = np.empty((pts.shape[0], 3, 3))
        for i in range(3):
            for j in range(i, 3):
                orders = [0, 0, 0]
                orders[i] += 1
                orders[j] += 1
                h[:, i, j] = self.evaluate(pts, tuple(orders))
                h[:, j, i] = h[:, i, j]
        return h[0] if single else h


def lattice_points(origin, spacing: float,
                   shape: Tuple[int, int, int]) -> np.ndarray:
    """Physical coordinates of every lattice node, shape (*shape, 3)."""
    origin = np.asarray(origin, dtype=float)
    axes = [origin[k] + spacing * np.arange(shape[k]) for k in range(3)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)
