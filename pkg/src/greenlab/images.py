"""Analytic Dirichlet kernel of the negative Laplacian on the unit ball.

Built by reflecting the free-space fundamental solution across the
sphere; the reflected radius obeys rho(x, y)^2 = |x|^2 |y|^2 - 2 x.y + 1,
which is symmetric in its arguments.  The class serves as the
desk-scale reference for solver accuracy tests and verifier fixtures.
Derivative evaluators cover multi-indices up to order 2 in each variable
with total order at most 3, which is everything the decay, displacement,
and mixed-derivative checks consume.
"""

from typing import Dict, Sequence, Tuple

import numpy as np

from .errors import CapabilityError

Multi = Tuple[int, int, int]


def _multi_axes(m: Multi) -> Tuple[int, ...]:
    axes: list = []
    for axis, count in enumerate(m):
        axes.extend([axis] * int(count))
    return tuple(axes)


def _power_tensors(q: Dict[str, np.ndarray], p: float) -> Dict[str, np.ndarray]:
    """Derivative tensors of q(x, y) ** p from the derivative tensors of q.

    Keys of q: value, x, y, xx, xy, yy, xxy, xyy with shapes
    (N,), (N,3), (N,3), (N,3,3), (N,3,3), (N,3,3), (N,3,3,3), (N,3,3,3);
    third-order index conventions are xxy[k,l,i] and xyy[k,i,j].
    """
    v = q["value"]
    f1 = p * v ** (p - 1)
    f2 = p * (p - 1) * v ** (p - 2)
    f3 = p * (p - 1) * (p - 2) * v ** (p - 3)
    out = {"value": v**p}
    out["x"] = f1[:, None] * q["x"]
    out["y"] = f1[:, None] * q["y"]
    out["xx"] = (
        f2[:, None, None] * q["x"][:, :, None] * q["x"][:, None, :]
        + f1[:, None, None] * q["xx"]
    )
    out["xy"] = (
        f2[:, None, None] * q["x"][:, :, None] * q["y"][:, None, :]
        + f1[:, None, None] * q["xy"]
    )
    out["yy"] = (
        f2[:, None, None] * q["y"][:, :, None] * q["y"][:, None, :]
        + f1[:, None, None] * q["yy"]
    )
    out["xxy"] = (
        f3[:, None, None, None]
        * q["x"][:, :, None, None]
        * q["x"][:, None, :, None]
        * q["y"][:, None, None, :]
        + f2[:, None, None, None]
        * (
            q["xx"][:, :, :, None] * q["y"][:, None, None, :]
            + q["x"][:, :, None, None] * q["xy"][:, None, :, :]
            + q["x"][:, None, :, None] * q["xy"][:, :, None, :]
        )
        + f1[:, None, None, None] * q["xxy"]
    )
    out["xyy"] = (
        f3[:, None, None, None]
        * q["x"][:, :, None, None]
        * q["y"][:, None, :, None]
        * q["y"][:, None, None, :]
        + f2[:, None, None, None]
        * (
            q["xy"][:, :, :, None] * q["y"][:, None, None, :]
            + q["xy"][:, :, None, :] * q["y"][:, None, :, None]
            + q["x"][:, :, None, None] * q["yy"][:, None, :, :]
        )
        + f1[:, None, None, None] * q["xyy"]
    )
    return out


def _separation_tensors(xs: np.ndarray, ys: np.ndarray) -> Dict[str, np.ndarray]:
    """Derivative tensors of |x - y|^2."""
    d = xs - ys
    n = xs.shape[0]
    eye = np.broadcast_to(np.eye(3), (n, 3, 3))
    zero3 = np.zeros((n, 3, 3, 3))
    return {
        "value": np.einsum("ni,ni->n", d, d),
        "x": 2.0 * d,
        "y": -2.0 * d,
        "xx": 2.0 * eye.copy(),
        "xy": -2.0 * eye.copy(),
        "yy": 2.0 * eye.copy(),
        "xxy": zero3,
        "xyy": zero3.copy(),
    }


def _reflected_tensors(xs: np.ndarray, ys: np.ndarray) -> Dict[str, np.ndarray]:
    """Derivative tensors of |x|^2 |y|^2 - 2 x.y + 1."""
    n = xs.shape[0]
    eye = np.eye(3)
    x2 = np.einsum("ni,ni->n", xs, xs)
    y2 = np.einsum("ni,ni->n", ys, ys)
    xxy = np.zeros((n, 3, 3, 3))
    xyy = np.zeros((n, 3, 3, 3))
    # d3 q / dx_k dx_l dy_i = 4 delta_kl y_i
    xxy += 4.0 * eye[None, :, :, None] * ys[:, None, None, :]
    # d3 q / dx_k dy_i dy_j = 4 x_k delta_ij
    xyy += 4.0 * xs[:, :, None, None] * eye[None, None, :, :]
    return {
        "value": x2 * y2 - 2.0 * np.einsum("ni,ni->n", xs, ys) + 1.0,
        "x": 2.0 * xs * y2[:, None] - 2.0 * ys,
        "y": 2.0 * ys * x2[:, None] - 2.0 * xs,
        "xx": 2.0 * eye[None] * y2[:, None, None],
        "xy": 4.0 * xs[:, :, None] * ys[:, None, :] - 2.0 * eye[None],
        "yy": 2.0 * eye[None] * x2[:, None, None],
        "xxy": xxy,
        "xyy": xyy,
    }


_TENSOR_KEY = {
    (0, 0): "value",
    (1, 0): "x",
    (0, 1): "y",
    (2, 0): "xx",
    (1, 1): "xy",
    (0, 2): "yy",
    (2, 1): "xxy",
    (1, 2): "xyy",
}


class _PowerLawPair:
    """Shared machinery: linear combination of |x-y|^2 ** p and the
    reflected radius ** p with given weights."""

    def __init__(self, p: float, weight_free: float, weight_reflected: float):
        self.p = p
        self.weight_free = weight_free
        self.weight_reflected = weight_reflected

    def _tensors(self, xs, ys, key):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        xs, ys = np.broadcast_arrays(xs, ys)
        out = self.weight_free * _power_tensors(
            _separation_tensors(xs, ys), self.p
        )[key]
        if self.weight_reflected != 0.0:
            out = out + self.weight_reflected * _power_tensors(
                _reflected_tensors(xs, ys), self.p
            )[key]
        return out

    def evaluate(self, xs, ys) -> np.ndarray:
        return self._tensors(xs, ys, "value")

    def derivative(self, alpha: Multi, beta: Multi, xs, ys) -> np.ndarray:
        oa, ob = int(sum(alpha)), int(sum(beta))
        if oa > 2 or ob > 2 or oa + ob > 3:
            raise CapabilityError(
                f"derivative order ({alpha}, {beta}) beyond the analytic table"
            )
        tensor = self._tensors(xs, ys, _TENSOR_KEY[(oa, ob)])
        idx = _multi_axes(alpha) + _multi_axes(beta)
        n = tensor.shape[0]
        take = (np.arange(n),) + tuple(np.full(n, a) for a in idx)
        return tensor[take]


class ReflectedBallKernel(_PowerLawPair):
    """Dirichlet kernel of the negative Laplacian on the unit ball."""

    name = "reflected_ball"
    holder_exponent = 1.0
    max_order = (2, 2)

    def __init__(self):
        # 1 / ((n - 2) * area of unit sphere) with n = 3
        c = 1.0 / (4.0 * np.pi)
        super().__init__(p=-0.5, weight_free=c, weight_reflected=-c)


class FreeSpaceKernel(_PowerLawPair):
    """Bare power kernel |x - y|^(2-n) with n = 3.

    Discriminator fixture: it has the right size away from the boundary
    but no boundary decay, so decay checks must reject it.
    """

    name = "free_space_power"
    holder_exponent = 1.0
    max_order = (2, 2)

    def __init__(self):
        super().__init__(p=-0.5, weight_free=1.0, weight_reflected=0.0)
