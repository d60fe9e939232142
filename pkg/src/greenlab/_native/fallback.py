"""Pure-numpy twin of the compiled tricubic contraction.

Same contract as the compiled kernel: prefiltered coefficients,
fractional index coordinates, per-axis derivative orders in {0, 1, 2},
mirror reflection for edge taps.
"""

import numpy as np


def _axis_weights(f: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return np.stack(
            [
                (1.0 - f) ** 3 / 6.0,
                (3.0 * f**3 - 6.0 * f**2 + 4.0) / 6.0,
                (-3.0 * f**3 + 3.0 * f**2 + 3.0 * f + 1.0) / 6.0,
                f**3 / 6.0,
            ],
            axis=-1,
        )
    if order == 1:
        return np.stack(
            [
                -((1.0 - f) ** 2) / 2.0,
                (3.0 * f**2 - 4.0 * f) / 2.0,
                (-3.0 * f**2 + 2.0 * f + 1.0) / 2.0,
                f**2 / 2.0,
            ],
            axis=-1,
        )
    return np.stack(
        [1.0 - f, 3.0 * f - 2.0, -3.0 * f + 1.0, f],
        axis=-1,
    )


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    idx = np.abs(idx)
    over = idx > n - 1
    idx[over] = 2 * (n - 1) - idx[over]
    return idx


def evaluate(coeff: np.ndarray, t: np.ndarray,
             order0: int, order1: int, order2: int) -> np.ndarray:
    base = np.floor(t).astype(np.intp)
    f = t - base
    wx = _axis_weights(f[:, 0], order0)
    wy = _axis_weights(f[:, 1], order1)
    wz = _axis_weights(f[:, 2], order2)
    offs = np.arange(-1, 3)
    ix = _mirror(base[:, 0, None] + offs, coeff.shape[0])
    iy = _mirror(base[:, 1, None] + offs, coeff.shape[1])
    iz = _mirror(base[:, 2, None] + offs, coeff.shape[2])
    sub = coeff[
        ix[:, :, None, None], iy[:, None, :, None], iz[:, None, None, :]
    ]
    return np.einsum("ma,mb,mc,mabc->m", wx, wy, wz, sub, optimize=True)
