"""Coefficient tensors of divergence-form operators.

A coefficient field is a smooth symmetric matrix function with an exact
first-derivative evaluator.  The module converts divergence form into
strong form (moving one derivative onto the coefficients as a drift),
pushes coefficients forward through a boundary chart, and measures
ellipticity and weighted displacement-regularity norms by sampling.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .errors import ChartError
from .geometry import Chart, Domain, _as_points, boundary_distance


class CoefficientField:
    """Symmetric coefficient tensor with analytic first derivatives.

    tensor(x) has shape (..., 3, 3); tensor_grad(x) has shape
    (..., 3, 3, 3) indexed [k, i, j] = d a^{ij} / d x_k.  Evaluators are
    exactly symmetric in (i, j) by construction.  Derivatives are never
    taken numerically inside the library; the drift of the strong form
    must stay exact.
    """

    name = "coefficients"
    holder_exponent = 0.5
    ellipticity_lower = 1.0
    ellipticity_upper = 1.0
    is_diagonal = True

    def tensor(self, x) -> np.ndarray:
        raise NotImplementedError

    def tensor_grad(self, x) -> np.ndarray:
        raise NotImplementedError


class IdentityCoefficients(CoefficientField):
    name = "identity"

    def tensor(self, x):
        pts, _ = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3))
        out[:] = np.eye(3)
        return out

    def tensor_grad(self, x):
        pts, _ = _as_points(x)
        return np.zeros((pts.shape[0], 3, 3, 3))


class ConstantDiagonal(CoefficientField):
    name = "constant_diagonal"

    def __init__(self, diag=(2.0, 1.0, 1.0)):
        self.diag = np.asarray(diag, dtype=float)
        self.ellipticity_lower = float(self.diag.min())
        self.ellipticity_upper = float(self.diag.max())

    def tensor(self, x):
        pts, _ = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3))
        out[:] = np.diag(self.diag)
        return out

    def tensor_grad(self, x):
        pts, _ = _as_points(x)
        return np.zeros((pts.shape[0], 3, 3, 3))


class SineIsotropic(CoefficientField):
    """(1 + eps * sin x1) times the identity; the standard smooth
    perturbation preset.  Diagonal, so discrete operators stay exactly
    symmetric."""

    name = "sine_isotropic"

    def __init__(self, eps: float = 0.2):
        self.eps = float(eps)
        self.ellipticity_lower = 1.0 - self.eps
        self.ellipticity_upper = 1.0 + self.eps

    def tensor(self, x):
        pts, _ = _as_points(x)
        s = 1.0 + self.eps * np.sin(pts[:, 0])
        out = np.zeros((pts.shape[0], 3, 3))
        out[:, 0, 0] = s
        out[:, 1, 1] = s
        out[:, 2, 2] = s
        return out

    def tensor_grad(self, x):
        pts, _ = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3, 3))
        ds = self.eps * np.cos(pts[:, 0])
        for i in range(3):
            out[:, 0, i, i] = ds
        return out


class LinearDiagonal(CoefficientField):
    """diag(1 + slope * x1, 1, 1); its strong-form drift is constant."""

    name = "linear_diagonal"

    def __init__(self, slope: float = 0.5):
        self.slope = float(slope)
        # Positivity holds on |x1| < 1/|slope|; declared bound covers the
        # unit-scale presets with a margin for near-boundary quadrature.
        self.ellipticity_lower = 1.0 - abs(self.slope) * 1.2
        self.ellipticity_upper = 1.0 + abs(self.slope) * 1.2

    def tensor(self, x):
        pts, _ = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3))
        out[:, 0, 0] = 1.0 + self.slope * pts[:, 0]
        out[:, 1, 1] = 1.0
        out[:, 2, 2] = 1.0
        return out

    def tensor_grad(self, x):
        pts, _ = _as_points(x)
        out = np.zeros((pts.shape[0], 3, 3, 3))
        out[:, 0, 0, 0] = self.slope
        return out


class RotatingAnisotropic(CoefficientField):
    """R(theta)^T D R(theta) with theta = eps * sin(x1 + x2); a fully
    anisotropic preset with off-diagonal entries and exact derivatives."""

    name = "rotating_anisotropic"
    is_diagonal = False

    def __init__(self, eps: float = 0.3, diag=(1.5, 1.0, 0.75)):
        self.eps = float(eps)
        self.diag = np.asarray(diag, dtype=float)
        self.ellipticity_lower = float(self.diag.min())
        self.ellipticity_upper = float(self.diag.max())

    def _rotation(self, pts):
        th = self.eps * np.sin(pts[:, 0] + pts[:, 1])
        c, s = np.cos(th), np.sin(th)
        n = pts.shape[0]
        rot = np.zeros((n, 3, 3))
        rot[:, 0, 0] = c
        rot[:, 0, 1] = -s
        rot[:, 1, 0] = s
        rot[:, 1, 1] = c
        rot[:, 2, 2] = 1.0
        drot = np.zeros((n, 3, 3))
        drot[:, 0, 0] = -s
        drot[:, 0, 1] = -c
        drot[:, 1, 0] = c
        drot[:, 1, 1] = -s
        return rot, drot

    def tensor(self, x):
        pts, _ = _as_points(x)
        rot, _ = self._rotation(pts)
        a = np.einsum("nri,rs,nsj->nij", rot, np.diag(self.diag), rot)
        # Symmetrized so mirrored entries compare equal bitwise.
        return 0.5 * (a + np.swapaxes(a, -1, -2))

    def tensor_grad(self, x):
        pts, _ = _as_points(x)
        rot, drot = self._rotation(pts)
        d = np.diag(self.diag)
        da_dtheta = np.einsum("nri,rs,nsj->nij", drot, d, rot) + np.einsum(
            "nri,rs,nsj->nij", rot, d, drot
        )
        da_dtheta = 0.5 * (da_dtheta + np.swapaxes(da_dtheta, -1, -2))
        dth = np.zeros((pts.shape[0], 3))
        grad_arg = self.eps * np.cos(pts[:, 0] + pts[:, 1])
        dth[:, 0] = grad_arg
        dth[:, 1] = grad_arg
        return dth[:, :, None, None] * da_dtheta[:, None, :, :]


PRESETS = {
    cls.name: cls
    for cls in [
        IdentityCoefficients,
        ConstantDiagonal,
        SineIsotropic,
        LinearDiagonal,
        RotatingAnisotropic,
    ]
}


@dataclass
class StrongForm:
    """Strong-form data: the same tensor plus the drift produced by
    moving the outer derivative onto the coefficients."""

    field: CoefficientField

    def tensor(self, x) -> np.ndarray:
        return self.field.tensor(x)

    def drift(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        grad = self.field.tensor_grad(pts)
        # drift_i = sum_j d_j a^{ji}
        b = np.einsum("njji->ni", grad)
        return b[0] if single else b.reshape(np.asarray(x).shape)


def to_strong_form(field: CoefficientField) -> StrongForm:
    return StrongForm(field)


# -- sampled ellipticity and regularity norms --------------------------------


@dataclass
class EllipticityReport:
    """Sampled minimum of the quadratic form with its witness."""

    value: float
    declared: float
    witness_point: np.ndarray
    witness_direction: np.ndarray
    satisfied: bool

    def __float__(self) -> float:
        return self.value


def _sample_points(samples: int, domain: Optional[Domain],
                   seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if domain is None:
        return rng.uniform(-2.0, 2.0, size=(samples, 3))
    lo, hi = domain.bounding_box()
    pts = np.empty((0, 3))
    while pts.shape[0] < samples:
        cand = rng.uniform(lo, hi, size=(4 * samples, 3))
        cand = cand[np.asarray(domain.signed_distance(cand)) > 0]
        pts = np.vstack([pts, cand])
    return pts[:samples]


def ellipticity_constant(field: CoefficientField, samples: int = 4096,
                         domain: Optional[Domain] = None,
                         seed: int = 0) -> EllipticityReport:
    """Minimum of the quadratic form over sampled points and all unit
    directions (exact over directions via the eigendecomposition)."""
    pts = _sample_points(samples, domain, seed)
    w, v = np.linalg.eigh(field.tensor(pts))
    flat = int(np.argmin(w[:, 0]))
    value = float(w[flat, 0])
    return EllipticityReport(
        value=value,
        declared=field.ellipticity_lower,
        witness_point=pts[flat],
        witness_direction=v[flat, :, 0],
        satisfied=value >= field.ellipticity_lower - 1e-9,
    )


def _operator_norm(mats: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.eigvalsh(mats)).max(axis=-1)


def holder_norm(field: CoefficientField, domain: Domain,
                samples: int = 2000, alpha: Optional[float] = None,
                seed: int = 0) -> float:
    """Sampled lower bound for the interior-weighted regularity norm of
    the coefficients together with their strong-form drift.

    The tensor enters with weight exponent zero (plain sup norm plus
    displacement quotient weighted by the smaller boundary distance to
    the power alpha); the drift enters one weight order higher.
    """
    if alpha is None:
        alpha = field.holder_exponent
    pts = _sample_points(samples, domain, seed)
    dist = np.asarray(boundary_distance(domain, pts))
    a = field.tensor(pts)
    b = StrongForm(field).drift(pts).reshape(-1, 3)

    sup_a = float(_operator_norm(a).max())
    sup_b = float((dist * np.linalg.norm(b, axis=-1)).max())

    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(samples)
    ia = np.arange(samples)
    sep = np.linalg.norm(pts - pts[perm], axis=-1)
    keep = sep > 1e-9
    ia, ib = ia[keep], perm[keep]
    sep = sep[keep]
    pair_weight = np.minimum(dist[ia], dist[ib])
    quot_a = _operator_norm(a[ia] - a[ib]) / sep**alpha
    quot_b = np.linalg.norm(b[ia] - b[ib], axis=-1) / sep**alpha
    part_a = float((pair_weight**alpha * quot_a).max()) if ia.size else 0.0
    part_b = float(
        (pair_weight ** (1.0 + alpha) * quot_b).max()
    ) if ia.size else 0.0
    return sup_a + part_a + sup_b + part_b


# -- chart pushforward --------------------------------------------------------


def transform_coefficients(field: CoefficientField, chart: Chart,
                           x) -> Tuple[np.ndarray, np.ndarray]:
    """Second-order tensor and drift of the operator rewritten in chart
    image coordinates, evaluated at the chart images of x.

    The tensor conjugates by the forward jacobian; the drift collects
    the tensor contracted with the forward hessian plus the pushforward
    of the original strong-form drift.  The returned tensor is
    symmetrized so equality of mirrored entries is exact.
    """
    pts, single = _as_points(x)
    off = np.linalg.norm(pts - chart.center[None, :], axis=-1)
    if np.any(off > chart.radius * (1.0 + 1e-12)):
        raise ChartError(
            f"point {off.max():.3e} from chart center exceeds radius "
            f"{chart.radius}"
        )
    jac = chart.forward_jacobian(pts)
    hess = chart.forward_hessian(pts)
    a = field.tensor(pts)
    base_drift = StrongForm(field).drift(pts).reshape(-1, 3)
    a_tilde = np.einsum("nir,nrs,njs->nij", jac, a, jac)
    a_tilde = 0.5 * (a_tilde + np.swapaxes(a_tilde, -1, -2))
    b_tilde = np.einsum("nrs,nirs->ni", a, hess) + np.einsum(
        "nir,nr->ni", jac, base_drift
    )
    if single:
        return a_tilde[0], b_tilde[0]
    return a_tilde, b_tilde


@dataclass
class TransformedEllipticityReport:
    """Sampled minimum of the transformed quadratic form."""

    value: float
    lower_prediction: float
    upper_prediction: float
    witness_point: np.ndarray
    satisfied: bool

    def __float__(self) -> float:
        return self.value


def check_transformed_ellipticity(
    tensor_eval: Callable[[np.ndarray], np.ndarray],
    declared_lower: float,
    declared_upper: float,
    chart_norm: float,
    points,
) -> TransformedEllipticityReport:
    """Verify the transformed tensor stays uniformly positive on the
    sample, reporting the minimum eigenvalue and the closed-form window
    it is expected to land in.

    The window comes from singular-value bounds of the flattening
    jacobian: each row has norm at most sqrt(1 + chart_norm^2), so the
    spectrum is trapped between declared_lower / (3 (1 + chart_norm^2))
    and 9 chart_norm^2 declared_upper for chart_norm >= 1.
    """
    pts, _ = _as_points(points)
    eigs = np.linalg.eigvalsh(tensor_eval(pts))
    flat = int(np.argmin(eigs[:, 0]))
    k = max(1.0, float(chart_norm))
    value = float(eigs[flat, 0])
    return TransformedEllipticityReport(
        value=value,
        lower_prediction=declared_lower / (3.0 * (1.0 + k**2)),
        upper_prediction=9.0 * k**2 * declared_upper,
        witness_point=pts[flat],
        satisfied=value > 0.0,
    )
