"""Cartesian discretization of divergence-form operators with Dirichlet
boundary conditions, kernel-column solves, and derivative probes.

The operator is assembled in flux form: per-axis conductances evaluated
at face midpoints, the standard four-point cross stencil for
off-diagonal tensor entries, and cut edges next to the boundary handled
by ghost-node linear extrapolation through the crossing point.  That
cut-edge treatment adds the shortened-edge conductance to the diagonal
only, so the matrix stays exactly symmetric and an M-matrix whenever
the tensor is diagonal; columns of the inverse then inherit positivity
and symmetry of the continuum kernel.

Kernel columns solve (-L_h) g = delta/h^3, scaled so the column
approximates the continuum kernel pointwise rather than the bare matrix
inverse.
"""

import struct
from dataclasses import dataclass, field
from threading import Lock
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix, diags
from scipy.sparse.linalg import cg

from .elliptic import CoefficientField
from .errors import (
    PreconditionError,
    ResolutionError,
    SolveError,
    StencilError,
)
from .geometry import Domain, _as_points

SOLVER_TOLERANCE = 1e-10
EPSILON_SYM = SOLVER_TOLERANCE * 10.0
PAD_CELLS = 2
_THETA_FLOOR = 1e-6


def _axis_unit(axis: int) -> np.ndarray:
    e = np.zeros(3)
    e[axis] = 1.0
    return e


class Grid:
    """Cartesian lattice over a padded bounding box of the domain.

    Nodes are classified interior / boundary-adjacent / exterior;
    boundary-adjacent nodes carry the crossing fraction of each cut
    edge, found by bisection on the implicit function.
    """

    def __init__(self, domain: Domain, spacing: float):
        self.domain = domain
        self.h = float(spacing)
        lo, hi = domain.bounding_box()
        self.origin = np.asarray(lo, dtype=float) - PAD_CELLS * self.h
        extent = np.asarray(hi, dtype=float) + PAD_CELLS * self.h - self.origin
        self.shape = tuple(
            int(np.ceil(extent[k] / self.h - 1e-9)) + 1 for k in range(3)
        )
        pts = self.points()
        g = np.asarray(domain.implicit(pts.reshape(-1, 3))).reshape(self.shape)
        self.inside = g < 0.0
        if not self.inside.any():
            raise ResolutionError(
                f"spacing {self.h} leaves no interior nodes"
            )
        self.row = -np.ones(self.shape, dtype=np.int64)
        self.row[self.inside] = np.arange(int(self.inside.sum()))
        self.nodes = np.argwhere(self.inside)
        # cut edges: (i, j, k, axis, sign) -> fraction of h to the crossing
        self.fractions: Dict[Tuple[int, int, int, int, int], float] = {}
        self._find_cut_edges()
        self._adjacent = np.zeros(self.shape, dtype=bool)
        for (i, j, k, _, _) in self.fractions:
            self._adjacent[i, j, k] = True

    # -- lattice handling ------------------------------------------------------

    def points(self) -> np.ndarray:
        axes = [
            self.origin[k] + self.h * np.arange(self.shape[k])
            for k in range(3)
        ]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def node_point(self, ijk) -> np.ndarray:
        return self.origin + self.h * np.asarray(ijk, dtype=float)

    def node_of(self, point) -> Tuple[int, int, int]:
        """Lattice index of a point that must sit on a node."""
        rel = (np.asarray(point, dtype=float) - self.origin) / self.h
        idx = np.rint(rel).astype(int)
        if np.abs(rel - idx).max() > 1e-9:
            raise PreconditionError(
                f"point {point} is off-lattice by {np.abs(rel - idx).max():.2e} cells"
            )
        if not all(0 <= idx[k] < self.shape[k] for k in range(3)):
            raise PreconditionError(f"point {point} outside the grid box")
        return tuple(int(v) for v in idx)

    def is_interior(self, ijk) -> bool:
        return bool(self.inside[tuple(ijk)])

    def is_boundary_adjacent(self, ijk) -> bool:
        return bool(self._adjacent[tuple(ijk)])

    def classification(self) -> np.ndarray:
        """0 exterior, 1 interior, 2 boundary-adjacent (cut) interior."""
        out = self.inside.astype(np.int8)
        out[self._adjacent] = 2
        return out

    @property
    def interior_count(self) -> int:
        return int(self.inside.sum())

    def interior_points(self) -> np.ndarray:
        return self.origin + self.h * self.nodes.astype(float)

    def fraction(self, ijk, axis: int, sign: int) -> Optional[float]:
        return self.fractions.get(
            (int(ijk[0]), int(ijk[1]), int(ijk[2]), axis, sign)
        )

    # -- cut edges ------------------------------------------------------------

    def _shifted_inside(self, axis: int, sign: int) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        src = [slice(None)] * 3
        dst = [slice(None)] * 3
        if sign > 0:
            dst[axis] = slice(None, -1)
            src[axis] = slice(1, None)
        else:
            dst[axis] = slice(1, None)
            src[axis] = slice(None, -1)
        out[tuple(dst)] = self.inside[tuple(src)]
        return out

    def _find_cut_edges(self) -> None:
        pts = self.points()
        for axis in range(3):
            step = self.h * _axis_unit(axis)
            for sign in (1, -1):
                cut = self.inside & ~self._shifted_inside(axis, sign)
                base = pts[cut]
                if base.shape[0] == 0:
                    continue
                theta = self._bisect(base, sign * step)
                for ijk, th in zip(np.argwhere(cut), theta):
                    key = (int(ijk[0]), int(ijk[1]), int(ijk[2]), axis, sign)
                    self.fractions[key] = float(th)

    def _bisect(self, base: np.ndarray, step: np.ndarray) -> np.ndarray:
        lo = np.zeros(base.shape[0])
        hi = np.ones(base.shape[0])
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            g = np.asarray(
                self.domain.implicit(base + mid[:, None] * step[None, :])
            )
            going = g < 0.0
            lo = np.where(going, mid, lo)
            hi = np.where(going, hi, mid)
        return np.clip(0.5 * (lo + hi), _THETA_FLOOR, 1.0)


@dataclass
class DiscreteOperator:
    """Sparse symmetric-positive-definite form of the negated operator
    with Dirichlet rows eliminated.

    Contacts record where eliminated neighbors touch the boundary: each
    is a (row, weight, point) triple contributing weight * g(point) to
    the right-hand side when boundary data g is nonzero.
    """

    grid: Grid
    matrix: csr_matrix
    contact_rows: np.ndarray
    contact_weights: np.ndarray
    contact_points: np.ndarray
    _precond: Optional[object] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def symmetry_defect(self) -> float:
        d = self.matrix - self.matrix.T
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._precond is None:
            self._precond = diags(1.0 / self.matrix.diagonal())
        cap = int(20.0 * np.sqrt(self.size)) + 10
        x, _ = cg(
            self.matrix, rhs, rtol=1e-12, atol=0.0, maxiter=cap,
            M=self._precond,
        )
        num = float(np.linalg.norm(self.matrix @ x - rhs))
        den = float(np.linalg.norm(rhs))
        if den > 0.0 and num / den > SOLVER_TOLERANCE:
            raise SolveError(
                f"conjugate gradients stalled at relative residual "
                f"{num / den:.3e} (cap {cap} iterations)"
            )
        return x


def discretize(domain: Domain, coefficients: CoefficientField,
               spacing: float) -> Tuple[Grid, DiscreteOperator]:
    """Assemble the flux-form operator on a fresh grid.

    The spacing must resolve the boundary: at most a quarter of the
    domain's interior-ball scale.
    """
    if spacing > domain.resolution_scale / 4.0 + 1e-12:
        raise PreconditionError(
            f"spacing {spacing} exceeds a quarter of the interior-ball "
            f"scale {domain.resolution_scale}"
        )
    grid = Grid(domain, spacing)
    h = grid.h
    pts = grid.points()
    n_unknown = grid.interior_count
    rows, cols, vals = [], [], []
    c_rows, c_weights, c_points = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    # Diagonal part: per-axis conductances.
    for axis in range(3):
        step = _axis_unit(axis) * h
        # interior-interior edges, counted once in the + direction
        pair = grid.inside & grid._shifted_inside(axis, 1)
        if pair.any():
            base_idx = np.argwhere(pair)
            nbr_idx = base_idx + np.array([[int(axis == k) for k in range(3)]])
            mids = pts[pair] + 0.5 * step
            cond = coefficients.tensor(mids)[:, axis, axis] / h**2
            ra = grid.row[tuple(base_idx.T)]
            rb = grid.row[tuple(nbr_idx.T)]
            for r, c, v in (
                (ra, ra, cond), (rb, rb, cond),
                (ra, rb, -cond), (rb, ra, -cond),
            ):
                rows.append(r)
                cols.append(c)
                vals.append(v)
        # cut edges in both directions
        for sign in (1, -1):
            cut = grid.inside & ~grid._shifted_inside(axis, sign)
            if not cut.any():
                continue
            base_idx = np.argwhere(cut)
            theta = np.array([
                grid.fractions[
                    (int(i), int(j), int(k), axis, sign)
                ]
                for i, j, k in base_idx
            ])
            base = pts[cut]
            direction = sign * step
            mids = base + 0.5 * theta[:, None] * direction[None, :]
            crossings = base + theta[:, None] * direction[None, :]
            cond = coefficients.tensor(mids)[:, axis, axis] / (theta * h**2)
            ra = grid.row[tuple(base_idx.T)]
            rows.append(ra)
            cols.append(ra)
            vals.append(cond)
            c_rows.append(ra)
            c_weights.append(cond)
            c_points.append(crossings)

    # Off-diagonal part: four-point cross stencil per ordered axis pair.
    if not coefficients.is_diagonal:
        interior_idx = grid.nodes
        base = grid.origin + grid.h * interior_idx.astype(float)
        ra = grid.row[tuple(interior_idx.T)]
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                for si in (1, -1):
                    a_here = coefficients.tensor(
                        base + si * h * _axis_unit(i)[None, :]
                    )[:, i, j]
                    for sj in (1, -1):
                        # coefficient of u at base + si e_i + sj e_j in L u
                        coeff = si * sj * a_here / (4.0 * h**2)
                        tgt = interior_idx.copy()
                        tgt[:, i] += si
                        tgt[:, j] += sj
                        tgt_inside = grid.inside[tuple(tgt.T)]
                        rb = grid.row[tuple(tgt.T)]
                        keep = tgt_inside
                        if keep.any():
                            rows.append(ra[keep])
                            cols.append(rb[keep])
                            vals.append(-coeff[keep])
                        out = ~tgt_inside
                        if out.any():
                            # eliminated corner: boundary data enters the
                            # right-hand side at the nearest boundary point
                            proj = grid.domain.nearest_boundary(
                                grid.origin + grid.h * tgt[out].astype(float)
                            )
                            c_rows.append(ra[out])
                            c_weights.append(coeff[out])
                            c_points.append(np.asarray(proj).reshape(-1, 3))

    rows = np.concatenate([np.atleast_1d(r) for r in rows])
    cols = np.concatenate([np.atleast_1d(c) for c in cols])
    vals = np.concatenate([np.atleast_1d(v) for v in vals])
    matrix = coo_matrix(
        (vals, (rows, cols)), shape=(n_unknown, n_unknown)
    ).tocsr()
    matrix.sum_duplicates()
    if c_rows:
        contact_rows = np.concatenate(c_rows)
        contact_weights = np.concatenate(c_weights)
        contact_points = np.concatenate(c_points, axis=0)
    else:
        contact_rows = np.zeros(0, dtype=np.int64)
        contact_weights = np.zeros(0)
        contact_points = np.zeros((0, 3))
    return grid, DiscreteOperator(
        grid=grid,
        matrix=matrix,
        contact_rows=contact_rows,
        contact_weights=contact_weights,
        contact_points=contact_points,
    )


# -- kernel columns ------------------------------------------------------------


class GreenTable:
    """Cache of solved kernel columns keyed by source node.

    Columns are inserted once and never evicted; inserts are guarded by
    a lock so independent solves may run from a thread pool.  Cached
    values satisfy positivity and symmetry within epsilon_sym, ten times
    the solver tolerance.
    """

    def __init__(self, grid: Grid, op: DiscreteOperator):
        self.grid = grid
        self.op = op
        self.epsilon_sym = EPSILON_SYM
        self._columns: Dict[Tuple[int, int, int], np.ndarray] = {}
        self._lock = Lock()

    @property
    def sources(self):
        return sorted(self._columns)

    def column(self, x) -> np.ndarray:
        """Full-lattice values of the kernel with source x; zero outside
        the domain (the Dirichlet extension)."""
        ijk = self._source_key(x)
        with self._lock:
            cached = self._columns.get(ijk)
        if cached is not None:
            return cached
        col = green_column(self.op, self.grid.node_point(ijk))
        with self._lock:
            self._columns.setdefault(ijk, col)
            return self._columns[ijk]

    def ensure(self, sources: Iterable) -> None:
        for x in sources:
            self.column(x)

    def value(self, x, y) -> float:
        col = self.column(x)
        return float(col[self.grid.node_of(np.asarray(y, dtype=float))])

    def _source_key(self, x) -> Tuple[int, int, int]:
        ijk = self.grid.node_of(np.asarray(x, dtype=float))
        if not self.grid.is_interior(ijk):
            raise PreconditionError(f"source {x} is not an interior node")
        return ijk

    def symmetry_defect(self) -> float:
        """Largest |K(x,y) - K(y,x)| over cached pairs."""
        worst = 0.0
        keys = self.sources
        for a in range(len(keys)):
            for b in range(a + 1, len(keys)):
                xa, xb = keys[a], keys[b]
                worst = max(
                    worst,
                    abs(
                        float(self._columns[xa][xb])
                        - float(self._columns[xb][xa])
                    ),
                )
        return worst

    def positivity_defect(self) -> float:
        """Most negative cached value (0 when all columns are
        nonnegative)."""
        worst = 0.0
        for col in self._columns.values():
            worst = min(worst, float(col.min()))
        return worst


def green_column(op: DiscreteOperator, x) -> np.ndarray:
    """Kernel column for an interior source node, on the full lattice.

    Solves (-L_h) g = delta_x / h^3; the result vanishes on eliminated
    nodes and is nonnegative up to ten times the solver tolerance.
    """
    grid = op.grid
    ijk = grid.node_of(np.asarray(x, dtype=float))
    if not grid.is_interior(ijk):
        raise PreconditionError(f"source {x} is not an interior node")
    rhs = np.zeros(op.size)
    rhs[grid.row[ijk]] = 1.0 / grid.h**3
    sol = op.solve(rhs)
    if sol.min() < -EPSILON_SYM / grid.h**3:
        raise SolveError(
            f"column dips to {sol.min():.3e}, below the positivity slack"
        )
    out = np.zeros(grid.shape)
    out[grid.inside] = sol
    return out


def apply_green(gt: GreenTable, f: np.ndarray) -> np.ndarray:
    """Apply the solution operator to a lattice function supported on
    interior nodes: one sparse solve, equal to the kernel-weighted sum
    h^3 sum_y K(x, y) f(y)."""
    grid = gt.grid
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise PreconditionError(
            f"lattice function shape {f.shape} does not match {grid.shape}"
        )
    if np.any(f[~grid.inside] != 0.0):
        raise PreconditionError("source term must vanish outside the domain")
    sol = gt.op.solve(f[grid.inside])
    out = np.zeros(grid.shape)
    out[grid.inside] = sol
    return out


def apply_green_crosscheck(gt: GreenTable, f: np.ndarray,
                           probes: Sequence) -> float:
    """Largest discrepancy at the probe nodes between the sparse-solve
    application and the explicit kernel-weighted sum (which uses the
    symmetry of cached columns)."""
    grid = gt.grid
    u = apply_green(gt, f)
    worst = 0.0
    for x in probes:
        ijk = grid.node_of(np.asarray(x, dtype=float))
        col = gt.column(grid.node_point(ijk))
        dense = grid.h**3 * float((col * f).sum())
        worst = max(worst, abs(dense - float(u[ijk])))
    return worst


def residual_check(gt: GreenTable, f: np.ndarray) -> float:
    """Relative residual of the applied operator against the source."""
    grid = gt.grid
    u = apply_green(gt, f)
    r = gt.op.matrix @ u[grid.inside] - f[grid.inside]
    den = float(np.linalg.norm(f[grid.inside]))
    if den == 0.0:
        return float(np.linalg.norm(r))
    return float(np.linalg.norm(r)) / den


# -- lattice derivatives -------------------------------------------------------


def _axis_samples(grid: Grid, col: np.ndarray, ijk, axis: int):
    """Offsets and values of the three per-axis samples at a node:
    the node itself plus one sample per side, each either the interior
    neighbor or the boundary zero at the crossing point."""
    h = grid.h
    out = []
    for sign in (-1, 1):
        nbr = list(ijk)
        nbr[axis] += sign
        nbr = tuple(nbr)
        if all(0 <= nbr[k] < grid.shape[k] for k in range(3)) and \
                grid.inside[nbr]:
            out.append((sign * h, float(col[nbr])))
        else:
            theta = grid.fraction(ijk, axis, sign)
            if theta is None:
                raise StencilError(
                    f"node {tuple(ijk)} lacks a usable sample on axis "
                    f"{axis}, side {sign}"
                )
            out.append((sign * theta * h, 0.0))
    (a, ua), (b, ub) = out
    return a, ua, b, ub


def _first_derivative(grid, col, ijk, axis) -> float:
    a, ua, b, ub = _axis_samples(grid, col, ijk, axis)
    u0 = float(col[tuple(ijk)])
    return (
        ua * (-b) / (a * (a - b))
        + u0 * (a + b) / (a * b)
        + ub * (-a) / (b * (b - a))
    )


def _second_derivative(grid, col, ijk, axis) -> float:
    a, ua, b, ub = _axis_samples(grid, col, ijk, axis)
    u0 = float(col[tuple(ijk)])
    return 2.0 * (
        ua / (a * (a - b)) + u0 / (a * b) + ub / (b * (b - a))
    )


def _mixed_derivative(grid, col, ijk, ax1, ax2) -> float:
    """d^2/(dx_ax1 dx_ax2): differentiate the per-axis first derivative
    along the other axis, centrally when both neighbors are interior,
    else by a second-order one-sided interior stencil."""
    h = grid.h

    def v_at(shift: int) -> float:
        nbr = list(ijk)
        nbr[ax1] += shift
        nbr = tuple(nbr)
        if not (all(0 <= nbr[k] < grid.shape[k] for k in range(3))
                and grid.inside[nbr]):
            raise StencilError(
                f"node {nbr} needed by the mixed stencil is not interior"
            )
        return _first_derivative(grid, col, nbr, ax2)

    def side_ok(shift: int) -> bool:
        nbr = list(ijk)
        nbr[ax1] += shift
        nbr = tuple(nbr)
        return all(0 <= nbr[k] < grid.shape[k] for k in range(3)) and \
            bool(grid.inside[nbr])

    if side_ok(1) and side_ok(-1):
        return (v_at(1) - v_at(-1)) / (2.0 * h)
    for sgn in (1, -1):
        if side_ok(sgn) and side_ok(2 * sgn):
            v0 = _first_derivative(grid, col, tuple(ijk), ax2)
            return sgn * (
                -3.0 * v0 + 4.0 * v_at(sgn) - v_at(2 * sgn)
            ) / (2.0 * h)
    raise StencilError(
        f"no usable one-sided stencil at node {tuple(ijk)} on axis {ax1}"
    )


def green_derivatives(gt: GreenTable, x, y, beta: Sequence[int]) -> float:
    """Finite-difference derivative of the cached column in its second
    argument, total order at most two.

    Central differences on uncut stencils; one-sided second-order
    differences with the boundary zero at the crossing point otherwise.
    The probe must keep |x - y| at least three spacings.
    """
    grid = gt.grid
    beta = tuple(int(b) for b in beta)
    if len(beta) != 3 or any(b < 0 for b in beta) or sum(beta) > 2:
        raise PreconditionError(f"invalid derivative multi-index {beta}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(x - y) < 3.0 * grid.h - 1e-12:
        raise PreconditionError(
            "probe closer than three spacings to the source"
        )
    ijk = grid.node_of(y)
    if not grid.is_interior(ijk):
        raise PreconditionError(f"probe {y} is not an interior node")
    col = gt.column(x)
    order = sum(beta)
    if order == 0:
        return float(col[ijk])
    if order == 1:
        axis = beta.index(1)
        return _first_derivative(grid, col, ijk, axis)
    if 2 in beta:
        return _second_derivative(grid, col, ijk, beta.index(2))
    ax1, ax2 = [k for k in range(3) if beta[k] == 1]
    return _mixed_derivative(grid, col, ijk, ax1, ax2)


# -- boundary-value solves -----------------------------------------------------


def dirichlet_solve(domain: Domain, coefficients: CoefficientField,
                    spacing: float, boundary_data: Callable,
                    source: Optional[Callable] = None):
    """Solve the operator with inhomogeneous boundary data.

    boundary_data maps points on the boundary to values; source (if
    given) maps interior points to the right-hand side.  Returns the
    grid, the operator, and the lattice solution (zero outside the
    domain; boundary values live at crossing points, not lattice
    nodes).
    """
    grid, op = discretize(domain, coefficients, spacing)
    rhs = np.zeros(op.size)
    if source is not None:
        vals = np.asarray(source(grid.interior_points()), dtype=float)
        rhs += vals.reshape(-1)
    if op.contact_rows.size:
        g_vals = np.asarray(
            boundary_data(op.contact_points), dtype=float
        ).reshape(-1)
        np.add.at(rhs, op.contact_rows, op.contact_weights * g_vals)
    sol = op.solve(rhs)
    out = np.zeros(grid.shape)
    out[grid.inside] = sol
    return grid, op, out


# -- serialization -------------------------------------------------------------

_MAGIC = b"GLGF64v1"


def save_grid_values(path, grid: Grid, values: np.ndarray) -> None:
    """Flat binary layout: magic, dims, spacing, box corners, then the
    row-major float64 payload."""
    values = np.asarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise PreconditionError(
            f"values shape {values.shape} does not match grid {grid.shape}"
        )
    hi = grid.origin + grid.h * (np.asarray(grid.shape) - 1)
    header = _MAGIC + struct.pack(
        "<3q7d", *grid.shape, grid.h, *grid.origin, *hi
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(values).tobytes())


def load_grid_values(path):
    """Inverse of save_grid_values: returns (dims, spacing, origin,
    values)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise PreconditionError(f"not a lattice-values file: {path}")
        dims_and_geom = struct.unpack("<3q7d", fh.read(8 * 10))
        dims = tuple(int(d) for d in dims_and_geom[:3])
        h = float(dims_and_geom[3])
        origin = np.asarray(dims_and_geom[4:7])
        payload = np.frombuffer(fh.read(), dtype="<f8")
    values = payload.reshape(dims)
    return dims, h, origin, values


def save_grid_csv(path, grid: Grid, values: np.ndarray) -> None:
    """One row per lattice node: x, y, z, value."""
    values = np.asarray(values, dtype=float)
    pts = grid.points().reshape(-1, 3)
    flat = values.reshape(-1)
    with open(path, "w") as fh:
        fh.write("x,y,z,value\n")
        for (px, py, pz), v in zip(pts, flat):
            fh.write(f"{px:.17g},{py:.17g},{pz:.17g},{v:.17g}\n")
