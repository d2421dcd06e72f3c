"""Grid-sampled fields on a rectangular box and their discrete calculus.

Cell-centered collocated layout.  The box is [0, L_1] x ... x [0, L_d]
with d in {2, 3}; cell centers sit at (j + 1/2) h.  Boundary conditions
enter through one of three ghost-cell conventions:

    "odd"    homogeneous Dirichlet: ghost = -(adjacent cell), so the
             value at the wall face is exactly 0,
    "even"   homogeneous Neumann: ghost = adjacent cell,
    "extrap" no condition: quadratic extrapolation through the last
             three cells (keeps one-sided stencils second order).

The pair (odd, even) matters: the central difference with odd ghosts and
the central difference with even ghosts are exact negative adjoints of
each other in the midpoint inner product.  The pressure projection and
the variational viscous operators in the solver rely on that identity,
so it is asserted in the test suite rather than assumed.

Q-tensor fields store the 5 independent components in a leading axis
(see tensor_algebra); vector fields store d components the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_algebra as ta

GHOST_FOR_BC = {"dirichlet": "odd", "none": "extrap"}


class SolverError(RuntimeError):
    """Iterative solve failed to reach tolerance within the iteration cap."""


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on a rectangular box."""

    shape: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        d = len(self.shape)
        if d not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {d}")
        if len(self.lengths) != d:
            raise ValueError("shape and lengths disagree on dimension")
        if any(n < 8 for n in self.shape):
            raise ValueError(f"need >= 8 cells per axis, got {self.shape}")
        if any(L <= 0 for L in self.lengths):
            raise ValueError(f"box lengths must be positive, got {self.lengths}")
        h = self.spacing
        if max(h) / min(h) > 4.0:
            raise ValueError(f"cell aspect ratio {max(h)/min(h):.2f} > 4")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    def axis_centers(self, k: int) -> np.ndarray:
        h = self.spacing[k]
        return (np.arange(self.shape[k]) + 0.5) * h

    def cell_centers(self) -> np.ndarray:
        """Coordinates of all cell centers, shape (d, *shape)."""
        axes = [self.axis_centers(k) for k in range(self.ndim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))


@dataclass
class ScalarField:
    grid: Grid
    data: np.ndarray
    bc: str = "dirichlet"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"scalar data shape {self.data.shape} != grid {self.grid.shape}")

    def copy(self):
        return replace(self, data=self.data.copy())


@dataclass
class VectorField:
    grid: Grid
    data: np.ndarray  # (d, *shape)
    bc: str = "dirichlet"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.grid.ndim,) + self.grid.shape:
            raise ValueError(f"vector data shape {self.data.shape} incompatible with grid")

    def copy(self):
        return replace(self, data=self.data.copy())


@dataclass
class QField:
    grid: Grid
    data: np.ndarray  # (5, *shape)
    bc: str = "dirichlet"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (ta.NQ,) + self.grid.shape:
            raise ValueError(f"Q data shape {self.data.shape} incompatible with grid")

    def copy(self):
        return replace(self, data=self.data.copy())


def zeros_like_kind(grid: Grid, kind: str, bc: str = "dirichlet"):
    if kind == "scalar":
        return ScalarField(grid, np.zeros(grid.shape), bc)
    if kind == "vector":
        return VectorField(grid, np.zeros((grid.ndim,) + grid.shape), bc)
    if kind == "q":
        return QField(grid, np.zeros((ta.NQ,) + grid.shape), bc)
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# low-level stencils (arr may carry leading component axes; `ax` is the
# array axis to differentiate along)
# ---------------------------------------------------------------------------

def _take(arr, ax, idx):
    sl = [slice(None)] * arr.ndim
    sl[ax] = idx
    return arr[tuple(sl)]


def _ghost_layers(arr: np.ndarray, ax: int, mode: str, layers: int):
    """Left and right ghost slabs (each `layers` thick) for one axis."""
    f0, f1, f2 = (_take(arr, ax, slice(k, k + 1)) for k in range(3))
    g0, g1, g2 = (_take(arr, ax, slice(-1 - k, arr.shape[ax] - k)) for k in range(3))
    if mode == "odd":
        left = [-f0, -f1]
        right = [-g0, -g1]
    elif mode == "even":
        left = [f0, f1]
        right = [g0, g1]
    elif mode == "extrap":
        left = [3 * f0 - 3 * f1 + f2, 6 * f0 - 8 * f1 + 3 * f2]
        right = [3 * g0 - 3 * g1 + g2, 6 * g0 - 8 * g1 + 3 * g2]
    else:
        raise ValueError(f"unknown ghost mode {mode!r}")
    lpad = np.concatenate(left[layers - 1 :: -1], axis=ax)
    rpad = np.concatenate(right[:layers], axis=ax)
    return lpad, rpad


def _padded(arr, ax, mode, layers=1):
    lpad, rpad = _ghost_layers(arr, ax, mode, layers)
    return np.concatenate([lpad, arr, rpad], axis=ax)


def diff1(arr: np.ndarray, ax: int, h: float, mode: str) -> np.ndarray:
    """Central first derivative with one ghost layer."""
    p = _padded(arr, ax, mode, 1)
    n = arr.shape[ax]
    return (_take(p, ax, slice(2, n + 2)) - _take(p, ax, slice(0, n))) / (2.0 * h)


def diff2(arr: np.ndarray, ax: int, h: float, mode: str) -> np.ndarray:
    """Second derivative, standard 3-point stencil with one ghost layer."""
    p = _padded(arr, ax, mode, 1)
    n = arr.shape[ax]
    return (
        _take(p, ax, slice(2, n + 2))
        - 2.0 * _take(p, ax, slice(1, n + 1))
        + _take(p, ax, slice(0, n))
    ) / (h * h)


def diff1_upwind(arr: np.ndarray, ax: int, h: float, mode: str, upos: np.ndarray) -> np.ndarray:
    """Second-order upwind-biased first derivative.

    upos is a boolean mask (broadcastable to arr) selecting where the
    transporting velocity component is >= 0 (backward-biased stencil).
    """
    p = _padded(arr, ax, mode, 2)
    n = arr.shape[ax]
    c = _take(p, ax, slice(2, n + 2))
    back = (3.0 * c - 4.0 * _take(p, ax, slice(1, n + 1)) + _take(p, ax, slice(0, n))) / (2.0 * h)
    fwd = (-3.0 * c + 4.0 * _take(p, ax, slice(3, n + 3)) - _take(p, ax, slice(4, n + 4))) / (2.0 * h)
    return np.where(upos, back, fwd)


def _comp_axes(fld) -> int:
    """Number of leading component axes in the field's data array."""
    return fld.data.ndim - fld.grid.ndim


# ---------------------------------------------------------------------------
# field-level operators
# ---------------------------------------------------------------------------

def grad(fld: ScalarField | QField):
    """Gradient.  ScalarField -> VectorField; QField -> array (d, 5, *shape)."""
    g = fld.grid
    mode = GHOST_FOR_BC[fld.bc]
    off = _comp_axes(fld)
    parts = [diff1(fld.data, off + k, g.spacing[k], mode) for k in range(g.ndim)]
    out = np.stack(parts)
    if isinstance(fld, ScalarField):
        return VectorField(g, out, bc="none")
    return out


def div(v: VectorField) -> ScalarField:
    g = v.grid
    mode = GHOST_FOR_BC[v.bc]
    out = np.zeros(g.shape)
    for k in range(g.ndim):
        out += diff1(v.data[k], k, g.spacing[k], mode)
    return ScalarField(g, out, bc="none")


def lapl(fld):
    """Laplacian, preserving the field kind (bc tag of the result: none)."""
    g = fld.grid
    mode = GHOST_FOR_BC[fld.bc]
    off = _comp_axes(fld)
    out = np.zeros_like(fld.data)
    for k in range(g.ndim):
        out += diff2(fld.data, off + k, g.spacing[k], mode)
    return replace(fld, data=out, bc="none")


def grad_lapl(v: VectorField) -> np.ndarray:
    """(grad lapl v)[i, j] = d_i (lapl v_j), shape (d, d, *shape).

    The outer gradient reuses the field's ghost convention on lapl v so
    the composition matches the regularization operator in the solver.
    """
    g = v.grid
    mode = GHOST_FOR_BC[v.bc]
    lap = lapl(v).data
    out = np.empty((g.ndim, g.ndim) + g.shape)
    for j in range(g.ndim):
        for i in range(g.ndim):
            out[i, j] = diff1(lap[j], i, g.spacing[i], mode)
    return out


def advect(fld, u: VectorField):
    """(u . grad) fld with a second-order upwind-biased stencil."""
    if fld.grid is not u.grid and fld.grid != u.grid:
        raise ValueError("advect: grids differ")
    g = fld.grid
    mode = GHOST_FOR_BC[fld.bc]
    off = _comp_axes(fld)
    out = np.zeros_like(fld.data)
    for k in range(g.ndim):
        upos = u.data[k] >= 0.0
        out += u.data[k] * diff1_upwind(fld.data, off + k, g.spacing[k], mode, upos)
    return replace(fld, data=out, bc="none")


def velocity_gradient(u: VectorField) -> np.ndarray:
    """G[i, j] = d u_i / d x_j, shape (d, d, *shape)."""
    g = u.grid
    mode = GHOST_FOR_BC[u.bc]
    out = np.empty((g.ndim, g.ndim) + g.shape)
    for i in range(g.ndim):
        for j in range(g.ndim):
            out[i, j] = diff1(u.data[i], j, g.spacing[j], mode)
    return out


def strain(u: VectorField) -> np.ndarray:
    """D(u) = (grad u + grad u^T)/2 on velocity ghosts, shape (d, d, *shape)."""
    gu = velocity_gradient(u)
    return 0.5 * (gu + np.swapaxes(gu, 0, 1))


def strain_adjoint_apply(tau: np.ndarray, grid: Grid) -> np.ndarray:
    """Negative adjoint of `strain`: row divergence of a symmetric matrix
    field with even ghosts, shape (d, *shape).

    For any u, tau:  sum(tau : D(u)) == -sum(result . u)   (midpoint sums),
    exactly, because diff1(odd)^T = -diff1(even).
    """
    d = grid.ndim
    out = np.zeros((d,) + grid.shape)
    sym = 0.5 * (tau + np.swapaxes(tau, 0, 1))
    for i in range(d):
        for j in range(d):
            out[i] -= diff1(sym[i, j], j, grid.spacing[j], "even")
    return out


def divergence_of_matrix(sig: np.ndarray, grid: Grid, mode: str = "even") -> np.ndarray:
    """Row divergence (div sig)_i = d_j sig_ij over the grid directions.

    sig may be 3x3 (Q-tensor stresses) while the grid is 2D; only the
    first d rows/columns participate.
    """
    d = grid.ndim
    out = np.zeros((d,) + grid.shape)
    for i in range(d):
        for j in range(d):
            out[i] += diff1(sig[i, j], j, grid.spacing[j], mode)
    return out


def elastic_force(q: QField, h_field: QField, penalty_q: QField) -> VectorField:
    """Momentum source of the order-parameter stresses.

    f_i = -(H + n phi Q) : d_i Q + [div(QH - HQ)]_i, the form obtained
    from the weak formulation after one integration by parts of the
    antisymmetric stress.  The divergence uses even ghosts, the exact
    negative adjoint of the velocity-side gradient.
    """
    if q.grid != h_field.grid or q.grid != penalty_q.grid:
        raise ValueError("elastic_force: grids differ")
    g = q.grid
    dq = grad(q)  # (d, 5, *shape)
    hp = h_field.data + penalty_q.data
    force = np.empty((g.ndim,) + g.shape)
    for i in range(g.ndim):
        force[i] = -ta.qdot(hp, dq[i])
    sig = ta.antisym_stress(q.data, h_field.data)
    force += divergence_of_matrix(sig, g, mode="even")
    return VectorField(g, force, bc="none")


# ---------------------------------------------------------------------------
# inner products (midpoint quadrature)
# ---------------------------------------------------------------------------

def _pointwise_dot(f, g) -> np.ndarray:
    if isinstance(f, ScalarField):
        return f.data * g.data
    if isinstance(f, VectorField):
        return np.einsum("k...,k...->...", f.data, g.data)
    if isinstance(f, QField):
        return ta.qdot(f.data, g.data)
    raise TypeError(type(f))


def inner(f, g) -> float:
    """Integral of f : g over the box (midpoint rule)."""
    if f.grid != g.grid:
        raise ValueError("inner: grids differ")
    return float(np.sum(_pointwise_dot(f, g)) * f.grid.cell_volume)


def restricted_inner(f, g, mask: ScalarField) -> float:
    """Integral of f : g weighted by mask (values in [0, 1])."""
    if f.grid != mask.grid:
        raise ValueError("restricted_inner: grids differ")
    if mask.data.min() < 0.0 or mask.data.max() > 1.0:
        raise ValueError("mask values must lie in [0, 1]")
    return float(np.sum(_pointwise_dot(f, g) * mask.data) * f.grid.cell_volume)


def norm_l2(f) -> float:
    return np.sqrt(max(inner(f, f), 0.0))


# ---------------------------------------------------------------------------
# conjugate gradient and pressure projection
# ---------------------------------------------------------------------------

def conjugate_gradient(apply_a, b: np.ndarray, tol: float = 1e-10,
                       maxiter: int | None = None, precond=None,
                       x0: np.ndarray | None = None,
                       atol: float = 0.0) -> tuple[np.ndarray, int]:
    """Matrix-free CG for a symmetric positive (semi)definite operator.

    Stops at |r| <= max(tol * |b|, atol); raises SolverError at the
    iteration cap.  Returns (x, iterations).
    """
    bnorm = float(np.sqrt(np.vdot(b, b).real))
    stop = max(tol * bnorm, atol)
    if bnorm <= stop:
        return np.zeros_like(b), 0
    if maxiter is None:
        maxiter = 20 * int(np.sqrt(b.size)) + 100
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x) if x0 is not None else b.copy()
    z = precond(r) if precond else r
    p = z.copy()
    rz = float(np.vdot(r, z).real)
    for it in range(1, maxiter + 1):
        ap = apply_a(p)
        pap = float(np.vdot(p, ap).real)
        if pap <= 0.0 or not np.isfinite(pap):
            # round-off breakdown; accept if the residual is already tiny
            if np.sqrt(float(np.vdot(r, r).real)) <= max(np.sqrt(tol) * bnorm, stop):
                return x, it
            raise SolverError(f"CG breakdown at iteration {it} (p.Ap = {pap:g})")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.sqrt(float(np.vdot(r, r).real)) <= stop:
            return x, it
        z = precond(r) if precond else r
        rz_new = float(np.vdot(r, z).real)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not reach tol={tol:g} in {maxiter} iterations "
        f"(residual {np.sqrt(float(np.vdot(r, r).real)) / bnorm:.3e} relative)"
    )


def _div_data(u: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros(grid.shape)
    for k in range(grid.ndim):
        out += diff1(u[k], k, grid.spacing[k], "odd")
    return out


def _grad_pressure(p: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.empty((grid.ndim,) + grid.shape)
    for k in range(grid.ndim):
        out[k] = diff1(p, k, grid.spacing[k], "even")
    return out


def projection_iteration_cap(grid: Grid) -> int:
    return 10 * max(grid.shape)


def project_divfree(u: VectorField, tol: float = 1e-10) -> tuple[VectorField, ScalarField]:
    """Remove the discrete-gradient part of u.

    Solves  -div(grad p) = -div u  with Neumann ghosts on p and Dirichlet
    ghosts on u; because those two stencils are exact negative adjoints,
    the solve is a genuine L2-orthogonal projection: the divergence of
    the result is bounded by the CG residual and re-projecting is a
    no-op to solver tolerance.
    """
    g = u.grid

    def apply_a(p):
        return -_div_data(_grad_pressure(p, g), g)

    b = -_div_data(u.data, g)
    # absolute floor tied to the velocity scale: the contract bounds the
    # residual divergence by tol * |u| / h, so chasing b below that level
    # (pure round-off outside range(A)) is meaningless
    atol = tol * float(np.sqrt(np.vdot(u.data, u.data).real)) / g.min_spacing
    p, _ = conjugate_gradient(
        apply_a, b, tol=tol, atol=atol, maxiter=projection_iteration_cap(g)
    )
    unew = u.data - _grad_pressure(p, g)
    return replace(u, data=unew), ScalarField(g, p, bc="none")


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_vtk(path, grid: Grid, fields: dict, title: str = "nemcol fields") -> None:
    """Legacy VTK STRUCTURED_POINTS (ASCII) snapshot of cell-center data.

    Accepts ScalarField / VectorField / QField values; Q-tensors are
    written as five scalar component records.
    """
    nz = grid.shape[2] if grid.ndim == 3 else 1
    dims = (grid.shape[0], grid.shape[1], nz)
    hx, hy = grid.spacing[0], grid.spacing[1]
    hz = grid.spacing[2] if grid.ndim == 3 else 1.0
    npts = int(np.prod(dims))

    def flat(a):
        # VTK expects x varying fastest
        full = a if grid.ndim == 3 else a[..., None]
        return full.transpose(2, 1, 0).reshape(-1)

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {dims[0]} {dims[1]} {dims[2]}",
        f"ORIGIN {0.5 * hx:.17g} {0.5 * hy:.17g} {0.5 * hz:.17g}",
        f"SPACING {hx:.17g} {hy:.17g} {hz:.17g}",
        f"POINT_DATA {npts}",
    ]
    for name, fld in fields.items():
        if isinstance(fld, ScalarField):
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in flat(fld.data))
        elif isinstance(fld, VectorField):
            lines.append(f"VECTORS {name} double")
            comp = [flat(fld.data[k]) for k in range(grid.ndim)]
            while len(comp) < 3:
                comp.append(np.zeros(npts))
            lines.extend(f"{a:.17g} {b:.17g} {c:.17g}" for a, b, c in zip(*comp))
        elif isinstance(fld, QField):
            labels = ("q11", "q22", "q12", "q13", "q23")
            for k, lab in enumerate(labels):
                lines.append(f"SCALARS {name}_{lab} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(f"{v:.17g}" for v in flat(fld.data[k]))
        else:
            raise TypeError(f"cannot export {type(fld)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv(path, header: list[str], rows) -> None:
    """Comma-separated time series at full double precision."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def append_csv_row(path, header: list[str], row) -> None:
    import os

    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write(",".join(header) + "\n")
        fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
