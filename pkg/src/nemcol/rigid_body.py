"""Colloid geometry, rasterization, and rigid kinematics.

A colloid is a ball (disk in 2D) or a finite union of balls produced by
merging.  Its pose is carried exactly (center, rotation matrix, linear
and angular velocity); the grid only ever sees a re-rasterized indicator
function, so rigid transport never diffuses the body.

Conventions for the planar case: the body is a disk, the angular
velocity is the scalar out-of-plane component, and the inertia is the
scalar integral of |x-h|^2 (m R^2 / 2 for a disk).  In 3D the inertia is
the full 3x3 tensor of the cited integrand with unit density.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fields import Grid, ScalarField, VectorField


class BodyOutsideDomain(ValueError):
    pass


class DegenerateBody(ValueError):
    pass


@dataclass(frozen=True)
class ColloidShape:
    """Union of balls in the body frame: ((offset, radius), ...)."""

    components: tuple

    def __post_init__(self):
        comps = tuple(
            (np.asarray(off, dtype=float), float(r)) for off, r in self.components
        )
        object.__setattr__(self, "components", comps)
        for _, r in comps:
            if r <= 0:
                raise ValueError(f"ball radius must be positive, got {r}")

    @staticmethod
    def ball(radius: float, ndim: int) -> "ColloidShape":
        return ColloidShape((((0.0,) * ndim, radius),))

    @property
    def ndim(self) -> int:
        return len(self.components[0][0])

    def bounding_radius(self) -> float:
        return max(np.linalg.norm(off) + r for off, r in self.components)

    def is_connected(self, tol: float) -> bool:
        """Components pairwise reachable with gaps at most tol."""
        n = len(self.components)
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            ci, ri = self.components[i]
            for j in range(n):
                if j in seen:
                    continue
                cj, rj = self.components[j]
                if np.linalg.norm(ci - cj) - ri - rj <= tol:
                    seen.add(j)
                    frontier.append(j)
        return len(seen) == n


def _volume(r: float, ndim: int) -> float:
    return np.pi * r * r if ndim == 2 else 4.0 / 3.0 * np.pi * r**3


def analytic_mass(shape: ColloidShape) -> float:
    """Unit-density mass, treating components as disjoint."""
    return sum(_volume(r, shape.ndim) for _, r in shape.components)


def analytic_inertia(shape: ColloidShape):
    """Inertia about the shape's own mass center (components disjoint)."""
    d = shape.ndim
    masses = [_volume(r, d) for _, r in shape.components]
    m = sum(masses)
    cm = sum(mi * off for mi, (off, _) in zip(masses, shape.components)) / m
    if d == 2:
        j = 0.0
        for mi, (off, r) in zip(masses, shape.components):
            c = off - cm
            j += 0.5 * mi * r * r + mi * float(c @ c)
        return j
    j = np.zeros((3, 3))
    for mi, (off, r) in zip(masses, shape.components):
        c = off - cm
        j += 0.4 * mi * r * r * np.eye(3)
        j += mi * (float(c @ c) * np.eye(3) - np.outer(c, c))
    return j


@dataclass
class BodyState:
    """Pose and velocities of one colloid.

    h: center of mass; rot: d x d rotation matrix; ell: linear velocity;
    omega: angular velocity (scalar in 2D, 3-vector in 3D); m, inertia:
    unit-density mass and inertia about h.
    """

    shape: ColloidShape
    h: np.ndarray
    rot: np.ndarray
    ell: np.ndarray
    omega: float | np.ndarray
    m: float
    inertia: float | np.ndarray
    frozen: bool = False

    def __post_init__(self):
        d = self.shape.ndim
        self.h = np.asarray(self.h, dtype=float).reshape(d)
        self.rot = np.asarray(self.rot, dtype=float).reshape(d, d)
        self.ell = np.asarray(self.ell, dtype=float).reshape(d)
        if d == 3:
            self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        else:
            self.omega = float(np.asarray(self.omega).reshape(()))
        err = np.abs(self.rot.T @ self.rot - np.eye(d)).max()
        if err > 1e-8:
            raise ValueError(f"rotation not orthogonal: |O^T O - I| = {err:.2e}")
        if self.m <= 0:
            raise ValueError("body mass must be positive")
        if self.frozen:
            if np.any(self.ell != 0.0) or np.any(np.asarray(self.omega) != 0.0):
                raise ValueError("frozen body must have zero velocities")

    @property
    def ndim(self) -> int:
        return self.shape.ndim

    def world_components(self):
        """Component centers and radii in world coordinates."""
        return [(self.h + self.rot @ off, r) for off, r in self.shape.components]

    def copy(self) -> "BodyState":
        return replace(
            self,
            h=self.h.copy(),
            rot=self.rot.copy(),
            ell=self.ell.copy(),
            omega=self.omega if np.isscalar(self.omega) else np.copy(self.omega),
        )


def make_body(shape: ColloidShape, h, ell=None, omega=None, frozen=False) -> BodyState:
    d = shape.ndim
    ell = np.zeros(d) if ell is None else np.asarray(ell, dtype=float)
    if omega is None:
        omega = 0.0 if d == 2 else np.zeros(3)
    return BodyState(
        shape=shape,
        h=np.asarray(h, dtype=float),
        rot=np.eye(d),
        ell=ell,
        omega=omega,
        m=analytic_mass(shape),
        inertia=analytic_inertia(shape),
        frozen=frozen,
    )


# ---------------------------------------------------------------------------
# rasterization and quadrature
# ---------------------------------------------------------------------------

@dataclass
class IndicatorField:
    """Sharp indicator of the solid region plus a per-cell body index."""

    phi: ScalarField
    body_index: np.ndarray  # int, -1 in the fluid

    def mask(self, i: int) -> np.ndarray:
        return (self.body_index == i).astype(float)


def rasterize(bodies: list[BodyState], grid: Grid) -> IndicatorField:
    """phi(cell) = 1 iff the cell center lies in some body.

    Cells claimed by more than one body go to the lower body index.
    Raises BodyOutsideDomain if a component ball extends past a wall
    (tangency is allowed).
    """
    x = grid.cell_centers()
    phi = np.zeros(grid.shape)
    idx = np.full(grid.shape, -1, dtype=int)
    tol = 1e-12 * max(grid.lengths)
    for i, body in enumerate(bodies):
        for c, r in body.world_components():
            for k in range(grid.ndim):
                if c[k] - r < -tol or c[k] + r > grid.lengths[k] + tol:
                    raise BodyOutsideDomain(
                        f"body {i} extends outside the box along axis {k}"
                    )
            rsq = np.zeros(grid.shape)
            for k in range(grid.ndim):
                rsq += (x[k] - c[k]) ** 2
            inside = rsq <= r * r
            claim = inside & (idx < 0)
            phi[claim] = 1.0
            idx[claim] = i
    return IndicatorField(ScalarField(grid, phi, bc="none"), idx)


def mass_and_center(mask: np.ndarray, grid: Grid) -> tuple[float, np.ndarray]:
    """Midpoint-rule mass and centroid of a 0/1 (or [0,1]) mask."""
    vol = grid.cell_volume
    m = float(mask.sum()) * vol
    if m <= 0.0:
        raise DegenerateBody("empty body mask")
    x = grid.cell_centers()
    h = np.array([float((x[k] * mask).sum()) * vol / m for k in range(grid.ndim)])
    return m, h


def inertia(mask: np.ndarray, h: np.ndarray, grid: Grid):
    """Inertia of the mask about h: scalar in 2D, 3x3 tensor in 3D."""
    vol = grid.cell_volume
    if float(mask.sum()) <= 0.0:
        raise DegenerateBody("empty body mask")
    x = grid.cell_centers()
    r = [x[k] - h[k] for k in range(grid.ndim)]
    if grid.ndim == 2:
        return float(((r[0] ** 2 + r[1] ** 2) * mask).sum()) * vol
    j = np.zeros((3, 3))
    rsq = r[0] ** 2 + r[1] ** 2 + r[2] ** 2
    for a in range(3):
        for b in range(3):
            integrand = (rsq if a == b else 0.0) - r[a] * r[b]
            j[a, b] = float((integrand * mask).sum()) * vol
    return j


def cross_omega(omega, r: np.ndarray) -> np.ndarray:
    """omega x r, broadcasting over trailing axes; planar omega is scalar."""
    if np.isscalar(omega) or np.ndim(omega) == 0:
        return np.stack([-float(omega) * r[1], float(omega) * r[0]])
    w = np.asarray(omega, dtype=float)
    return np.stack(
        [
            w[1] * r[2] - w[2] * r[1],
            w[2] * r[0] - w[0] * r[2],
            w[0] * r[1] - w[1] * r[0],
        ]
    )


def rigid_velocity(body: BodyState, x: np.ndarray) -> np.ndarray:
    """ell + omega x (x - h) at points x of shape (d, ...)."""
    r = x - body.h.reshape((body.ndim,) + (1,) * (x.ndim - 1))
    out = cross_omega(body.omega, r)
    return out + body.ell.reshape((body.ndim,) + (1,) * (x.ndim - 1))


def rigid_velocity_field(body: BodyState, grid: Grid) -> np.ndarray:
    return rigid_velocity(body, grid.cell_centers())


def project_rigid(u: VectorField, mask: np.ndarray, grid: Grid):
    """L2(S)-orthogonal projection of u onto rigid fields over the mask.

    Returns (ell, omega).  Using the mask's own centroid decouples the
    translational and rotational parts, so projecting a rigid field
    recovers its (ell, omega) exactly and the projection is idempotent.
    """
    vol = grid.cell_volume
    m, h = mass_and_center(mask, grid)
    ell = np.array(
        [float((u.data[k] * mask).sum()) * vol / m for k in range(grid.ndim)]
    )
    x = grid.cell_centers()
    r = x - h.reshape((grid.ndim,) + (1,) * grid.ndim)
    jmat = inertia(mask, h, grid)
    if grid.ndim == 2:
        lz = float(((r[0] * u.data[1] - r[1] * u.data[0]) * mask).sum()) * vol
        if jmat <= 0.0:
            raise DegenerateBody("singular inertia")
        return ell, lz / jmat
    ang = np.array(
        [
            float(((r[1] * u.data[2] - r[2] * u.data[1]) * mask).sum()) * vol,
            float(((r[2] * u.data[0] - r[0] * u.data[2]) * mask).sum()) * vol,
            float(((r[0] * u.data[1] - r[1] * u.data[0]) * mask).sum()) * vol,
        ]
    )
    try:
        omega = np.linalg.solve(jmat, ang)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBody("singular inertia tensor") from exc
    return ell, omega


# ---------------------------------------------------------------------------
# pose transport
# ---------------------------------------------------------------------------

def _rotation_increment(omega, dt: float, ndim: int) -> np.ndarray:
    if ndim == 2:
        ang = float(omega) * dt
        ca, sa = np.cos(ang), np.sin(ang)
        return np.array([[ca, -sa], [sa, ca]])
    w = np.asarray(omega, dtype=float)
    ang = np.linalg.norm(w) * dt
    if ang == 0.0:
        return np.eye(3)
    axis = w / np.linalg.norm(w)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(ang) * k + (1.0 - np.cos(ang)) * (k @ k)


def _reorthonormalize(o: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(o)
    r = u @ vt
    if np.linalg.det(r) < 0:  # keep det +1
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def advance_pose(body: BodyState, dt: float) -> BodyState:
    """Advance h by ell*dt and rotate the pose by the exact rotation
    through angle |omega| dt.  Pairwise distances of material points are
    preserved exactly (up to the re-orthonormalization at 1e-10 scale).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if body.frozen:
        raise ValueError("cannot advance a frozen body")
    rot = _rotation_increment(body.omega, dt, body.ndim) @ body.rot
    rot = _reorthonormalize(rot)
    return replace(body, h=body.h + body.ell * dt, rot=rot)


def boundary_distance(body: BodyState, grid: Grid) -> float:
    """Analytic distance from the shape to the box walls (0 if touching)."""
    dist = np.inf
    for c, r in body.world_components():
        for k in range(grid.ndim):
            dist = min(dist, c[k] - r, grid.lengths[k] - c[k] - r)
    return max(dist, 0.0)


def body_pair_distance(b1: BodyState, b2: BodyState) -> float:
    """Analytic gap between two ball-union shapes (0 if overlapping)."""
    dist = np.inf
    for c1, r1 in b1.world_components():
        for c2, r2 in b2.world_components():
            dist = min(dist, float(np.linalg.norm(c1 - c2)) - r1 - r2)
    return max(dist, 0.0)


def safe_time_estimate(alpha: float, delta: float, e0: float) -> float:
    """Horizon T = (alpha*delta/E0)^2 keeping the regularized velocity's
    displacement bound below the initial wall clearance alpha."""
    if alpha <= 0 or delta <= 0 or e0 <= 0:
        raise ValueError("alpha, delta, E0 must all be positive")
    return (alpha * delta / e0) ** 2


def collision_stick(body: BodyState, grid: Grid, tol: float) -> BodyState:
    """Freeze a body that has reached the wall (velocities zeroed).

    Idempotent on frozen bodies; raises if called while the body is
    still farther than tol from the boundary.
    """
    if body.frozen:
        return body
    d = boundary_distance(body, grid)
    if d > tol:
        raise ValueError(f"stick called at distance {d:.3e} > tol {tol:.3e}")
    zero_w = 0.0 if body.ndim == 2 else np.zeros(3)
    return replace(body, ell=np.zeros(body.ndim), omega=zero_w, frozen=True)


def _cross_scalar(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def merge_bodies(
    b1: BodyState, b2: BodyState, tol: float, grid: Grid | None = None
) -> BodyState:
    """Fuse two touching colloids into one.

    Mass adds exactly; the new center is the mass-weighted mean; linear
    momentum and angular momentum about the new center are conserved by
    construction.  The merged inertia comes from the union rasterized on
    `grid` when one is supplied, else from the disjoint-ball formula.
    """
    if b1.frozen or b2.frozen:
        raise ValueError("cannot merge a frozen body; freeze the pair instead")
    gap = body_pair_distance(b1, b2)
    if gap > tol:
        raise ValueError(f"bodies are {gap:.3e} apart > tol {tol:.3e}")
    d = b1.ndim
    m = b1.m + b2.m
    h = (b1.m * b1.h + b2.m * b2.h) / m
    comps = []
    for b in (b1, b2):
        comps.extend((c - h, r) for c, r in b.world_components())
    shape = ColloidShape(tuple(comps))
    if not shape.is_connected(tol):
        raise ValueError("merged shape is not connected within tol")
    ell = (b1.m * b1.ell + b2.m * b2.ell) / m

    if d == 2:
        ang = sum(
            b.inertia * b.omega + b.m * _cross_scalar(b.h - h, b.ell) for b in (b1, b2)
        )
    else:
        ang = sum(
            b.inertia @ b.omega + b.m * np.cross(b.h - h, b.ell) for b in (b1, b2)
        )

    body = BodyState(
        shape=shape, h=h, rot=np.eye(d), ell=ell,
        omega=0.0 if d == 2 else np.zeros(3),
        m=m, inertia=analytic_inertia(shape),
    )
    if grid is not None:
        ind = rasterize([body], grid)
        mask = ind.mask(0)
        _, hr = mass_and_center(mask, grid)
        body.inertia = inertia(mask, hr, grid)
    if d == 2:
        body.omega = ang / body.inertia
    else:
        body.omega = np.linalg.solve(body.inertia, ang)
    return body


def pd_feedback(h: np.ndarray, ell: np.ndarray, h1: np.ndarray,
                kp: float, kd: float) -> np.ndarray:
    """Spring-damper force w = kp (h1 - h) - kd ell toward the anchor h1."""
    if kp <= 0:
        raise ValueError("kp must be positive")
    if kd < 0:
        raise ValueError("kd must be non-negative")
    return kp * (np.asarray(h1, dtype=float) - h) - kd * ell


# ---------------------------------------------------------------------------
# trajectory output
# ---------------------------------------------------------------------------

def rotation_to_quaternion(o: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a 3x3 rotation matrix."""
    t = np.trace(o)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (o[2, 1] - o[1, 2]) / s
        y = (o[0, 2] - o[2, 0]) / s
        z = (o[1, 0] - o[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(o)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(1.0 + o[i, i] - o[j, j] - o[k, k]) * 2.0
        q = np.empty(3)
        q[i] = 0.25 * s
        q[j] = (o[j, i] + o[i, j]) / s
        q[k] = (o[k, i] + o[i, k]) / s
        w = (o[k, j] - o[j, k]) / s
        x, y, z = q
    return np.array([w, x, y, z])


def body_csv_header(ndim: int) -> list[str]:
    if ndim == 2:
        return ["t", "hx", "hy", "angle", "lx", "ly", "omega", "frozen"]
    return [
        "t", "hx", "hy", "hz", "qw", "qx", "qy", "qz",
        "lx", "ly", "lz", "wx", "wy", "wz", "frozen",
    ]


def body_csv_row(t: float, body: BodyState) -> list[float]:
    if body.ndim == 2:
        angle = float(np.arctan2(body.rot[1, 0], body.rot[0, 0]))
        return [t, *body.h, angle, *body.ell, float(body.omega), float(body.frozen)]
    quat = rotation_to_quaternion(body.rot)
    return [t, *body.h, *quat, *body.ell, *np.asarray(body.omega), float(body.frozen)]
