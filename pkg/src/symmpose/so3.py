"""Rotation sampling: Haar-random draws and the equivolumetric inference grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import DegenerateError, InvalidInputError
from .geometry import axis_to_ray_rotations

# Base rotation used for a viewpoint anti-parallel to the optical axis.
FLIP_X = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True)
class SO3Grid:
    rotations: np.ndarray  # (Q, 3, 3)
    n_views: int
    n_inplane: int

    def __post_init__(self):
        if len(self.rotations) != self.n_views * self.n_inplane:
            raise InvalidInputError("grid cardinality must equal n_views * n_inplane")

    def __len__(self) -> int:
        return len(self.rotations)

    def quaternions(self) -> np.ndarray:
        return matrices_to_quaternions(self.rotations)


def quaternions_to_matrices(q) -> np.ndarray:
    """Unit quaternions ``(w, x, y, z)`` of shape (..., 4) to rotation matrices."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w),
        2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
        2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(q.shape[:-1] + (3, 3))


def matrices_to_quaternions(m) -> np.ndarray:
    """Rotation matrices (..., 3, 3) to scalar-first unit quaternions."""
    m = np.asarray(m, dtype=float)
    xyzw = _ScipyRotation.from_matrix(m.reshape(-1, 3, 3)).as_quat()
    return np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1).reshape(m.shape[:-2] + (4,))


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    """Shoemake's uniform unit quaternions, shape (n, 4)."""
    u1, u2, u3 = rng.random((3, n))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    t1, t2 = 2.0 * np.pi * u2, 2.0 * np.pi * u3
    return np.stack([b * np.cos(t2), a * np.sin(t1), a * np.cos(t1), b * np.sin(t2)], axis=1)


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    return quaternions_to_matrices(random_quaternions(rng, n))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return random_rotations(rng, 1)[0]


def fibonacci_viewpoints(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on a Fibonacci spiral, pole to pole.

    The first point is always ``(0, 0, 1)``; for ``n >= 2`` the last is
    ``(0, 0, -1)``.
    """
    if n < 1:
        raise InvalidInputError(f"need at least one viewpoint, got {n}")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n)
    z = 1.0 - 2.0 * i / (n - 1)
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def viewpoint_rotations(viewpoints) -> np.ndarray:
    """Base rotations taking the optical axis onto each viewpoint."""
    v = np.asarray(viewpoints, dtype=float)
    out = np.empty((len(v), 3, 3))
    south = v[:, 2] <= -1.0 + 1e-12
    if np.any(~south):
        try:
            out[~south] = axis_to_ray_rotations(v[~south])
        except DegenerateError:
            raise DegenerateError("viewpoint too close to the south pole for the ray formula") from None
    out[south] = FLIP_X
    return out


def grid_from_viewpoints(viewpoints, n_inplane: int) -> SO3Grid:
    if n_inplane < 1:
        raise InvalidInputError(f"n_inplane must be >= 1, got {n_inplane}")
    base = viewpoint_rotations(viewpoints)
    ang = 2.0 * np.pi * np.arange(n_inplane) / n_inplane
    c, s = np.cos(ang), np.sin(ang)
    inplane = np.zeros((n_inplane, 3, 3))
    inplane[:, 0, 0], inplane[:, 0, 1] = c, -s
    inplane[:, 1, 0], inplane[:, 1, 1] = s, c
    inplane[:, 2, 2] = 1.0
    rots = np.einsum("vij,njk->vnik", base, inplane).reshape(-1, 3, 3)
    return SO3Grid(rotations=rots, n_views=len(base), n_inplane=n_inplane)


def build_grid(n_views: int, n_inplane: int) -> SO3Grid:
    """Viewpoint x in-plane rotation grid (4000 x 120 gives the 480k library)."""
    if n_views < 1:
        raise InvalidInputError(f"n_views must be >= 1, got {n_views}")
    return grid_from_viewpoints(fibonacci_viewpoints(n_views), n_inplane)


def quaternion_angles(q1, q2) -> np.ndarray:
    """Geodesic angle between rotations given as unit quaternions (broadcasts)."""
    d = np.abs(np.sum(np.asarray(q1) * np.asarray(q2), axis=-1))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


class GridIndex:
    """Nearest-grid-rotation lookup in quaternion space (q and -q both indexed)."""

    def __init__(self, grid: SO3Grid):
        q = grid.quaternions()
        self._n = len(q)
        self._tree = cKDTree(np.concatenate([q, -q]))

    def nearest(self, rotations):
        """Return ``(angles, indices)`` of the nearest grid entry per rotation."""
        q = matrices_to_quaternions(np.asarray(rotations).reshape(-1, 3, 3))
        chord, idx = self._tree.query(q)
        # chord between unit quaternions -> rotation angle
        ang = 4.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
        return ang, idx % self._n


def covering_radius(grid: SO3Grid, n_probes: int, rng: np.random.Generator,
                    probes=None) -> float:
    """Max over probe rotations of the distance to the nearest grid entry."""
    if len(grid) == 0:
        raise InvalidInputError("grid is empty")
    if probes is None:
        probes = random_rotations(rng, n_probes)
    ang, _ = GridIndex(grid).nearest(probes)
    return float(ang.max())


# Grid sizes of the sampling-count trade-off study as (n_views, n_inplane),
# split so viewpoint and in-plane spacing stay comparable.
GRID_LADDER = {20_000: (500, 40), 60_000: (1000, 60), 180_000: (2000, 90),
               480_000: (4000, 120), 1_440_000: (8000, 180)}
