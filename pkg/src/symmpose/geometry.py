"""Camera, crop and pose mathematics.

Everything here is a pure function of its arguments. Rotations are plain
``(3, 3)`` float64 arrays; the small dataclasses below carry the camera and
crop quantities that travel together.

Pixel convention: homogeneous ``(u, v, 1)`` with ``u`` along the image width
and the origin at the centre of the top-left pixel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, InvalidInputError

OPTICAL_AXIS = np.array([0.0, 0.0, 1.0])
ANTIPARALLEL_EPS = 1e-8
DEFAULT_S_ZOOM = 256
DEFAULT_PAD = 1.5


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class BBoxDetection:
    bx: float
    by: float
    bw: float
    bh: float

    def __post_init__(self):
        if not (self.bw > 0 and self.bh > 0):
            raise InvalidInputError(f"box dimensions must be positive, got bw={self.bw}, bh={self.bh}")


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.translation[2] > 0:
            raise InvalidInputError("object must lie in front of the camera (t_z > 0)")


@dataclass(frozen=True)
class CropGeometry:
    """Object-centric crop: padded box side, zoom factor and virtual camera."""

    s_zoom: int
    f_p: float
    s_b: float
    r: float
    t_bx: np.ndarray
    k_b: np.ndarray


@dataclass(frozen=True)
class SiteTargets:
    """Scale-invariant translation parameters.

    ``dx, dy`` are the crop-plane position of the projected origin divided by
    the crop side. The crop transform sends the box centre to the origin, so
    0 is the crop centre. ``dz = t_z / r``.
    """

    dx: float
    dy: float
    dz: float


def is_rotation(m, atol=1e-9) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(np.allclose(m.T @ m, np.eye(3), atol=atol) and abs(np.linalg.det(m) - 1.0) <= atol)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis``."""
    k = skew(np.asarray(axis, dtype=float))
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def crop_geometry(bbox: BBoxDetection, k_x: CameraIntrinsics, s_zoom: int = DEFAULT_S_ZOOM,
                  f_p: float = DEFAULT_PAD) -> CropGeometry:
    if not s_zoom > 0:
        raise InvalidInputError(f"s_zoom must be positive, got {s_zoom}")
    if not f_p >= 1.0:
        raise InvalidInputError(f"padding factor must be >= 1, got {f_p}")
    s_b = f_p * max(bbox.bw, bbox.bh)
    r = s_zoom / s_b
    t_bx = np.array([[r, 0.0, -r * bbox.bx], [0.0, r, -r * bbox.by], [0.0, 0.0, 1.0]])
    return CropGeometry(s_zoom=s_zoom, f_p=f_p, s_b=s_b, r=r, t_bx=t_bx, k_b=t_bx @ k_x.matrix)


def _check_intrinsics(k_b: np.ndarray) -> None:
    det = np.linalg.det(k_b)
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise DegenerateError(f"calibrated intrinsics are singular (det={det:g})")


def back_project(k_b: np.ndarray, pixels) -> np.ndarray:
    """``K_B^-1 (u, v, 1)`` for homogeneous pixel rows of shape ``(..., 3)``."""
    _check_intrinsics(k_b)
    pixels = np.asarray(pixels, dtype=float)
    return np.linalg.solve(k_b, pixels.reshape(-1, 3).T).T.reshape(pixels.shape)


def pe_map(cg: CropGeometry) -> np.ndarray:
    """Back-projected pixel rays of the crop, indexed ``grid[v, u]``."""
    s = int(cg.s_zoom)
    v, u = np.mgrid[0:s, 0:s].astype(float)
    g = np.stack([u, v, np.ones_like(u)], axis=-1)
    return back_project(cg.k_b, g)


def site_targets(pose: Pose, cg: CropGeometry) -> SiteTargets:
    t = np.asarray(pose.translation, dtype=float)
    if not t[2] > 0:
        raise InvalidInputError("object is behind the camera (t_z <= 0)")
    p = cg.k_b @ t / t[2]
    return SiteTargets(dx=p[0] / cg.s_zoom, dy=p[1] / cg.s_zoom, dz=t[2] / cg.r)


def crop_point(st: SiteTargets, cg: CropGeometry) -> np.ndarray:
    """Homogeneous crop pixel of the projected object origin."""
    return np.array([cg.s_zoom * st.dx, cg.s_zoom * st.dy, 1.0])


def recover_translation(st: SiteTargets, cg: CropGeometry) -> np.ndarray:
    if not st.dz > 0:
        raise InvalidInputError(f"dz must be positive, got {st.dz}")
    ray = back_project(cg.k_b, crop_point(st, cg))
    return cg.r * st.dz * ray


def axis_to_ray_rotations(rays) -> np.ndarray:
    """Rotations taking the optical axis onto each unit ray in ``rays`` (..., 3).

    Uses ``I + [c x o] + [c x o]^2 / (1 + c . o)`` with ``c = (0, 0, 1)``. Rays
    anti-parallel to the axis raise :class:`DegenerateError`.
    """
    o = np.asarray(rays, dtype=float)
    o = o / np.linalg.norm(o, axis=-1, keepdims=True)
    denom = 1.0 + o[..., 2]
    if np.any(denom < ANTIPARALLEL_EPS):
        raise DegenerateError("viewing ray is anti-parallel to the optical axis")
    # c x o for c = e_z
    rx, ry = -o[..., 1], o[..., 0]
    zero = np.zeros_like(rx)
    k = np.stack([
        np.stack([zero, zero, ry], axis=-1),
        np.stack([zero, zero, -rx], axis=-1),
        np.stack([-ry, rx, zero], axis=-1),
    ], axis=-2)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + k + (k @ k) / denom[..., None, None]


def ray_rotation(p_b, k_b) -> np.ndarray:
    """Rotation from the optical axis to the ray through crop pixel ``p_b``."""
    o = back_project(np.asarray(k_b, dtype=float), np.asarray(p_b, dtype=float))
    if not o[2] > 0:
        raise InvalidInputError("object ray must point in front of the camera")
    return axis_to_ray_rotations(o)


def allo_to_ego(r_allo, r_c) -> np.ndarray:
    return np.asarray(r_c) @ np.asarray(r_allo)


def ego_to_allo(r, r_c) -> np.ndarray:
    return np.asarray(r_c).T @ np.asarray(r)


def geodesic_distance(r1, r2) -> float:
    """Rotation angle of ``r1^T r2`` in radians."""
    c = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
