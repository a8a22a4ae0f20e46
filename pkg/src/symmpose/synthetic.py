"""Synthetic objects with known symmetry groups and their scenes.

An object's "appearance" is a frozen random tanh layer applied to a
symmetry-invariant description of its allocentric pose: the canonical
representative of the rotation's coset, plus the crop-plane offsets and the
normalised scale-invariant depth. Two poses that differ by a group element
therefore produce the same observation, which is exactly the ambiguity a
symmetric object presents to a camera.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry as geo
from .errors import GenerationError, InvalidInputError
from .nn import MlpParams, forward
from .so3 import random_rotation

GROUP_KINDS = ("trivial", "cyclic", "continuous")
LEX_TOL = 1e-9
# feature inputs are snapped to this lattice so that every member of a coset,
# whose products differ only by rounding, yields bit-identical observations
FEATURE_QUANTUM = 2.0 ** -30
# feature-map input: 9 rotation entries + dx + dy + dz
FEATURE_INPUTS = 12


@dataclass(frozen=True)
class SymmetryGroup:
    elements: np.ndarray  # (n, 3, 3), identity first
    kind: str
    axis: tuple = (0.0, 0.0, 1.0)

    @property
    def order(self) -> int:
        return len(self.elements)


def _snap(m, tol=1e-14):
    r = np.round(m)
    return np.where(np.abs(m - r) < tol, r, m)


def check_group(elements, tol=1e-9) -> None:
    """Raise unless ``elements`` contains I and is closed under products and inverses."""
    g = np.asarray(elements)
    flat = g.reshape(len(g), 9)
    if not np.any(np.all(np.abs(flat - np.eye(3).ravel()) <= tol, axis=1)):
        raise InvalidInputError("group does not contain the identity")
    for name, cands in (("product", np.einsum("aij,bjk->abik", g, g).reshape(-1, 9)),
                        ("inverse", np.transpose(g, (0, 2, 1)).reshape(-1, 9))):
        d = np.abs(cands[:, None, :] - flat[None, :, :]).max(axis=2).min(axis=1)
        if d.max() > tol:
            raise InvalidInputError(f"group is not closed under {name} (off by {d.max():.2e})")


def make_group(kind="cyclic", n=1, axis=(0.0, 0.0, 1.0)) -> SymmetryGroup:
    """Cyclic group of ``n`` rotations about ``axis``.

    ``"continuous"`` is the same construction tagged as a discretised
    rotational symmetry; ``"trivial"`` forces ``n = 1``.
    """
    if kind not in GROUP_KINDS:
        raise InvalidInputError(f"unknown group kind {kind!r}")
    axis = np.asarray(axis, dtype=float)
    if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise InvalidInputError("symmetry axis must be a unit 3-vector")
    if kind == "trivial":
        n = 1
    if n < 1:
        raise InvalidInputError(f"group order must be >= 1, got {n}")
    elems = np.stack([_snap(geo.axis_angle(axis, 2.0 * np.pi * j / n)) for j in range(n)])
    check_group(elems)
    return SymmetryGroup(elems, kind, tuple(float(a) for a in axis))


def canonical_representative(r, group: SymmetryGroup) -> np.ndarray:
    """Lexicographically largest member of the coset ``{r g}``.

    Entries closer than ``LEX_TOL`` compare equal; remaining ties go to the
    lower group index.
    """
    cands = np.asarray(r) @ group.elements
    flat = cands.reshape(len(cands), 9)
    alive = np.arange(len(flat))
    for col in range(9):
        vals = flat[alive, col]
        alive = alive[vals >= vals.max() - LEX_TOL]
        if len(alive) == 1:
            break
    return cands[alive[0]]


@dataclass(frozen=True)
class ObjectSpec:
    object_id: str = "obj"
    symmetry: str = "trivial"
    order: int = 1
    axis: tuple = (0.0, 0.0, 1.0)
    obs_dim: int = 64
    radius: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class SceneConfig:
    width: int = 640
    height: int = 480
    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 240.0
    z_min: float = 0.4
    z_max: float = 1.2
    s_zoom: int = geo.DEFAULT_S_ZOOM
    f_p: float = geo.DEFAULT_PAD
    center_noise: float = 0.05  # fraction of the box size
    scale_noise: float = 0.05
    sigma_obs: float = 0.01
    max_retries: int = 100

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise InvalidInputError("depth range must satisfy 0 < z_min < z_max")

    @property
    def intrinsics(self) -> geo.CameraIntrinsics:
        return geo.CameraIntrinsics(self.fx, self.fy, self.cx, self.cy)

    def appearance_dz_range(self, radius: float) -> tuple:
        """Range of dz the detector noise can produce; fixes the feature scaling."""
        nominal = self.f_p * 2.0 * max(self.fx, self.fy) * radius / self.s_zoom
        return nominal * (1.0 - self.scale_noise), nominal * (1.0 + self.scale_noise)


@dataclass(frozen=True)
class SyntheticObject:
    spec: ObjectSpec
    symmetry: SymmetryGroup
    feature_map: MlpParams = field(repr=False)

    @property
    def object_id(self) -> str:
        return self.spec.object_id

    @property
    def radius(self) -> float:
        return self.spec.radius

    def features(self, r_allo, dx, dy, dz, config: SceneConfig) -> np.ndarray:
        """Noise-free observation of a scene."""
        canon = np.round(canonical_representative(r_allo, self.symmetry) / FEATURE_QUANTUM) * FEATURE_QUANTUM
        lo, hi = config.appearance_dz_range(self.radius)
        # offsets (0 at the box centre) and depth enter standardised to about [-1, 1]
        x = np.concatenate([canon.ravel(), [
            dx / config.center_noise,
            dy / config.center_noise,
            2.0 * (dz - lo) / (hi - lo) - 1.0,
        ]])
        return forward(self.feature_map, x)[0]


def make_object(spec: ObjectSpec) -> SyntheticObject:
    group = make_group(spec.symmetry, spec.order, spec.axis)
    rng = np.random.default_rng([spec.seed, 0x0B1EC7])
    w = rng.normal(0.0, 1.0 / np.sqrt(3.0), size=(FEATURE_INPUTS, spec.obs_dim))
    b = rng.normal(0.0, 0.5, size=spec.obs_dim)
    fmap = MlpParams((FEATURE_INPUTS, spec.obs_dim), ("tanh",), [w], [b])
    return SyntheticObject(spec, group, fmap)


@dataclass(frozen=True)
class SceneSample:
    true_pose: geo.Pose
    k_x: geo.CameraIntrinsics
    detection: geo.BBoxDetection
    crop: geo.CropGeometry
    targets: geo.SiteTargets
    r_allo: np.ndarray
    observation: np.ndarray


def build_sample(obj: SyntheticObject, config: SceneConfig, rotation, translation, detection,
                 noise=None) -> SceneSample:
    """Assemble a scene from a pose and a detection; ``noise`` is added to the features."""
    pose = geo.Pose(np.asarray(rotation, dtype=float), np.asarray(translation, dtype=float))
    k_x = config.intrinsics
    crop = geo.crop_geometry(detection, k_x, config.s_zoom, config.f_p)
    st = geo.site_targets(pose, crop)
    r_c = geo.ray_rotation(geo.crop_point(st, crop), crop.k_b)
    r_allo = geo.ego_to_allo(pose.rotation, r_c)
    obs = obj.features(r_allo, st.dx, st.dy, st.dz, config)
    if noise is not None:
        obs = obs + noise
    return SceneSample(pose, k_x, detection, crop, st, r_allo, obs)


def sample_scene(obj: SyntheticObject, config: SceneConfig, rng: np.random.Generator) -> SceneSample:
    """Random pose in view, a noisy bounding-circle detection, and its observation."""
    k = config.intrinsics
    for _ in range(config.max_retries):
        rot = random_rotation(rng)
        tz = rng.uniform(config.z_min, config.z_max)
        rad_u, rad_v = k.fx * obj.radius / tz, k.fy * obj.radius / tz
        if 2 * rad_u >= config.width or 2 * rad_v >= config.height:
            continue
        u = rng.uniform(rad_u, config.width - 1 - rad_u)
        v = rng.uniform(rad_v, config.height - 1 - rad_v)
        t = tz * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])
        scale = 1.0 + rng.uniform(-config.scale_noise, config.scale_noise)
        bw, bh = 2.0 * rad_u * scale, 2.0 * rad_v * scale
        bx = u + rng.uniform(-config.center_noise, config.center_noise) * bw
        by = v + rng.uniform(-config.center_noise, config.center_noise) * bh
        if not (0 <= bx < config.width and 0 <= by < config.height):
            continue
        noise = rng.normal(0.0, config.sigma_obs, size=obj.spec.obs_dim) if config.sigma_obs > 0 else None
        return build_sample(obj, config, rot, t, geo.BBoxDetection(bx, by, bw, bh), noise)
    raise GenerationError(f"no in-image scene after {config.max_retries} attempts")


@dataclass
class Dataset:
    obj: SyntheticObject
    config: SceneConfig
    samples: list
    d_l: float
    d_u: float
    seed: int

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def observations(self) -> np.ndarray:
        return np.stack([s.observation for s in self.samples])

    @property
    def r_allo(self) -> np.ndarray:
        return np.stack([s.r_allo for s in self.samples])

    @property
    def offsets(self) -> np.ndarray:
        return np.array([[s.targets.dx, s.targets.dy] for s in self.samples])

    @property
    def dz(self) -> np.ndarray:
        return np.array([s.targets.dz for s in self.samples])

    def meta(self) -> dict:
        return {"object": asdict(self.obj.spec), "config": asdict(self.config),
                "n": len(self), "d_l": self.d_l, "d_u": self.d_u, "seed": self.seed}


def dz_bounds(dz_values, margin=0.05) -> tuple:
    """Observed ``(min, max)`` widened by ``margin`` of the span on each side."""
    lo, hi = float(np.min(dz_values)), float(np.max(dz_values))
    pad = margin * (hi - lo) if hi > lo else margin * hi
    return lo - pad, hi + pad


def generate_dataset(obj: SyntheticObject, n: int, config: SceneConfig, seed: int = 0) -> Dataset:
    """``n`` scenes; scene ``i`` draws from its own stream seeded by ``(seed, i)``."""
    if n < 1:
        raise InvalidInputError(f"dataset needs at least one sample, got {n}")
    samples = [sample_scene(obj, config, np.random.default_rng([seed, i])) for i in range(n)]
    d_l, d_u = dz_bounds([s.targets.dz for s in samples])
    return Dataset(obj, config, samples, d_l, d_u, seed)
