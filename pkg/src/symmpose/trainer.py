"""Joint training of the SO(3) encoder and the surrogate pose decoder, and
end-to-end pose inference."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import losses, matcher, nn, zbin
from .errors import InvalidInputError, NumericError, TrainingError
from .so3 import random_rotations
from .synthetic import Dataset

log = logging.getLogger(__name__)

DZ_MODES = ("regression", "classification-argmax", "classification-expectation")
EMB_DIM = 32
HIDDEN = 256
PE_SAMPLES = 3  # PE map sampled on a 3 x 3 lattice of crop pixels


@dataclass
class So3Encoder:
    """Shared two-layer trunk with a separate linear output layer per object."""

    trunk: nn.MlpParams
    heads: dict

    @classmethod
    def init(cls, object_ids, rng, hidden=HIDDEN, dim=EMB_DIM) -> "So3Encoder":
        trunk = nn.mlp_init((9, hidden, hidden), ("relu", "relu"), rng)
        heads = {oid: nn.mlp_init((hidden, dim), ("linear",), rng) for oid in object_ids}
        return cls(trunk, heads)

    @property
    def dim(self) -> int:
        return next(iter(self.heads.values())).widths[-1]

    def forward(self, rotations, object_id):
        x = np.asarray(rotations, dtype=float).reshape(-1, 9)
        h, c_trunk = nn.forward(self.trunk, x)
        out, c_head = nn.forward(self.heads[object_id], h)
        return out, (c_trunk, c_head)

    def backward(self, caches, grad_out, object_id):
        c_trunk, c_head = caches
        g_head, g_h = nn.backward(self.heads[object_id], c_head, grad_out)
        g_trunk, _ = nn.backward(self.trunk, c_trunk, g_h)
        return g_trunk + g_head

    def embed(self, object_id):
        """Raw-embedding function of a rotation stack (for library building)."""
        return lambda rots: self.forward(rots, object_id)[0]

    def arrays(self, object_id) -> list:
        return self.trunk.arrays() + self.heads[object_id].arrays()


@dataclass
class PoseDecoder:
    """Observation trunk with embedding, offset and depth heads."""

    trunk: nn.MlpParams
    emb_head: nn.MlpParams
    xy_head: nn.MlpParams
    z_head: nn.MlpParams

    @classmethod
    def init(cls, in_dim, z_out, rng, hidden=HIDDEN, dim=EMB_DIM) -> "PoseDecoder":
        return cls(
            nn.mlp_init((in_dim, hidden, hidden), ("relu", "relu"), rng),
            nn.mlp_init((hidden, dim), ("linear",), rng),
            nn.mlp_init((hidden, 2), ("linear",), rng),
            nn.mlp_init((hidden, z_out), ("linear",), rng),
        )

    def heads(self):
        return (self.emb_head, self.xy_head, self.z_head)

    def forward(self, x):
        h, c_trunk = nn.forward(self.trunk, x)
        outs, caches = [], [c_trunk]
        for head in self.heads():
            o, c = nn.forward(head, h)
            outs.append(o)
            caches.append(c)
        return outs, caches

    def backward(self, caches, grad_outs):
        grads, g_h = [], 0.0
        for head, c, g in zip(self.heads(), caches[1:], grad_outs):
            gp, gi = nn.backward(head, c, g)
            grads += gp
            g_h = g_h + gi
        g_trunk, _ = nn.backward(self.trunk, caches[0], g_h)
        return g_trunk + grads

    def arrays(self) -> list:
        out = self.trunk.arrays()
        for head in self.heads():
            out += head.arrays()
        return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    q_train: int = 5000
    lr_start: float = 5e-4
    lr_end: float = 1e-5
    weight_decay: float = 1e-4
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)
    k: int = zbin.DEFAULT_K
    seed: int = 0
    dz_mode: str = "classification-expectation"
    focal: bool = True
    use_pe: bool = False
    obs_noise: float = 0.0  # extra Gaussian noise added to observations each step

    def __post_init__(self):
        if self.q_train < 2:
            raise InvalidInputError("q_train must be >= 2")
        if self.dz_mode not in DZ_MODES:
            raise InvalidInputError(f"dz_mode must be one of {DZ_MODES}")
        if self.dz_mode != "regression" and self.k < 2:
            raise InvalidInputError("classification needs k >= 2")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidInputError("epochs must be >= 0 and batch_size >= 1")
        if self.obs_noise < 0:
            raise InvalidInputError("obs_noise must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidInputError(f"unknown train config fields {sorted(unknown)}")
        if "weights" in d:
            d["weights"] = losses.LossWeights(**d["weights"])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PoseModel:
    object_id: str
    encoder: So3Encoder
    decoder: PoseDecoder
    zbins: zbin.ZBinSpec
    dz_mode: str
    use_pe: bool = False
    pe_scale: float = 1.0

    def decoder_input(self, observations, crops=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(observations, dtype=float))
        if not self.use_pe:
            return x
        if crops is None:
            raise InvalidInputError("this model reads the PE map; pass the crops")
        pe = np.stack([pe_features(c) for c in crops]) / self.pe_scale
        return np.concatenate([x, pe], axis=1)


def pe_features(crop: geo.CropGeometry) -> np.ndarray:
    """x/y components of back-projected rays on a coarse lattice over the crop.

    The crop transform puts the box centre at pixel (0, 0), so the crop window
    spans ``[-s/2, s/2]`` on both axes.
    """
    s = crop.s_zoom
    ticks = np.linspace(-s / 2.0, s / 2.0, PE_SAMPLES)
    u, v = np.meshgrid(ticks, ticks)
    pix = np.stack([u.ravel(), v.ravel(), np.ones(u.size)], axis=1)
    return geo.back_project(crop.k_b, pix)[:, :2].ravel()


@dataclass
class History:
    rows: list = field(default_factory=list)  # dicts: epoch, L_R, L_xy, L_z, total, lr

    COLUMNS = ("epoch", "L_R", "L_xy", "L_z", "total", "lr")


def init_model(dataset: Dataset, config: TrainConfig) -> PoseModel:
    rng = np.random.default_rng([config.seed, 1])
    oid = dataset.obj.object_id
    bins = zbin.make_bins(dataset.d_l, dataset.d_u, config.k)
    z_out = 1 if config.dz_mode == "regression" else config.k
    in_dim = dataset.obj.spec.obs_dim + (2 * PE_SAMPLES ** 2 if config.use_pe else 0)
    pe_scale = 1.0
    if config.use_pe:
        pe = np.stack([pe_features(s.crop) for s in dataset.samples])
        pe_scale = float(pe.std()) or 1.0
    return PoseModel(oid, So3Encoder.init([oid], rng), PoseDecoder.init(in_dim, z_out, rng),
                     bins, config.dz_mode, config.use_pe, pe_scale)


def _step_losses(model: PoseModel, x, r_pos, offsets, dz, negatives, config: TrainConfig):
    """Forward and backward on one minibatch. Returns ``(parts, total, grads)``."""
    w = config.weights
    oid = model.object_id
    (emb, xy, z), dcache = model.decoder.forward(x)
    b = nn.l2_normalize(emb)
    rots = np.concatenate([r_pos.reshape(-1, 9), negatives.reshape(-1, 9)])
    raw, ecache = model.encoder.forward(rots, oid)
    e = nn.l2_normalize(raw)
    n = len(x)
    l_r, (d_b, d_pos, d_negs) = losses.info_nce(b, e[:n], e[n:], w.tau)
    l_xy, g_xy = losses.l1_offset(xy, offsets)
    if model.dz_mode == "regression":
        l_z, g_z = losses.l1_offset(z, model.zbins.normalize(dz)[:, None])
    else:
        probs = losses.softmax(z)
        alpha, gamma = (w.alpha, w.gamma) if config.focal else (1.0, 0.0)
        l_z, g_z = losses.focal_loss(probs, zbin.encode(dz, model.zbins), alpha, gamma)
    parts = {"rot": l_r, "xy": l_xy, "z": l_z}
    total = losses.total_loss(parts, w)
    g_emb = nn.l2_normalize_backward(emb, w.lambda_r * d_b)
    g_dec = model.decoder.backward(dcache, [g_emb, w.lambda_xy * g_xy, w.lambda_z * g_z])
    g_raw = nn.l2_normalize_backward(raw, w.lambda_r * np.concatenate([d_pos, d_negs]))
    g_enc = model.encoder.backward(ecache, g_raw, oid)
    return parts, total, g_enc + g_dec


def model_arrays(model: PoseModel) -> list:
    return model.encoder.arrays(model.object_id) + model.decoder.arrays()


def batch_loss(model: PoseModel, x, r_pos, offsets, dz, negatives, config: TrainConfig) -> float:
    return _step_losses(model, x, r_pos, offsets, dz, negatives, config)[1]


def train(dataset: Dataset, config: TrainConfig, model: PoseModel | None = None):
    """Minimise the weighted objective with AdamW and a cosine schedule.

    Every step draws ``q_train - 1`` fresh Haar-random negatives shared by the
    batch; each sample's own allocentric rotation is its positive. Returns
    ``(model, history)``; identical seeds give bit-identical results.
    """
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    model = init_model(dataset, config) if model is None else model
    rng = np.random.default_rng([config.seed, 2])
    x_all = model.decoder_input(dataset.observations, [s.crop for s in dataset.samples])
    r_all, off_all, dz_all = dataset.r_allo, dataset.offsets, dataset.dz
    n = len(dataset)
    steps_per_epoch = math.ceil(n / config.batch_size)
    params = model_arrays(model)
    state = nn.AdamWState.zeros_like(params, lr_start=config.lr_start, lr_end=config.lr_end,
                                     weight_decay=config.weight_decay,
                                     total_steps=max(1, config.epochs * steps_per_epoch))
    history = History()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = {"rot": 0.0, "xy": 0.0, "z": 0.0, "total": 0.0}
        lr = state.lr_start
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size:(s + 1) * config.batch_size]
            x = x_all[idx]
            if config.obs_noise > 0:
                x = x + rng.normal(0.0, config.obs_noise, size=x.shape)
            negatives = random_rotations(rng, config.q_train - 1)
            try:
                parts, total, grads = _step_losses(model, x, r_all[idx], off_all[idx], dz_all[idx],
                                                   negatives, config)
                lr = nn.adamw_step(params, grads, state)
            except NumericError as exc:
                raise TrainingError(f"training diverged at step {state.step}: {exc}") from exc
            for key in ("rot", "xy", "z"):
                sums[key] += parts[key]
            sums["total"] += total
        row = {"epoch": epoch + 1, "L_R": sums["rot"] / steps_per_epoch, "L_xy": sums["xy"] / steps_per_epoch,
               "L_z": sums["z"] / steps_per_epoch, "total": sums["total"] / steps_per_epoch, "lr": lr}
        history.rows.append(row)
        log.info("epoch %d  L_R %.4f  L_xy %.4f  L_z %.4f  total %.4f  lr %.2e", row["epoch"], row["L_R"],
                 row["L_xy"], row["L_z"], row["total"], lr)
    return model, history


@dataclass(frozen=True)
class Prediction:
    pose: geo.Pose
    r_allo: np.ndarray
    grid_index: int
    score: float
    targets: geo.SiteTargets


def decode(model: PoseModel, observations, crops=None):
    """Decoder outputs for a batch: unit queries, offsets and depths."""
    x = model.decoder_input(observations, crops)
    (emb, xy, z), _ = model.decoder.forward(x)
    queries = nn.l2_normalize(emb)
    if model.dz_mode == "regression":
        dz = model.zbins.denormalize(z[:, 0])
        # regression output is unconstrained; keep depth physical
        dz = np.maximum(dz, 1e-6)
    else:
        probs = losses.softmax(z)
        if model.dz_mode == "classification-argmax":
            dz = zbin.argmax_decode(probs, model.zbins)
        else:
            dz = zbin.expectation(probs, model.zbins)
    return queries, xy, np.atleast_1d(dz)


def assemble_pose(r_allo, dx, dy, dz, crop: geo.CropGeometry) -> tuple:
    st = geo.SiteTargets(float(dx), float(dy), float(dz))
    r_c = geo.ray_rotation(geo.crop_point(st, crop), crop.k_b)
    return geo.Pose(geo.allo_to_ego(r_allo, r_c), geo.recover_translation(st, crop)), st


def infer_poses(model: PoseModel, observations, crops, lib: matcher.EmbeddingLibrary) -> list:
    queries, xy, dz = decode(model, observations, crops if model.use_pe else None)
    idx = np.atleast_1d(matcher.argmax_index(queries, lib))
    out = []
    for i, crop in enumerate(crops):
        r_allo = lib.grid.rotations[idx[i]]
        pose, st = assemble_pose(r_allo, xy[i, 0], xy[i, 1], dz[i], crop)
        score = float(lib.rows[idx[i]] @ queries[i].astype(np.float32))
        out.append(Prediction(pose, r_allo, int(idx[i]), score, st))
    return out


def infer_pose(observation, model: PoseModel, lib: matcher.EmbeddingLibrary, crop: geo.CropGeometry,
               dz_mode: str | None = None) -> Prediction:
    """Pose of one observation: best library rotation, crop ray, recovered depth."""
    if dz_mode is not None and dz_mode != model.dz_mode:
        if "regression" in (dz_mode, model.dz_mode):
            raise InvalidInputError("cannot switch between regression and classification heads")
        model = replace(model, dz_mode=dz_mode)
    return infer_poses(model, np.atleast_2d(observation), [crop], lib)[0]


def build_model_library(model: PoseModel, grid) -> matcher.EmbeddingLibrary:
    return matcher.build_library(model.encoder.embed(model.object_id), grid, model.object_id)
