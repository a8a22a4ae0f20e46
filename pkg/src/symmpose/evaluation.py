"""Symmetry-aware pose metrics and diagnostics of the matching distribution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import matcher
from .errors import InvalidInputError, SymmposeError
from .so3 import GridIndex, SO3Grid, matrices_to_quaternions
from .synthetic import Dataset, SymmetryGroup
from .trainer import PoseModel, infer_poses

REPORT_SCHEMA = 1
ROT_THRESHOLDS_DEG = (2.0, 5.0, 10.0)
TRANS_THRESHOLDS = (0.02, 0.05, 0.10)  # fraction of t_z
COSET_RADIUS_DEG = 5.0
MEAN_HAAR_DISTANCE_DEG = np.degrees(np.pi / 2 + 2 / np.pi)  # about 126.47


def sym_geodesic_error(r_pred, r_gt, group: SymmetryGroup) -> float:
    """Smallest rotation angle between ``r_pred`` and any ``r_gt g``."""
    r_gt = np.asarray(r_gt, dtype=float)
    return min(geo.geodesic_distance(r_pred, r_gt @ g) for g in group.elements)


def min_coset_separation(group: SymmetryGroup) -> float:
    """Smallest angle between distinct coset members ``r g_i`` and ``r g_j``.

    ``d(r g_i, r g_j)`` is the angle of ``g_i^T g_j`` and does not depend on
    ``r``; returns ``inf`` for the trivial group.
    """
    g = group.elements
    if len(g) < 2:
        return float("inf")
    rel = np.einsum("aji,bjk->abik", g, g)
    c = (np.trace(rel, axis1=2, axis2=3) - 1.0) / 2.0
    ang = np.arccos(np.clip(c, -1.0, 1.0))
    return float(ang[~np.eye(len(g), dtype=bool)].min())


def coset_mass(probs, grid: SO3Grid | np.ndarray, r_gt, group: SymmetryGroup, radius: float) -> np.ndarray:
    """Probability within ``radius`` (radians) of each ``r_gt g``, one entry per element.

    ``grid`` may be an :class:`SO3Grid` or its precomputed ``(Q, 4)``
    quaternions. Balls must not overlap.
    """
    if not radius > 0:
        raise InvalidInputError("radius must be positive")
    sep = min_coset_separation(group)
    if not radius < sep / 2.0:
        raise InvalidInputError(f"coset balls of radius {np.degrees(radius):.2f} deg overlap "
                                f"(half separation {np.degrees(sep) / 2:.2f} deg)")
    quats = matrices_to_quaternions(grid.rotations) if isinstance(grid, SO3Grid) else np.asarray(grid)
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(quats),):
        raise InvalidInputError("distribution must have one entry per grid rotation")
    centres = matrices_to_quaternions(np.asarray(r_gt) @ group.elements)
    cos_half = np.cos(radius / 2.0)
    return np.array([probs[np.abs(quats @ c) >= cos_half].sum() for c in centres])


def coset_entropy(masses) -> float:
    """Shannon entropy (nats) of the coset masses renormalised to sum 1."""
    m = np.asarray(masses, dtype=float)
    total = m.sum()
    if total <= 0:
        return 0.0
    p = m[m > 0] / total
    return float(-(p * np.log(p)).sum())


def recall(errors, threshold) -> float:
    e = np.asarray(errors, dtype=float)
    return float(np.mean(e <= threshold)) if e.size else 0.0


@dataclass
class EvalReport:
    records: list  # per-scene dicts
    aggregates: dict
    diagnostics: dict = field(default_factory=dict)
    schema: int = REPORT_SCHEMA

    def to_dict(self) -> dict:
        return {"schema": self.schema, "aggregates": self.aggregates, "diagnostics": self.diagnostics,
                "records": self.records}

    def aggregate_rows(self) -> list:
        return [{"metric": k, "value": v} for k, v in sorted(self.aggregates.items())]


def aggregate(records, rot_thresholds_deg=ROT_THRESHOLDS_DEG, trans_thresholds=TRANS_THRESHOLDS) -> dict:
    ok = [r for r in records if r.get("error") is None]
    rot = np.degrees([r["rot_err"] for r in ok])
    trel = np.array([r["trans_rel"] for r in ok])
    out = {"n": len(records), "n_failed": len(records) - len(ok)}
    if not ok:
        return out
    out.update({
        "rot_err_deg_median": float(np.median(rot)), "rot_err_deg_mean": float(np.mean(rot)),
        "trans_err_m_median": float(np.median([r["trans_err"] for r in ok])),
        "trans_err_m_mean": float(np.mean([r["trans_err"] for r in ok])),
        "trans_rel_median": float(np.median(trel)),
        "z_rel_err_median": float(np.median([r["z_rel_err"] for r in ok])),
        "dz_abs_err_median": float(np.median([r["dz_abs_err"] for r in ok])),
    })
    # failures count as misses
    frac = len(ok) / len(records)
    for a in rot_thresholds_deg:
        out[f"recall_rot_{a:g}deg"] = recall(rot, a) * frac
        for b in trans_thresholds:
            out[f"recall_rot_{a:g}deg_trans_{b * 100:g}pct"] = float(np.mean((rot <= a) & (trel <= b))) * frac
    for b in trans_thresholds:
        out[f"recall_trans_{b * 100:g}pct"] = recall(trel, b) * frac
    return out


def evaluate(model: PoseModel, lib: matcher.EmbeddingLibrary, scenes: Dataset,
             rot_thresholds_deg=ROT_THRESHOLDS_DEG, trans_thresholds=TRANS_THRESHOLDS,
             tau: float = 0.1, coset_radius_deg: float = COSET_RADIUS_DEG,
             diagnose: bool = True) -> EvalReport:
    """Infer every scene, score it against ground truth and summarise.

    Inference errors are stored on the scene's record and do not abort the
    run. ``grid_floor_deg`` is the median distance from the true allocentric
    rotation to its nearest grid entry, the error a perfect encoder would make.
    """
    if lib.object_id != model.object_id:
        raise InvalidInputError(f"library is for {lib.object_id!r}, model for {model.object_id!r}")
    if lib.dim != model.encoder.dim:
        raise InvalidInputError("library width does not match the encoder")
    group = scenes.obj.symmetry
    crops = [s.crop for s in scenes.samples]
    preds = []
    try:
        preds = infer_poses(model, scenes.observations, crops, lib)
    except SymmposeError:
        # fall back to one scene at a time so failures stay local
        for s in scenes.samples:
            try:
                preds.append(infer_poses(model, s.observation[None], [s.crop], lib)[0])
            except SymmposeError as exc:
                preds.append(exc)
    floor, _ = GridIndex(lib.grid).nearest(scenes.r_allo)
    records = []
    for i, (s, p) in enumerate(zip(scenes.samples, preds)):
        rec = {"index": i, "grid_floor": float(floor[i])}
        if isinstance(p, Exception):
            rec["error"] = f"{type(p).__name__}: {p}"
            records.append(rec)
            continue
        t_gt, t_pred = s.true_pose.translation, p.pose.translation
        terr = float(np.linalg.norm(t_pred - t_gt))
        rec.update({
            "rot_err": sym_geodesic_error(p.pose.rotation, s.true_pose.rotation, group),
            "allo_err": sym_geodesic_error(p.r_allo, s.r_allo, group),
            "trans_err": terr, "trans_rel": terr / t_gt[2],
            "z_rel_err": float(abs(t_pred[2] - t_gt[2]) / t_gt[2]),
            "dz_abs_err": float(abs(p.targets.dz - s.targets.dz)),
            "grid_index": p.grid_index, "score": p.score, "error": None,
        })
        records.append(rec)
    aggregates = aggregate(records, rot_thresholds_deg, trans_thresholds)
    aggregates["grid_floor_deg_median"] = float(np.degrees(np.median(floor)))
    aggregates["grid_floor_deg_max"] = float(np.degrees(np.max(floor)))
    diagnostics = {"group_order": group.order, "coset_radius_deg": coset_radius_deg, "tau": tau}
    if diagnose and group.order > 1:
        diagnostics.update(_coset_diagnostics(model, lib, scenes, tau, np.radians(coset_radius_deg)))
    return EvalReport(records, aggregates, diagnostics)


def _coset_diagnostics(model, lib, scenes, tau, radius) -> dict:
    from .trainer import decode

    queries, _, _ = decode(model, scenes.observations, [s.crop for s in scenes.samples])
    quats = matrices_to_quaternions(lib.grid.rotations)
    group = scenes.obj.symmetry
    masses = np.stack([coset_mass(matcher.match_distribution(q, lib, tau), quats, s.r_allo, group, radius)
                       for q, s in zip(queries, scenes.samples)])
    ent = [coset_entropy(m) for m in masses]
    return {"coset_mass_mean": masses.mean(axis=0).tolist(),
            "coset_mass_median": np.median(masses, axis=0).tolist(),
            "coset_mass_total_median": float(np.median(masses.sum(axis=1))),
            "coset_entropy_median": float(np.median(ent)),
            "coset_entropy_max": float(np.log(group.order))}


def random_guess_errors(group: SymmetryGroup, n: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetry-aware error of Haar-random guesses against Haar-random truths."""
    from .so3 import random_rotations

    a, b = random_rotations(rng, n), random_rotations(rng, n)
    return np.array([sym_geodesic_error(x, y, group) for x, y in zip(a, b)])


def pose_errors(pred: geo.Pose, gt: geo.Pose, group: SymmetryGroup) -> tuple:
    """``(sym-aware rotation error, translation error, relative depth error)``."""
    terr = float(np.linalg.norm(pred.translation - gt.translation))
    zrel = float(abs(pred.translation[2] - gt.translation[2]) / gt.translation[2])
    return sym_geodesic_error(pred.rotation, gt.rotation, group), terr, zrel
