"""Built-in consistency checks run by ``symmpose selftest``.

Each check reports the worst measured deviation next to its tolerance.
Functions are looked up through their modules at call time so a patched
implementation is what gets tested.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import geometry as geo
from . import gradcheck, losses, nn, so3


@dataclass(frozen=True)
class CheckResult:
    module: str
    op: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _result(module, op, measured, tol, detail=""):
    measured = float(measured)
    return CheckResult(module, op, bool(np.isfinite(measured) and measured <= tol), measured, tol, detail)


def random_front_scene(rng, n):
    """Random intrinsics, in-front translations and boxes around their projections."""
    fx, fy = rng.uniform(300, 1200, (2, n))
    cx, cy = rng.uniform(200, 500, (2, n))
    t = np.stack([rng.uniform(-0.3, 0.3, n), rng.uniform(-0.3, 0.3, n), rng.uniform(0.3, 3.0, n)], axis=1)
    u, v = fx * t[:, 0] / t[:, 2] + cx, fy * t[:, 1] / t[:, 2] + cy
    bw, bh = rng.uniform(20, 200, (2, n))
    bx, by = u + rng.uniform(-0.1, 0.1, n) * bw, v + rng.uniform(-0.1, 0.1, n) * bh
    return [(geo.CameraIntrinsics(fx[i], fy[i], cx[i], cy[i]), t[i], geo.BBoxDetection(bx[i], by[i], bw[i], bh[i]))
            for i in range(n)]


def check_translation_roundtrip(rng, n=1000) -> CheckResult:
    worst = 0.0
    for k, t, box in random_front_scene(rng, n):
        cg = geo.crop_geometry(box, k)
        st = geo.site_targets(geo.Pose(np.eye(3), t), cg)
        worst = max(worst, np.linalg.norm(geo.recover_translation(st, cg) - t) / np.linalg.norm(t))
    return _result("geometry", "recover_translation", worst, 1e-9, "relative error over random scenes")


def check_ray_rotation(rng, n=1000) -> list:
    o = rng.normal(size=(n, 3))
    o[:, 2] = np.abs(o[:, 2]) + 1e-3
    o /= np.linalg.norm(o, axis=1, keepdims=True)
    r = geo.axis_to_ray_rotations(o)
    orth = np.abs(np.einsum("nji,njk->nik", r, r) - np.eye(3)).max()
    det = np.abs(np.linalg.det(r) - 1.0).max()
    maps = np.abs(r[:, :, 2] - o).max()
    k = geo.CameraIntrinsics(600.0, 600.0, 320.0, 240.0)
    at_pp = np.abs(geo.ray_rotation(np.array([320.0, 240.0, 1.0]), k.matrix) - np.eye(3)).max()
    r_allo = so3.random_rotations(rng, n)
    rt = np.abs(geo.ego_to_allo(geo.allo_to_ego(r_allo[0], r[0]), r[0]) - r_allo[0]).max()
    return [
        _result("geometry", "ray_rotation/orthonormal", max(orth, det), 1e-12),
        _result("geometry", "ray_rotation/maps_axis_to_ray", maps, 1e-12),
        _result("geometry", "ray_rotation/principal_point_identity", at_pp, 1e-12),
        _result("geometry", "allo_to_ego/roundtrip", rt, 1e-12),
    ]


def check_mlp_gradients(rng, trials=5) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        p = nn.mlp_init((4, 5, 3), ("tanh", "linear"), rng)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(3, 3))
        out, cache = nn.forward(p, x)
        g, gx = nn.backward(p, cache, w)
        worst = max(worst, gradcheck.check(lambda: float(np.sum(nn.forward(p, x)[0] * w)), p.arrays() + [x],
                                           g + [gx]))
    return _result("nn", "backward", worst, 1e-5, "relative error vs central differences")


def check_info_nce_gradients(rng, trials=5) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        raw = [rng.normal(size=s) for s in ((2, 4), (2, 4), (5, 4))]

        def f():
            return losses.info_nce(*[nn.l2_normalize(r) for r in raw], tau=0.5)[0]

        _, (db, dp, dn) = losses.info_nce(*[nn.l2_normalize(r) for r in raw], tau=0.5)
        ana = [nn.l2_normalize_backward(r, d) for r, d in zip(raw, (db, dp, dn))]
        worst = max(worst, gradcheck.check(f, raw, ana))
    return _result("losses", "info_nce", worst, 1e-5, "relative error vs central differences")


def check_focal_gradients(rng, trials=5) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        z = rng.normal(size=(3, 6))
        idx = rng.integers(0, 6, 3)
        _, g = losses.focal_loss(losses.softmax(z), idx, 0.5, 2.0)
        worst = max(worst, gradcheck.check(lambda: losses.focal_loss(losses.softmax(z), idx, 0.5, 2.0)[0],
                                           [z], [g]))
    return _result("losses", "focal_loss", worst, 1e-5, "relative error vs central differences")


def check_loss_identities(rng) -> list:
    z = rng.normal(size=(8, 10))
    idx = rng.integers(0, 10, 8)
    p = losses.softmax(z)
    focal_ce = abs(losses.focal_loss(p, idx, 1.0, 0.0)[0] - losses.cross_entropy(p, idx))
    b = nn.l2_normalize(rng.normal(size=(4, 8)))
    pos = nn.l2_normalize(rng.normal(size=(4, 8)))
    no_neg = abs(losses.info_nce(b, pos, np.zeros((0, 8)), 0.1)[0])
    return [_result("losses", "focal_loss/gamma0_is_cross_entropy", focal_ce, 1e-12),
            _result("losses", "info_nce/no_negatives_is_zero", no_neg, 1e-12)]


def run_all(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    checks = [check_translation_roundtrip, check_ray_rotation, check_mlp_gradients, check_info_nce_gradients,
              check_focal_gradients, check_loss_identities]
    results = []
    for c in checks:
        try:
            out = c(rng)
        except Exception as exc:  # a crashing check is a failing check
            out = CheckResult(c.__module__.rsplit(".", 1)[-1], c.__name__, False, float("nan"), 0.0,
                              f"{type(exc).__name__}: {exc}")
        results += out if isinstance(out, list) else [out]
    return results
