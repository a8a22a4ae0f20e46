"""On-disk formats: SO(3) grids, embedding libraries, network checkpoints,
datasets, and the JSON/CSV artifacts written by the command line.

All binary payloads are little-endian. Outputs are written to a temporary
sibling and renamed into place so a failed command leaves nothing behind.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import io as _io
import json
import os
import shutil
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import FormatError, IncompatibleError
from .matcher import EmbeddingLibrary
from .nn import ACTIVATIONS, MlpParams
from .so3 import SO3Grid
from .synthetic import Dataset, ObjectSpec, SceneConfig, build_sample, make_object
from .trainer import PoseDecoder, PoseModel, So3Encoder
from .zbin import make_bins

GRID_MAGIC, LIB_MAGIC, MLP_MAGIC, SCENE_MAGIC = b"SO3G", b"EMBL", b"MLPW", b"SCNS"
GRID_VERSION = LIB_VERSION = MLP_VERSION = SCENE_VERSION = 1
CHECKPOINT_VERSION = 1
REPORT_SCHEMA = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- atomic output -----------------------------------------------------------

@contextlib.contextmanager
def atomic_dir(path):
    """Yield a scratch directory that replaces ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if path.exists():
        shutil.rmtree(path) if path.is_dir() else path.unlink()
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, columns, rows, comment: str | None = None) -> None:
    buf = _io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    atomic_write_bytes(path, buf.getvalue().encode())


# -- binary helpers ----------------------------------------------------------

def _read_exact(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise FormatError("unexpected end of file")
    return b


def _read_header(fh, magic, version):
    got = _read_exact(fh, 4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (ver,) = struct.unpack("<I", _read_exact(fh, 4))
    if ver != version:
        raise IncompatibleError(f"format version {ver} is not supported (expected {version})")


def _read_array(fh, dtype, count):
    dt = np.dtype(dtype)
    return np.frombuffer(_read_exact(fh, dt.itemsize * count), dtype=dt).copy()


def _expect_eof(fh):
    if fh.read(1):
        raise FormatError("trailing bytes after payload")


# -- SO(3) grid ----------------------------------------------------------------

def grid_bytes(grid: SO3Grid) -> bytes:
    head = GRID_MAGIC + struct.pack("<III", GRID_VERSION, grid.n_views, grid.n_inplane)
    return head + np.ascontiguousarray(grid.rotations, dtype="<f8").tobytes()


def save_grid(path, grid: SO3Grid) -> None:
    atomic_write_bytes(path, grid_bytes(grid))


def load_grid(path) -> SO3Grid:
    with open(path, "rb") as fh:
        _read_header(fh, GRID_MAGIC, GRID_VERSION)
        n_views, n_inplane = struct.unpack("<II", _read_exact(fh, 8))
        q = n_views * n_inplane
        rots = _read_array(fh, "<f8", 9 * q).reshape(q, 3, 3)
        _expect_eof(fh)
    return SO3Grid(rots.astype(float), n_views, n_inplane)


# -- embedding library ---------------------------------------------------------

def library_bytes(lib: EmbeddingLibrary) -> bytes:
    oid = lib.object_id.encode()
    head = LIB_MAGIC + struct.pack("<II", LIB_VERSION, len(oid)) + oid
    head += struct.pack("<QI", len(lib), lib.dim)
    return head + np.ascontiguousarray(lib.rows, dtype="<f4").tobytes()


def save_library(path, lib: EmbeddingLibrary) -> None:
    atomic_write_bytes(path, library_bytes(lib))


def _read_library(path, expected_rows=None):
    with open(path, "rb") as fh:
        _read_header(fh, LIB_MAGIC, LIB_VERSION)
        (n_id,) = struct.unpack("<I", _read_exact(fh, 4))
        oid = _read_exact(fh, n_id).decode()
        q, d = struct.unpack("<QI", _read_exact(fh, 12))
        if expected_rows is not None and q != expected_rows:
            raise IncompatibleError(f"library has {q} rows but the grid has {expected_rows} rotations")
        rows = _read_array(fh, "<f4", q * d).reshape(q, d).astype(np.float32)
        _expect_eof(fh)
    return oid, rows


def load_library(path, grid: SO3Grid) -> EmbeddingLibrary:
    oid, rows = _read_library(path, len(grid))
    return EmbeddingLibrary(oid, rows, grid)


def load_library_rows(path) -> EmbeddingLibrary:
    """Library without its grid, for matching benchmarks.

    Every rotation is a zero-copy identity placeholder, so indices are
    meaningful but rotations are not.
    """
    oid, rows = _read_library(path)
    placeholder = SO3Grid(np.broadcast_to(np.eye(3), (len(rows), 3, 3)), len(rows), 1)
    return EmbeddingLibrary(oid, rows, placeholder)


# -- network checkpoints -------------------------------------------------------

def mlp_bytes(params: MlpParams) -> bytes:
    n = len(params.widths)
    out = MLP_MAGIC + struct.pack("<II", MLP_VERSION, n) + struct.pack(f"<{n}I", *params.widths)
    out += bytes(ACTIVATIONS.index(a) for a in params.activations)
    for arr in params.arrays():
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return out


def parse_mlp(data: bytes) -> MlpParams:
    fh = _io.BytesIO(data)
    _read_header(fh, MLP_MAGIC, MLP_VERSION)
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    widths = struct.unpack(f"<{n}I", _read_exact(fh, 4 * n))
    codes = _read_exact(fh, n - 1)
    if any(c >= len(ACTIVATIONS) for c in codes):
        raise FormatError("unknown activation code")
    weights, biases = [], []
    for a, b in zip(widths[:-1], widths[1:]):
        weights.append(_read_array(fh, "<f8", a * b).reshape(a, b).astype(float))
        biases.append(_read_array(fh, "<f8", b).astype(float))
    _expect_eof(fh)
    return MlpParams(widths, tuple(ACTIVATIONS[c] for c in codes), weights, biases)


def save_mlp(path, params: MlpParams) -> None:
    atomic_write_bytes(path, mlp_bytes(params))


def load_mlp(path) -> MlpParams:
    return parse_mlp(Path(path).read_bytes())


_DECODER_PARTS = ("trunk", "emb_head", "xy_head", "z_head")


def write_checkpoint(directory, model: PoseModel, extra: dict | None = None) -> None:
    """Populate an (already created) directory with a model checkpoint."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_mlp(d / "encoder_trunk.mlp", model.encoder.trunk)
    save_mlp(d / "encoder_head.mlp", model.encoder.heads[model.object_id])
    for part in _DECODER_PARTS:
        save_mlp(d / f"decoder_{part}.mlp", getattr(model.decoder, part))
    meta = {"format_version": CHECKPOINT_VERSION, "object_id": model.object_id, "dz_mode": model.dz_mode,
            "use_pe": model.use_pe, "pe_scale": model.pe_scale,
            "zbins": {"d_l": model.zbins.d_l, "d_u": model.zbins.d_u, "k": model.zbins.k}}
    meta.update(extra or {})
    write_json(d / "meta.json", meta)


def load_checkpoint(directory) -> tuple[PoseModel, dict]:
    d = Path(directory)
    if not (d / "meta.json").is_file():
        raise FileNotFoundError(f"no checkpoint at {d}")
    meta = read_json(d / "meta.json")
    if meta.get("format_version") != CHECKPOINT_VERSION:
        raise IncompatibleError(f"checkpoint format {meta.get('format_version')} != {CHECKPOINT_VERSION}")
    oid = meta["object_id"]
    encoder = So3Encoder(load_mlp(d / "encoder_trunk.mlp"), {oid: load_mlp(d / "encoder_head.mlp")})
    decoder = PoseDecoder(*(load_mlp(d / f"decoder_{p}.mlp") for p in _DECODER_PARTS))
    z = meta["zbins"]
    model = PoseModel(oid, encoder, decoder, make_bins(z["d_l"], z["d_u"], z["k"]), meta["dz_mode"],
                      meta["use_pe"], meta["pe_scale"])
    return model, meta


# -- datasets ------------------------------------------------------------------

def _record(s) -> np.ndarray:
    k, b, t = s.k_x, s.detection, s.targets
    return np.concatenate([s.true_pose.rotation.ravel(), s.true_pose.translation,
                           [k.fx, k.fy, k.cx, k.cy, b.bx, b.by, b.bw, b.bh, t.dx, t.dy, t.dz],
                           s.r_allo.ravel(), s.observation])


def write_dataset(directory, ds: Dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    obs_dim = ds.obj.spec.obs_dim
    recs = np.stack([_record(s) for s in ds.samples]).astype("<f8")
    head = SCENE_MAGIC + struct.pack("<IQI", SCENE_VERSION, len(ds), obs_dim)
    atomic_write_bytes(d / "samples.bin", head + recs.tobytes())
    write_json(d / "meta.json", ds.meta())


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "meta.json").is_file():
        raise FileNotFoundError(f"no dataset at {d}")
    meta = read_json(d / "meta.json")
    spec = meta["object"]
    spec["axis"] = tuple(spec["axis"])
    obj = make_object(ObjectSpec(**spec))
    config = SceneConfig(**meta["config"])
    with open(d / "samples.bin", "rb") as fh:
        _read_header(fh, SCENE_MAGIC, SCENE_VERSION)
        n, obs_dim = struct.unpack("<QI", _read_exact(fh, 12))
        width = 9 + 3 + 11 + 9 + obs_dim
        recs = _read_array(fh, "<f8", n * width).reshape(n, width)
        _expect_eof(fh)
    if obs_dim != obj.spec.obs_dim:
        raise FormatError("record width does not match the object's observation size")
    samples = []
    for r in recs:
        fx, fy, cx, cy, bx, by, bw, bh, dx, dy, dz = r[12:23]
        if (fx, fy, cx, cy) != (config.fx, config.fy, config.cx, config.cy):
            raise FormatError("sample intrinsics disagree with the stored scene config")
        s = build_sample(obj, config, r[:9].reshape(3, 3), r[9:12], geo.BBoxDetection(bx, by, bw, bh))
        # keep the stored (noisy) observation and targets bit for bit
        samples.append(type(s)(s.true_pose, s.k_x, s.detection, s.crop, geo.SiteTargets(dx, dy, dz),
                               r[23:32].reshape(3, 3).copy(), r[32:].copy()))
    return Dataset(obj, config, samples, meta["d_l"], meta["d_u"], meta["seed"])


def dataclass_dict(obj) -> dict:
    return asdict(obj)
