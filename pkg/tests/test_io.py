import struct

import numpy as np
import pytest

from symmpose import io, matcher, nn, so3
from symmpose import synthetic as syn
from symmpose import trainer as tr
from symmpose.errors import FormatError, IncompatibleError


def test_grid_roundtrip_and_layout(tmp_path):
    g = so3.build_grid(30, 7)
    io.save_grid(tmp_path / "g.bin", g)
    raw = (tmp_path / "g.bin").read_bytes()
    assert raw[:4] == io.GRID_MAGIC
    assert struct.unpack("<III", raw[4:16]) == (io.GRID_VERSION, 30, 7)
    assert len(raw) == 16 + 8 * 9 * 210
    back = io.load_grid(tmp_path / "g.bin")
    assert np.array_equal(back.rotations, g.rotations)
    assert (back.n_views, back.n_inplane) == (30, 7)


def test_grid_corruption(tmp_path):
    g = so3.build_grid(3, 2)
    data = io.grid_bytes(g)
    p = tmp_path / "g.bin"
    p.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        io.load_grid(p)
    p.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        io.load_grid(p)
    p.write_bytes(data + b"\0")
    with pytest.raises(FormatError):
        io.load_grid(p)
    p.write_bytes(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(IncompatibleError):
        io.load_grid(p)


def test_library_roundtrip(tmp_path, rng):
    g = so3.build_grid(20, 5)
    w = rng.normal(size=(9, 6))
    lib = matcher.build_library(lambda r: r.reshape(len(r), 9) @ w, g, "mug")
    io.save_library(tmp_path / "l.bin", lib)
    back = io.load_library(tmp_path / "l.bin", g)
    assert back.object_id == "mug"
    assert np.array_equal(back.rows, lib.rows)
    rows_only = io.load_library_rows(tmp_path / "l.bin")
    assert np.array_equal(rows_only.rows, lib.rows)
    with pytest.raises(IncompatibleError):
        io.load_library(tmp_path / "l.bin", so3.build_grid(3, 3))


def test_mlp_roundtrip(tmp_path, rng):
    p = nn.mlp_init((3, 5, 2), ("tanh", "linear"), rng)
    io.save_mlp(tmp_path / "m.mlp", p)
    q = io.load_mlp(tmp_path / "m.mlp")
    assert q.widths == p.widths and q.activations == p.activations
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))
    bad = bytearray(io.mlp_bytes(p))
    bad[4 + 4 + 4 + 12] = 9  # first activation code
    with pytest.raises(FormatError):
        io.parse_mlp(bytes(bad))


@pytest.fixture(scope="module")
def trained():
    obj = syn.make_object(syn.ObjectSpec(symmetry="cyclic", order=2, obs_dim=8))
    ds = syn.generate_dataset(obj, 20, syn.SceneConfig(), seed=0)
    model, _ = tr.train(ds, tr.TrainConfig(epochs=1, batch_size=10, q_train=16, use_pe=True))
    return ds, model


def test_checkpoint_roundtrip(tmp_path, trained):
    ds, model = trained
    io.write_checkpoint(tmp_path / "ck", model, {"config_hash": "abc"})
    back, meta = io.load_checkpoint(tmp_path / "ck")
    assert meta["config_hash"] == "abc"
    assert (back.dz_mode, back.use_pe, back.pe_scale, back.zbins) == \
        (model.dz_mode, model.use_pe, model.pe_scale, model.zbins)
    for a, b in zip(tr.model_arrays(model), tr.model_arrays(back)):
        assert np.array_equal(a, b)


def test_checkpoint_missing_or_newer(tmp_path, trained):
    with pytest.raises(FileNotFoundError):
        io.load_checkpoint(tmp_path / "nothing")
    _, model = trained
    io.write_checkpoint(tmp_path / "ck", model)
    meta = io.read_json(tmp_path / "ck" / "meta.json")
    meta["format_version"] = 7
    io.write_json(tmp_path / "ck" / "meta.json", meta)
    with pytest.raises(IncompatibleError):
        io.load_checkpoint(tmp_path / "ck")


def test_dataset_roundtrip(tmp_path, trained):
    ds, _ = trained
    io.write_dataset(tmp_path / "d", ds)
    back = io.load_dataset(tmp_path / "d")
    assert (back.d_l, back.d_u, back.seed, len(back)) == (ds.d_l, ds.d_u, ds.seed, len(ds))
    assert np.array_equal(back.observations, ds.observations)
    assert np.array_equal(back.r_allo, ds.r_allo)
    assert np.array_equal(back.offsets, ds.offsets)
    for a, b in zip(back.samples, ds.samples):
        assert np.array_equal(a.crop.k_b, b.crop.k_b)
        assert np.array_equal(a.true_pose.translation, b.true_pose.translation)
    assert back.obj.symmetry.order == 2


def test_atomic_dir_leaves_nothing_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with io.atomic_dir(tmp_path / "out") as d:
            (d / "partial.txt").write_text("x")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []


def test_config_hash_is_order_independent():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_csv_writer(tmp_path):
    io.write_csv(tmp_path / "x.csv", ["a", "b"], [{"a": 0.1, "b": "z"}], "config_hash=1")
    assert (tmp_path / "x.csv").read_text() == "# config_hash=1\na,b\n0.1,z\n"
