import json

import numpy as np
import pytest

from meshwss.dataset import generate_dataset, load_dataset
from meshwss.exceptions import CheckpointError, ConfigurationError
from meshwss.io import (read_checkpoint, read_field, read_hierarchy_cache, read_ply, write_checkpoint,
                        write_field, write_hierarchy_cache, write_ply)
from meshwss.mesh import INLET, OUTLET, validate

from conftest import tube_mesh


def test_field_round_trip(tmp_path):
    values = np.random.default_rng(0).normal(size=(7, 3))
    write_field(tmp_path / "f.f32", values)
    assert (tmp_path / "f.f32").stat().st_size == 7 * 3 * 4
    assert np.array_equal(read_field(tmp_path / "f.f32", 3), values.astype(np.float32))
    with pytest.raises(ConfigurationError):
        read_field(tmp_path / "f.f32", 4)


def test_checkpoint_round_trip_and_corruption(tmp_path):
    params = np.arange(10, dtype=np.float64) / 3
    write_checkpoint(tmp_path / "m.ckpt", {"a": 1}, params)
    header, back = read_checkpoint(tmp_path / "m.ckpt")
    assert header == {"a": 1, "n_params": 10} and np.array_equal(back, params.astype(np.float32))
    data = (tmp_path / "m.ckpt").read_bytes()
    for name, blob in {"magic": b"XXXXXXXX" + data[8:], "truncated": data[:-4], "header": data[:20] + b"\xff" + data[21:],
                       "empty": b""}.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(CheckpointError):
            read_checkpoint(tmp_path / name)


def test_ply_round_trip(tmp_path):
    mesh = tube_mesh(1.0, 3.0, 0.5)
    field = np.random.default_rng(1).normal(size=(mesh.n_vertices, 3))
    write_ply(tmp_path / "x.ply", mesh, field)
    back, wss, mag = read_ply(tmp_path / "x.ply")
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.positions, mesh.positions, atol=1e-6)
    assert np.allclose(wss, field, atol=1e-6) and np.allclose(mag, np.linalg.norm(field, axis=1), atol=1e-5)


def test_hierarchy_cache_round_trip(tmp_path):
    subsets = [np.array([0, 3, 7, 9]), np.array([3, 9]), np.array([9])]
    write_hierarchy_cache(tmp_path / "h.bin", subsets)
    assert all(np.array_equal(a, b) for a, b in zip(read_hierarchy_cache(tmp_path / "h.bin"), subsets))
    (tmp_path / "bad.bin").write_bytes(b"\x00" * 12)
    with pytest.raises(ConfigurationError):
        read_hierarchy_cache(tmp_path / "bad.bin")


def test_split_counts_and_validity(small_dataset):
    manifest, samples = load_dataset(small_dataset)
    assert [sum(s.split == k for s in samples) for k in ("train", "val", "test")] == [8, 1, 1]
    assert manifest["count"] == 10 and manifest["wss_provenance"] == "surrogate"
    for s in samples:
        assert validate(s.mesh).ok
        assert len(s.mesh.loops_tagged(INLET)) == 1 and len(s.mesh.loops_tagged(OUTLET)) == 1
        assert s.target.shape == (s.mesh.n_vertices, 3)


def test_generation_is_byte_identical(small_dataset, tmp_path):
    generate_dataset("single", 10, 3, tmp_path, edge_length=1.0)
    assert (tmp_path / "manifest.json").read_bytes() == (small_dataset / "manifest.json").read_bytes()


def test_tampered_dataset_is_detected(small_dataset, tmp_path):
    generate_dataset("single", 2, 5, tmp_path, edge_length=1.0)
    field = tmp_path / "sample_0001" / "wss.f32"
    data = bytearray(field.read_bytes())
    data[0] ^= 0xFF
    field.write_bytes(bytes(data))
    with pytest.raises(ConfigurationError, match="sample_0001"):
        load_dataset(tmp_path)
    assert len(load_dataset(tmp_path, verify=False)[1]) == 2


def test_bifurcating_defaults(tmp_path):
    manifest = generate_dataset("bifurcating", 1, 0, tmp_path)
    assert manifest["edge_length"] == 0.2
    assert manifest["flow"]["mu"] == 0.04 and manifest["flow"]["u_in"] == 11.8
    _, (sample,) = load_dataset(tmp_path)
    assert len(sample.mesh.loops_tagged(OUTLET)) == 2
    assert json.loads((tmp_path / "manifest.json").read_text())["kind"] == "bifurcating"


def test_bad_generation_arguments(tmp_path):
    with pytest.raises(ConfigurationError):
        generate_dataset("trifurcating", 1, 0, tmp_path)
    with pytest.raises(ConfigurationError):
        generate_dataset("single", 0, 0, tmp_path)
    with pytest.raises(ConfigurationError):
        load_dataset(tmp_path / "missing")
