import json

import numpy as np
import pytest

from meshwss.cli import build_parser, main
from meshwss.dataset import load_dataset
from meshwss.estimator import WSSRegressor
from meshwss.io import read_field, read_ply
from meshwss.unet import flatten_params

pytestmark = pytest.mark.filterwarnings("ignore:.*degenerate edges:RuntimeWarning")


@pytest.fixture(scope="module")
def run_dir(small_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(small_dataset), "--out", str(out), "--arch", "gem", "--widths", "2,3,4",
                 "--epochs", "2", "--lr", "0.01"]) == 0
    return out


def test_missing_required_argument_exits_nonzero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "--kind", "single", "--count", "2"])
    assert exc.value.code != 0
    assert "--out" in capsys.readouterr().err


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        build_parser().parse_args(["fly"])
    assert exc.value.code != 0


def test_generate_reports_split(tmp_path, capsys):
    assert main(["generate", "--kind", "single", "--count", "3", "--seed", "1", "--out", str(tmp_path),
                 "--edge-length", "1.0"]) == 0
    assert "3 single samples" in capsys.readouterr().out
    assert (tmp_path / "manifest.json").exists()


def test_train_writes_run_artifacts(run_dir):
    assert {p.name for p in run_dir.iterdir()} >= {"model.ckpt", "history.txt", "run.json"}
    run = json.loads((run_dir / "run.json").read_text())
    assert run["seed"] == 0 and run["dataset_kind"] == "single" and len(run["config_hash"]) == 16
    assert len((run_dir / "history.txt").read_text().splitlines()) == 3


def test_zero_epochs_reproduce_the_initialisation(small_dataset, tmp_path):
    assert main(["train", "--data", str(small_dataset), "--out", str(tmp_path), "--widths", "2,3,4",
                 "--epochs", "0"]) == 0
    loaded = WSSRegressor.load(tmp_path / "model.ckpt")
    fresh = WSSRegressor.initialised(arch="gem", widths=(2, 3, 4))
    assert np.array_equal(flatten_params(loaded.model_.net), flatten_params(fresh.model_.net))


def test_predict_matches_the_estimator(run_dir, small_dataset, tmp_path, capsys):
    sample = load_dataset(small_dataset)[1][0]
    mesh_path = small_dataset / sample.id / "mesh.obj"
    out = tmp_path / "pred.f32"
    assert main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--mesh", str(mesh_path),
                 "--out", str(out)]) == 0
    assert "wall clock" in capsys.readouterr().out
    pred = read_field(out, 3)
    direct = WSSRegressor.load(run_dir / "model.ckpt").predict(sample.mesh)
    assert np.allclose(pred, direct, atol=1e-6 * np.abs(direct).max())
    # picking the inlet by loop index gives the same field as the sidecar tags
    inlet_k = [k for k, lp in enumerate(sample.mesh.boundary_loops) if lp.tag == "inlet"][0]
    bare = tmp_path / "bare.obj"
    bare.write_bytes(mesh_path.read_bytes())
    assert main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--mesh", str(bare),
                 "--inlet-loop", str(inlet_k), "--out", str(tmp_path / "p2.f32")]) == 0
    assert np.array_equal(read_field(tmp_path / "p2.f32", 3), pred)


def test_predict_without_inlet_fails(run_dir, small_dataset, tmp_path, capsys):
    bare = tmp_path / "bare.obj"
    bare.write_bytes((small_dataset / "sample_0000" / "mesh.obj").read_bytes())
    assert main(["predict", "--checkpoint", str(run_dir / "model.ckpt"), "--mesh", str(bare),
                 "--out", str(tmp_path / "p.f32")]) == 1
    assert "inlet" in capsys.readouterr().err


def test_corrupted_checkpoint_is_reported(small_dataset, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(small_dataset), "--out", str(tmp_path)]) == 1
    assert "checkpoint" in capsys.readouterr().err


def test_eval_writes_reports(run_dir, small_dataset, tmp_path):
    assert main(["eval", "--checkpoint", str(run_dir / "model.ckpt"), "--data", str(small_dataset),
                 "--split", "train", "--rotations", "1", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["split"] == "train" and "ratio" in report
    assert report["checkpoint_config_hash"] == WSSRegressor.load(run_dir / "model.ckpt").checkpoint_header_["config_hash"]
    assert "NMAE" in (tmp_path / "metrics.txt").read_text()


def test_eval_rejects_a_tampered_layout(run_dir, small_dataset, tmp_path, capsys):
    from meshwss.io import read_checkpoint, write_checkpoint
    header, params = read_checkpoint(run_dir / "model.ckpt")
    header["feature_layout"]["recipe"]["weighting"] = "uniform"
    header.pop("n_params")
    write_checkpoint(tmp_path / "t.ckpt", header, params)
    assert main(["eval", "--checkpoint", str(tmp_path / "t.ckpt"), "--data", str(small_dataset),
                 "--out", str(tmp_path)]) == 1
    assert "hash" in capsys.readouterr().err


def test_export_round_trip(run_dir, small_dataset, tmp_path):
    mesh_path = small_dataset / "sample_0000" / "mesh.obj"
    field = small_dataset / "sample_0000" / "wss.f32"
    assert main(["export", "--mesh", str(mesh_path), "--field", str(field), "--out", str(tmp_path / "x.ply")]) == 0
    mesh, wss, _ = read_ply(tmp_path / "x.ply")
    assert np.array_equal(wss.astype(np.float32), read_field(field, 3))
    short = tmp_path / "short.f32"
    short.write_bytes(field.read_bytes()[:-12])
    assert main(["export", "--mesh", str(mesh_path), "--field", str(short), "--out", str(tmp_path / "y.ply")]) == 1
