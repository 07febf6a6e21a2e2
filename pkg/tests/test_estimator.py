import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from meshwss.dataset import load_dataset
from meshwss.estimator import WSSRegressor
from meshwss.exceptions import CheckpointError
from meshwss.unet import flatten_params

pytestmark = pytest.mark.filterwarnings("ignore:.*degenerate edges:RuntimeWarning")


@pytest.fixture(scope="module")
def data(small_dataset):
    return load_dataset(small_dataset)[1]


@pytest.fixture(scope="module")
def fitted(data):
    est = WSSRegressor(arch="sage", widths=(4, 6, 8), epochs=2, learning_rate=1e-2)
    return est.fit([s.mesh for s in data[:3]], [s.target for s in data[:3]])


def test_params_and_clone():
    est = WSSRegressor(arch="feast", heads=2, epochs=3)
    assert est.get_params()["heads"] == 2
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est


def test_unfitted_predict_raises(data):
    with pytest.raises(NotFittedError):
        WSSRegressor().predict(data[0].mesh)


def test_fit_predict_score(fitted, data):
    assert len(fitted.history_) == 2 and fitted.n_parameters_ > 0
    pred = fitted.predict(data[0].mesh)
    assert pred.shape == (data[0].mesh.n_vertices, 3)
    assert len(fitted.predict([s.mesh for s in data[:2]])) == 2
    assert fitted.score([data[0].mesh], [data[0].target]) <= 0


def test_save_load_round_trip(fitted, data, tmp_path):
    fitted.save(tmp_path / "m.ckpt")
    back = WSSRegressor.load(tmp_path / "m.ckpt")
    assert back.get_params() == fitted.get_params()
    assert np.array_equal(flatten_params(back.model_.net), flatten_params(fitted.model_.net))
    assert np.array_equal(back.predict(data[1].mesh), fitted.predict(data[1].mesh))


def test_load_rejects_foreign_checkpoints(tmp_path):
    from meshwss.io import write_checkpoint
    write_checkpoint(tmp_path / "x.ckpt", {"format": "other"}, np.zeros(3))
    with pytest.raises(CheckpointError):
        WSSRegressor.load(tmp_path / "x.ckpt")


def test_input_validation(fitted, data):
    with pytest.raises(TypeError):
        fitted.predict([np.zeros((3, 3))])
    with pytest.raises(ValueError):
        fitted.fit([data[0].mesh], [data[0].target[:-1]])
    with pytest.raises(ValueError):
        fitted.fit([data[0].mesh], [np.full_like(data[0].target, np.nan)])
