import numpy as np
import pytest

pytestmark = pytest.mark.filterwarnings("ignore:.*degenerate edges:RuntimeWarning")
import torch

from meshwss.bundle import prepare_mesh
from meshwss.exceptions import ConfigurationError
from meshwss.unet import GEM, UNetConfig, WSSNet, flatten_params, unflatten_params

from conftest import random_rotation, tube_mesh

SMALL = {"gem": (2, 3, 4), "sage": (6, 8, 10), "feast": (6, 8, 10)}


@pytest.fixture(scope="module")
def bundle():
    return prepare_mesh(tube_mesh(1.0, 8.0, 0.35))


def run(net, bundle, dtype=torch.float64):
    x = torch.as_tensor(bundle.features(net.config.feature_form)[0], dtype=dtype)
    with torch.no_grad():
        return net.to(dtype)(bundle, x).numpy()


@pytest.mark.parametrize("variant,expected", [("gem", 747_608), ("sage", 739_152), ("feast", 741_196)])
def test_default_parameter_budget(variant, expected):
    n = WSSNet(UNetConfig(variant)).n_parameters()
    assert n == expected and 700_000 <= n <= 800_000


@pytest.mark.parametrize("variant", list(SMALL))
def test_zero_coefficients_give_zero_output(variant, bundle):
    net = WSSNet(UNetConfig(variant, SMALL[variant]))
    unflatten_params(net, np.zeros(net.n_parameters()))
    out = run(net, bundle)
    assert out.shape == (bundle.n_vertices, 3) and not out.any()


@pytest.mark.parametrize("variant", list(SMALL))
def test_flatten_round_trip(variant):
    net = WSSNet(UNetConfig(variant, SMALL[variant], seed=1))
    flat = flatten_params(net)
    other = WSSNet(UNetConfig(variant, SMALL[variant], seed=2))
    assert not np.array_equal(flatten_params(other), flat)
    unflatten_params(other, flat)
    assert np.array_equal(flatten_params(other), flat)
    with pytest.raises(ValueError):
        unflatten_params(other, flat[:-1])


def test_seed_fixes_initialisation():
    a, b = WSSNet(UNetConfig("gem", SMALL["gem"], seed=5)), WSSNet(UNetConfig("gem", SMALL["gem"], seed=5))
    assert np.array_equal(flatten_params(a), flatten_params(b))


def test_skip_connections_change_wiring(bundle):
    with_skip = WSSNet(UNetConfig("sage", SMALL["sage"]))
    without = WSSNet(UNetConfig("sage", SMALL["sage"], skip_connections=False))
    assert with_skip.n_parameters() > without.n_parameters()
    # the decoder's first block sees the upsampled features plus the encoder skip
    assert with_skip.decoder[-1][0].conv1.k_self.shape[0] == 8 + 6


def test_gem_output_is_tangential(bundle):
    out = run(WSSNet(UNetConfig("gem", SMALL["gem"])), bundle)
    assert np.abs(np.sum(out * bundle.normals, axis=1)).max() < 1e-12 * np.abs(out).max()


def test_gem_network_rotates_with_the_mesh(bundle):
    net = WSSNet(UNetConfig("gem", SMALL["gem"], seed=3))
    out = run(net, bundle)
    rot = random_rotation(8)
    out_r = run(net, prepare_mesh(bundle.mesh.rotated(rot)))
    assert np.linalg.norm(out_r - out @ rot.T) / np.linalg.norm(out) < 1e-8


@pytest.mark.parametrize("variant", ["sage", "feast"])
def test_euclidean_variants_are_not_rotation_equivariant(variant, bundle):
    net = WSSNet(UNetConfig(variant, SMALL[variant], seed=3))
    out = run(net, bundle)
    rot = random_rotation(8)
    out_r = run(net, prepare_mesh(bundle.mesh.rotated(rot)))
    assert np.linalg.norm(out_r - out @ rot.T) / np.linalg.norm(out) > 0.05


@pytest.mark.parametrize("variant", list(SMALL))
def test_translation_invariance(variant, bundle):
    net = WSSNet(UNetConfig(variant, SMALL[variant]))
    out = run(net, bundle)
    moved = run(net, prepare_mesh(bundle.mesh.translated([3.0, -7.0, 1.0])))
    # translated coordinates are themselves rounded, so agreement is to rounding level
    assert np.abs(out - moved).max() < 1e-12 * np.abs(out).max()


def test_bad_configs():
    for kwargs in ({"variant": "mlp"}, {"widths": (4, 4)}, {"variant": "sage", "output_mode": "tangential"},
                   {"relu_samples": 3}, {"ratios": (0.5, 0.25)}):
        with pytest.raises(ConfigurationError):
            UNetConfig(**kwargs)
    assert UNetConfig("GEM").variant == GEM
