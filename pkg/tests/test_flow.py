import numpy as np
import pytest

from meshwss.exceptions import ConfigurationError
from meshwss.flow import (BIFURCATION_FLOW, SINGLE_FLOW, EXTERNAL, SURROGATE, FlowParams, import_external_field,
                          poiseuille_wss, reynolds, surrogate_wss_field)
from meshwss.io import write_field
from meshwss.mesh import vertex_normals
from meshwss.synth import loft_single, loft_surface, sample_bifurcation

from conftest import random_rotation, straight_spec


def test_reynolds():
    assert reynolds(1.05, 20.0, 0.3, 0.035) == pytest.approx(180.0)
    assert reynolds(1.05, 40.0, 0.3, 0.035) == pytest.approx(360.0)
    assert reynolds(1.05, 0.0, 0.3, 0.035) == 0.0


def test_poiseuille():
    assert poiseuille_wss(0.04, 11.8, 0.175) == pytest.approx(1.0789, abs=1e-4)
    assert poiseuille_wss(0.04, 11.8, 0.0875) == pytest.approx(2 * poiseuille_wss(0.04, 11.8, 0.175))
    assert poiseuille_wss(0.08, 11.8, 0.175) == pytest.approx(2 * poiseuille_wss(0.04, 11.8, 0.175))


def test_default_flow_parameters():
    assert (SINGLE_FLOW.mu, SINGLE_FLOW.rho, SINGLE_FLOW.u_in) == (0.035, 1.05, 20.0)
    assert (BIFURCATION_FLOW.mu, BIFURCATION_FLOW.rho, BIFURCATION_FLOW.u_in) == (0.04, 1.06, 11.8)
    assert SINGLE_FLOW.p_out == pytest.approx(13.332)


def test_straight_tube_field_is_uniform_and_axial():
    spec = straight_spec(1.5, 20.0)
    mesh = loft_single(spec)
    field = surrogate_wss_field(mesh, spec, SINGLE_FLOW)
    assert field.provenance == SURROGATE
    assert np.allclose(field.magnitude, poiseuille_wss(0.035, 20.0, 0.15), rtol=1e-12)
    assert np.allclose(field.values[:, 1:], 0, atol=1e-12) and np.all(field.values[:, 0] > 0)


def test_stenosis_throat_ratio(stenosed_tube):
    mesh = loft_single(stenosed_tube)
    field = surrogate_wss_field(mesh, stenosed_tube, SINGLE_FLOW)
    inlet = field.magnitude[mesh.inlet_vertices].mean()
    assert field.magnitude.max() / inlet == pytest.approx(8.0, rel=0.02)


def test_field_is_tangential_and_rotates_with_the_geometry(stenosed_tube):
    mesh = loft_single(stenosed_tube)
    field = surrogate_wss_field(mesh, stenosed_tube, SINGLE_FLOW)
    assert field.normal_leakage(vertex_normals(mesh)).max() < 1e-12
    rot = random_rotation(6)
    turned = surrogate_wss_field(mesh.rotated(rot), stenosed_tube.rotated(rot), SINGLE_FLOW)
    assert np.allclose(turned.values, field.values @ rot.T, atol=1e-9)
    again = surrogate_wss_field(mesh, stenosed_tube, SINGLE_FLOW)
    assert np.array_equal(again.values, field.values)


def test_bifurcation_magnitudes_are_physiological():
    healthy = 0
    rng = np.random.default_rng(11)
    for _ in range(5):
        spec = sample_bifurcation(rng)
        mag = surrogate_wss_field(loft_surface(spec), spec, BIFURCATION_FLOW).magnitude
        assert mag.min() >= 0.3 and mag.max() <= 10.0
        healthy += 1.0 <= np.median(mag) <= 2.5
    assert healthy >= 4


def test_external_field_import(tmp_path):
    mesh = loft_single(straight_spec(1.0, 4.0))
    values = np.random.default_rng(0).normal(size=(mesh.n_vertices, 3))
    write_field(tmp_path / "wss.f32", values)
    field = import_external_field(tmp_path / "wss.f32", mesh)
    assert field.provenance == EXTERNAL and np.allclose(field.values, values, atol=1e-6)
    write_field(tmp_path / "short.f32", values[:-1])
    with pytest.raises(ConfigurationError):
        import_external_field(tmp_path / "short.f32", mesh)


def test_spec_without_centerline_is_rejected():
    with pytest.raises(ConfigurationError):
        surrogate_wss_field(loft_single(straight_spec()), object(), FlowParams(0.04, 1.06, 11.8))
