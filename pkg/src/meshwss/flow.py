"""Analytic wall-shear-stress surrogate standing in for a Navier-Stokes solver.

Every vertex gets the Poiseuille wall shear of the nearest centerline
station, with the mean speed following mass conservation through the local
lumen radius and a cubic flow split at bifurcations. The direction is the
centerline tangent projected onto the wall.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from meshwss.exceptions import ConfigurationError
from meshwss.mesh import TriangleMesh, vertex_normals

SURROGATE, EXTERNAL = "surrogate", "external"
DYN_PER_CM2_IN_PA = 0.1


@dataclasses.dataclass(frozen=True)
class FlowParams:
    """CGS flow parameters: mu [g/(cm s)], rho [g/cm^3], u_in [cm/s]; p_out in kPa."""

    mu: float
    rho: float
    u_in: float
    p_out: float = 13.332

    def __post_init__(self):
        if min(self.mu, self.rho, self.u_in, self.p_out) <= 0:
            raise ConfigurationError("flow parameters must be positive")


SINGLE_FLOW = FlowParams(mu=0.035, rho=1.05, u_in=20.0)
BIFURCATION_FLOW = FlowParams(mu=0.04, rho=1.06, u_in=11.8)


@dataclasses.dataclass(eq=False)
class WSSField:
    values: np.ndarray  # (n, 3) [Pa]
    provenance: str = SURROGATE

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.values, axis=1)

    def normal_leakage(self, normals: np.ndarray) -> np.ndarray:
        """``|wss . n| / |wss|`` per vertex (0 where the field vanishes)."""
        mag = self.magnitude
        dot = np.abs(np.einsum("ij,ij->i", self.values, normals))
        return np.divide(dot, mag, out=np.zeros_like(mag), where=mag > 0)


def reynolds(rho: float, u: float, diameter: float, mu: float) -> float:
    """Reynolds number from CGS inputs (diameter in cm)."""
    return rho * u * diameter / mu


def poiseuille_wss(mu: float, u_mean, r) -> np.ndarray:
    """Wall shear ``4 mu u / r`` of fully developed pipe flow, in Pa (r in cm)."""
    return 4.0 * mu * np.asarray(u_mean, dtype=np.float64) / np.asarray(r, dtype=np.float64) * DYN_PER_CM2_IN_PA


def _stations(branches, step: float = 0.05):
    pts, tangents, radii, flows = [], [], [], []
    for br in branches:
        line = br.centerline
        s = np.linspace(0.0, line.length, max(2, int(np.ceil(line.length / step)) + 1))
        pts.append(line.point(s))
        tangents.append(line.tangent(s))
        radii.append(np.asarray(br.radius(s), dtype=np.float64) * np.ones_like(s))
        flows.append(np.full(len(s), br.flow))
    return np.concatenate(pts), np.concatenate(tangents), np.concatenate(radii), np.concatenate(flows)


def surrogate_wss_field(mesh: TriangleMesh, spec, params: FlowParams, normals: np.ndarray | None = None) -> WSSField:
    """Per-vertex surrogate WSS vectors in Pa for a lofted spec."""
    branches = spec.branches() if hasattr(spec, "branches") else None
    if not branches:
        raise ConfigurationError("spec provides no centerline")
    normals = vertex_normals(mesh) if normals is None else normals
    pts, tangents, radii, flows = _stations(branches)
    _, nearest = cKDTree(pts).query(mesh.positions)
    r_in = float(branches[0].radius(0.0))
    r = radii[nearest]
    u = flows[nearest] * params.u_in * (r_in / r) ** 2
    tau = poiseuille_wss(params.mu, u, r / 10.0)
    t = tangents[nearest]
    proj = t - np.einsum("ij,ij->i", t, normals)[:, None] * normals
    norm = np.linalg.norm(proj, axis=1)
    ok = norm > 1e-9
    direction = np.zeros_like(proj)
    direction[ok] = proj[ok] / norm[ok, None]
    return WSSField(tau[:, None] * direction, SURROGATE)


def import_external_field(path, mesh: TriangleMesh) -> WSSField:
    """Externally computed field (e.g. CFD) stored as little-endian f32 triplets."""
    from meshwss.io import read_field
    values = read_field(Path(path), 3)
    if len(values) != mesh.n_vertices:
        raise ConfigurationError(f"field has {len(values)} vectors, mesh has {mesh.n_vertices} vertices")
    return WSSField(values.astype(np.float64), EXTERNAL)
