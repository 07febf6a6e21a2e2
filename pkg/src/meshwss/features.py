"""Rotation-equivariant per-vertex input features.

For each vertex a Gaussian-weighted ball average of neighbour offsets and of
vertex normals is formed; their outer products (offset-offset,
normal-normal, offset-normal) are either flattened into 27 Euclidean
channels or decomposed into SO(2) irreps in the local gauge. The geodesic
inlet distance is appended as one more invariant channel.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial import cKDTree

from meshwss.exceptions import ConfigurationError
from meshwss.gauge import Frames, MATRIX_REP, RepType, concat_features, decompose_matrices
from meshwss.mesh import AdjacencyGraph, TriangleMesh, ball_neighbors, mean_edge_length

FLATTENED = "flattened"
IRREPS = "irreps"
N_INPUT_CHANNELS = 28
IRREP_INPUT_REP = MATRIX_REP + MATRIX_REP + MATRIX_REP + RepType([(0, 1)])


@dataclasses.dataclass(frozen=True)
class FeatureRecipe:
    """``radius=None`` means twice the mean edge length of each mesh."""

    radius: float | None = None
    weighting: str = "gaussian"
    include_inlet_distance: bool = True
    form: str = FLATTENED

    def __post_init__(self):
        if self.radius is not None and self.radius <= 0:
            raise ConfigurationError("feature ball radius must be positive")
        if self.weighting not in ("gaussian", "uniform"):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")
        if self.form not in (FLATTENED, IRREPS):
            raise ConfigurationError(f"unknown feature form {self.form!r}")

    def resolve_radius(self, graph: AdjacencyGraph) -> float:
        return self.radius if self.radius is not None else 2.0 * mean_edge_length(graph)

    @property
    def n_channels(self) -> int:
        return 27 + int(self.include_inlet_distance)

    @property
    def rep(self) -> RepType:
        base = MATRIX_REP + MATRIX_REP + MATRIX_REP
        return base + RepType([(0, 1)]) if self.include_inlet_distance else base


def _weights(dist: np.ndarray, radius: float, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return np.ones_like(dist)
    sigma = radius / 2.0
    return np.exp(-dist**2 / (2.0 * sigma**2))


def local_moments(mesh: TriangleMesh, graph: AdjacencyGraph, p: int, recipe: FeatureRecipe,
                  normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean offset (mm) and weighted mean normal over the ball around ``p``."""
    radius = recipe.resolve_radius(graph)
    q = ball_neighbors(mesh, p, radius, graph)
    offsets = mesh.positions[q] - mesh.positions[p]
    w = _weights(np.linalg.norm(offsets, axis=1), radius, recipe.weighting)
    w = w / w.sum()
    return w @ offsets, w @ normals[q]


def all_local_moments(mesh: TriangleMesh, graph: AdjacencyGraph, recipe: FeatureRecipe,
                      normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`local_moments` for every vertex."""
    pos = mesh.positions
    n = len(pos)
    radius = recipe.resolve_radius(graph)
    pairs = cKDTree(pos).query_pairs(radius * (1 + 1e-9), output_type="ndarray")
    if len(pairs):
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
        offs = pos[pairs[:, 1]] - pos[pairs[:, 0]]
        inside = np.linalg.norm(offs, axis=1) <= radius
        pairs = pairs[inside]
    centre, other = (pairs[:, 0], pairs[:, 1]) if len(pairs) else (np.zeros(0, int), np.zeros(0, int))
    lonely = np.setdiff1d(np.arange(n), centre)
    if len(lonely):
        gc, gn = graph.edge_list()
        sel = np.isin(gc, lonely)
        centre = np.concatenate([centre, gc[sel]])
        other = np.concatenate([other, gn[sel]])
    order = np.lexsort((other, centre))
    centre, other = centre[order], other[order]
    offsets = pos[other] - pos[centre]
    w = _weights(np.linalg.norm(offsets, axis=1), radius, recipe.weighting)
    total = np.bincount(centre, weights=w, minlength=n)
    w = w / total[centre]
    d_bar = np.zeros((n, 3))
    n_bar = np.zeros((n, 3))
    np.add.at(d_bar, centre, w[:, None] * offsets)
    np.add.at(n_bar, centre, w[:, None] * normals[other])
    return d_bar, n_bar


def outer_features(d_bar: np.ndarray, n_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(d d^T, n n^T, d n^T)``; works on single vectors or row stacks."""
    d_bar, n_bar = np.asarray(d_bar, dtype=np.float64), np.asarray(n_bar, dtype=np.float64)
    return (np.einsum("...i,...j->...ij", d_bar, d_bar),
            np.einsum("...i,...j->...ij", n_bar, n_bar),
            np.einsum("...i,...j->...ij", d_bar, n_bar))


def build_inputs(mesh: TriangleMesh, graph: AdjacencyGraph, normals: np.ndarray, recipe: FeatureRecipe,
                 frames: Frames | None = None, inlet_distance: np.ndarray | None = None):
    """Input feature array and its type (``None`` for flattened Euclidean features)."""
    if recipe.include_inlet_distance and inlet_distance is None:
        from meshwss.geodesy import inlet_distance_feature
        inlet_distance = inlet_distance_feature(mesh, graph)
    d_bar, n_bar = all_local_moments(mesh, graph, recipe, normals)
    mats = outer_features(d_bar, n_bar)
    if recipe.form == FLATTENED:
        cols = [m.reshape(len(d_bar), 9) for m in mats]
        if recipe.include_inlet_distance:
            cols.append(inlet_distance[:, None])
        return np.concatenate(cols, axis=1), None
    if frames is None:
        raise ConfigurationError("irrep features need tangent frames")
    parts = [decompose_matrices(m, frames) for m in mats]
    reps = [MATRIX_REP] * 3
    if recipe.include_inlet_distance:
        parts.append(inlet_distance[:, None])
        reps.append(RepType([(0, 1)]))
    return concat_features(parts, reps)
