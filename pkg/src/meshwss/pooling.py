"""Vertex-subset hierarchy with geodesic clusters and transport-aware (un)pooling."""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import torch

from meshwss.conv import MessageGraph, rotate_irreps
from meshwss.exceptions import ConfigurationError
from meshwss.gauge import Frames, RepType, tangent_angles, transport_angles, TWO_PI
from meshwss.geodesy import assign_clusters, geodesic_distances, select_subset
from meshwss.mesh import AdjacencyGraph, TriangleMesh

MIN_LEVEL_SIZE = 4
DEFAULT_RATIOS = (1 / 4, 1 / 16, 1 / 64)


@dataclasses.dataclass(eq=False)
class PoolingLevel:
    """Clusters mapping level ``i - 1`` onto level ``i``.

    Indices are local: ``center_of[k]`` is the position in ``vertices`` (level
    i) of the center of the k-th vertex of level i - 1, and ``gamma[k]`` the
    transport angle carrying that member's coefficients into the center gauge.
    """

    vertices: np.ndarray
    center_of: np.ndarray
    gamma: np.ndarray
    path_length: np.ndarray


@dataclasses.dataclass(eq=False)
class PoolingHierarchy:
    levels: list  # list[np.ndarray] of mesh vertex ids, levels[0] = all vertices
    pools: list  # list[PoolingLevel], pools[i - 1] maps level i-1 -> i
    edges: list  # per level (centre, nbr) local index arrays

    @property
    def sizes(self) -> list[int]:
        return [len(v) for v in self.levels]

    def assignment(self, level: int) -> dict[int, int]:
        """Mesh-id map from level ``level - 1`` vertices to level ``level`` centers."""
        pool = self.pools[level - 1]
        parent = self.levels[level - 1]
        return {int(v): int(pool.vertices[c]) for v, c in zip(parent, pool.center_of)}


def _path_transport(frames: Frames, member: int, center: int, pred: np.ndarray, edge_gamma) -> tuple[float, int]:
    """Sum edge transports along the shortest-path tree from ``member`` to ``center``."""
    total, hops, v = 0.0, 0, member
    while v != center:
        u = int(pred[v])
        if u < 0:
            raise ConfigurationError(f"vertex {member} is not connected to its cluster center {center}")
        total += edge_gamma(u, v)
        hops += 1
        v = u
    return total, hops


def _coarse_edges(fine_edges, center_of: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centre, nbr = fine_edges
    a, b = center_of[centre], center_of[nbr]
    keep = a != b
    pairs = np.unique(np.stack([a[keep], b[keep]], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def build_hierarchy(mesh: TriangleMesh, graph: AdjacencyGraph, frames: Frames,
                    ratios=DEFAULT_RATIOS, seed: int = 0, subsets=None) -> PoolingHierarchy:
    """Nested farthest-point subsets with nearest-center clusters and transports.

    ``ratios`` are fractions of the full vertex count; level i keeps
    ``ceil(ratios[i - 1] * n)`` vertices. Precomputed ``subsets`` (one sorted
    id array per coarse level, e.g. from a cache) skip the sampling.
    """
    n = mesh.n_vertices
    if subsets is not None:
        sizes = [n] + [len(s) for s in subsets]
    else:
        sizes = [n] + [math.ceil(r * n - 1e-9) for r in ratios]
    for prev, cur in zip(sizes, sizes[1:]):
        if cur > prev:
            raise ConfigurationError(f"pooling ratios must give non-increasing sizes, got {sizes}")
    if min(sizes) < MIN_LEVEL_SIZE:
        raise ConfigurationError(f"a pooling level collapses below {MIN_LEVEL_SIZE} vertices: {sizes}")

    try:
        inlet_d = geodesic_distances(graph, mesh.inlet_vertices)
    except ValueError:
        inlet_d = None

    # transports along mesh edges, cached lazily
    edge_cache: dict[tuple[int, int], float] = {}

    def edge_gamma(u, v):
        key = (u, v)
        if key not in edge_cache:
            edge_cache[key] = float(transport_angles(frames, [u], [v])[0])
        return edge_cache[key]

    centre0, nbr0 = graph.edge_list()
    levels = [np.arange(n)]
    pools, edges = [], [(centre0, nbr0)]
    for lvl, size in enumerate(sizes[1:]):
        parent = levels[-1]
        if subsets is not None:
            subset = np.asarray(subsets[lvl], dtype=np.int64)
            if not np.isin(subset, parent).all():
                raise ConfigurationError(f"cached level {lvl + 1} is not nested in its parent level")
        elif inlet_d is not None:
            start = int(parent[np.argmin(inlet_d[parent])])
        else:
            start = None
        if subsets is None:
            subset = select_subset(graph, parent, size / len(parent), seed=seed, start=start) \
                if size < len(parent) else parent.copy()
        subset = np.sort(subset)
        label, _, pred = assign_clusters(graph, parent, subset)
        local = {int(v): i for i, v in enumerate(subset)}
        center_of = np.array([local[int(label[v])] for v in parent], dtype=np.int64)
        gamma = np.zeros(len(parent))
        hops = np.zeros(len(parent), dtype=np.int64)
        # precompute edge transports for all tree edges in one vectorised call
        members = [int(v) for v in parent if int(label[v]) != int(v)]
        tree_edges = set()
        for v in members:
            w = v
            while w != int(label[v]) and pred[w] >= 0:
                tree_edges.add((int(pred[w]), w))
                w = int(pred[w])
        if tree_edges:
            te = np.array(sorted(tree_edges))
            for (u, w), g in zip(te.tolist(), transport_angles(frames, te[:, 0], te[:, 1])):
                edge_cache[(u, w)] = float(g)
        for k, v in enumerate(parent.tolist()):
            c = int(label[v])
            if c != v:
                g, h = _path_transport(frames, v, c, pred, edge_gamma)
                gamma[k], hops[k] = math.fmod(g, TWO_PI), h
        pools.append(PoolingLevel(subset, center_of, np.mod(gamma, TWO_PI), hops))
        edges.append(_coarse_edges(edges[-1], center_of))
        levels.append(subset)
    return PoolingHierarchy(levels, pools, edges)


def level_message_graph(mesh: TriangleMesh, frames: Frames, hierarchy: PoolingHierarchy, level: int,
                        with_angles: bool, dtype=torch.float32) -> MessageGraph:
    """Message graph on one level; GEM angles are measured in the mesh-vertex gauges."""
    verts = hierarchy.levels[level]
    centre, nbr = hierarchy.edges[level]
    if not with_angles:
        return MessageGraph.from_edges(len(verts), centre, nbr, dtype=dtype)
    pos = mesh.positions
    gc, gn = verts[centre], verts[nbr]
    offsets = pos[gn] - pos[gc]
    proj = offsets - np.sum(offsets * frames.normal[gc], 1, keepdims=True) * frames.normal[gc]
    keep = np.linalg.norm(proj, axis=1) > 1e-9 * np.linalg.norm(offsets, axis=1)
    # coarse edges can span opposite walls of a thin vessel, where transport is undefined
    keep &= np.sum(frames.normal[gc] * frames.normal[gn], axis=1) > -1 + 1e-12
    if not keep.all():
        warnings.warn(f"{int((~keep).sum())} degenerate edges (tangent projection or antiparallel normals) "
                      f"excluded on level {level}", RuntimeWarning)
    centre, nbr, gc, gn = centre[keep], nbr[keep], gc[keep], gn[keep]
    theta = tangent_angles(frames, gc, pos[gn] - pos[gc])
    gamma = transport_angles(frames, gc, gn)
    return MessageGraph.from_edges(len(verts), centre, nbr, theta, gamma, dtype=dtype)


# ---------------------------------------------------------------------------
# pooling operators


@dataclasses.dataclass(eq=False)
class PoolOperator:
    """Torch-side pooling between two levels."""

    n_fine: int
    n_coarse: int
    center_of: torch.Tensor
    gamma: np.ndarray
    _cache: dict = dataclasses.field(default_factory=dict, repr=False)

    @classmethod
    def from_level(cls, pool: PoolingLevel) -> PoolOperator:
        return cls(len(pool.center_of), len(pool.vertices), torch.as_tensor(pool.center_of), pool.gamma)

    def _mean(self, dtype) -> torch.Tensor:
        key = ("mean", dtype)
        if key not in self._cache:
            counts = torch.bincount(self.center_of, minlength=self.n_coarse).to(dtype)
            vals = 1.0 / counts[self.center_of]
            idx = torch.stack([self.center_of, torch.arange(self.n_fine)])
            self._cache[key] = torch.sparse_coo_tensor(idx, vals, (self.n_coarse, self.n_fine), check_invariants=False).coalesce()
        return self._cache[key]

    def _trig(self, max_order: int, sign: float, dtype):
        key = ("trig", max_order, sign, dtype)
        if key not in self._cache:
            ang = sign * self.gamma[:, None] * np.arange(max_order + 1)[None, :]
            self._cache[key] = (torch.as_tensor(np.cos(ang), dtype=dtype), torch.as_tensor(np.sin(ang), dtype=dtype))
        return self._cache[key]

    def pool(self, f: torch.Tensor, rep: RepType | None = None) -> torch.Tensor:
        if rep is not None and rep.max_order > 0:
            f = rotate_irreps(f, rep, *self._trig(rep.max_order, 1.0, f.dtype))
        return torch.sparse.mm(self._mean(f.dtype), f)

    def unpool(self, f: torch.Tensor, rep: RepType | None = None) -> torch.Tensor:
        out = f[self.center_of]
        if rep is not None and rep.max_order > 0:
            out = rotate_irreps(out, rep, *self._trig(rep.max_order, -1.0, f.dtype))
        return out


def pool(f, hierarchy: PoolingHierarchy, level: int, rep: RepType | None = None) -> np.ndarray:
    """Average level ``level - 1`` features onto level ``level`` (transporting irreps first)."""
    op = PoolOperator.from_level(hierarchy.pools[level - 1])
    return op.pool(torch.as_tensor(np.asarray(f, dtype=np.float64)), rep).numpy()


def unpool(f, hierarchy: PoolingHierarchy, level: int, rep: RepType | None = None) -> np.ndarray:
    """Copy level ``level`` features to the members of each cluster on level ``level - 1``."""
    op = PoolOperator.from_level(hierarchy.pools[level - 1])
    return op.unpool(torch.as_tensor(np.asarray(f, dtype=np.float64)), rep).numpy()
