"""Graph geodesics, inlet distance and vertex-subset selection for pooling.

Distances are shortest paths over the mesh edge graph. Edge lengths are
quantised to integer multiples of ``QUANTUM`` mm before summation so that
path sums are exact in float64: rigid motions of the mesh (which perturb
lengths in the last bits) then cannot flip ties in sampling or clustering.
"""

from __future__ import annotations

import heapq
import math
import warnings

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from meshwss.exceptions import ConfigurationError
from meshwss.mesh import AdjacencyGraph, TriangleMesh

QUANTUM = 1e-9


def _quantised(graph: AdjacencyGraph) -> np.ndarray:
    return np.maximum(np.rint(graph.lengths / QUANTUM), 1.0)


def _csr(graph: AdjacencyGraph) -> csr_matrix:
    n = graph.n_vertices
    return csr_matrix((_quantised(graph), graph.indices, graph.indptr), shape=(n, n))


def geodesic_distances(graph: AdjacencyGraph, sources) -> np.ndarray:
    """Multi-source shortest-path distance (mm) to the nearest source.

    Unreachable vertices get ``inf`` and trigger a warning.
    """
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    if len(sources) == 0:
        raise ConfigurationError("geodesic_distances needs at least one source vertex")
    d = dijkstra(_csr(graph), directed=True, indices=sources, min_only=True)
    if np.isinf(d).any():
        warnings.warn(f"{int(np.isinf(d).sum())} vertices unreachable from the sources", RuntimeWarning)
    return d * QUANTUM


def inlet_distance_feature(mesh: TriangleMesh, graph: AdjacencyGraph) -> np.ndarray:
    """Geodesic distance (mm) from every vertex to the tagged inlet rim."""
    try:
        inlet = mesh.inlet_vertices
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    return geodesic_distances(graph, inlet)


def select_subset(graph: AdjacencyGraph, parent, ratio: float, seed: int = 0,
                  start: int | None = None) -> np.ndarray:
    """Geodesic farthest-point sample of ``ceil(ratio * len(parent))`` parent vertices.

    The first point is ``start`` when given, otherwise drawn from ``parent``
    with ``seed``. Returns vertex ids in pick order.
    """
    parent = np.asarray(parent, dtype=np.int64)
    if len(parent) == 0:
        raise ConfigurationError("parent set is empty")
    if not 0 < ratio <= 1:
        raise ConfigurationError(f"ratio must lie in (0, 1], got {ratio}")
    k = min(len(parent), math.ceil(ratio * len(parent) - 1e-9))
    if k == len(parent):
        return parent.copy()
    if start is None:
        start = int(parent[np.random.default_rng(seed).integers(len(parent))])
    elif start not in set(parent.tolist()):
        raise ConfigurationError(f"start vertex {start} is not in the parent set")

    csr = _csr(graph)
    mind = np.full(graph.n_vertices, np.inf)
    picks = [start]
    for _ in range(k - 1):
        # only vertices closer to the new pick than the current maximum can change
        limit = np.inf if len(picks) == 1 else float(mind[parent].max())
        d = dijkstra(csr, directed=True, indices=picks[-1], limit=limit)
        np.minimum(mind, d, out=mind)
        nxt = int(parent[np.argmax(mind[parent])])
        picks.append(nxt)
    return np.asarray(picks, dtype=np.int64)


def assign_clusters(graph: AdjacencyGraph, parent, centers):
    """Nearest-center assignment with its shortest-path tree.

    Returns ``(assignment, distance, predecessor)``; ``assignment[v]`` is the
    center for every vertex reachable in the graph (ties go to the lower
    center index), ``predecessor`` walks each vertex back to its center.
    """
    centers = np.asarray(centers, dtype=np.int64)
    if len(centers) == 0:
        raise ConfigurationError("cluster assignment needs at least one center")
    parent = np.asarray(parent, dtype=np.int64)
    if not np.isin(centers, parent).all():
        raise ConfigurationError("centers must be a subset of the parent set")

    n = graph.n_vertices
    w = _quantised(graph).tolist()
    indptr, indices = graph.indptr.tolist(), graph.indices.tolist()
    dist = [math.inf] * n
    label = [n] * n
    pred = [-1] * n
    heap = []
    for c in sorted(centers.tolist()):
        dist[c], label[c] = 0.0, c
        heap.append((0.0, c, c))
    heapq.heapify(heap)
    # lexicographic (distance, center) keys give the lower-index tie rule
    while heap:
        d, c, v = heapq.heappop(heap)
        if d > dist[v] or (d == dist[v] and c > label[v]):
            continue
        for e in range(indptr[v], indptr[v + 1]):
            u = indices[e]
            nd = d + w[e]
            if nd < dist[u] or (nd == dist[u] and c < label[u]):
                dist[u], label[u], pred[u] = nd, c, v
                heapq.heappush(heap, (nd, c, u))
    return (np.asarray(label, dtype=np.int64), np.asarray(dist) * QUANTUM,
            np.asarray(pred, dtype=np.int64))


def cluster_assign(graph: AdjacencyGraph, parent, centers) -> dict[int, int]:
    """Map each parent vertex to its geodesically nearest center."""
    label, _, _ = assign_clusters(graph, parent, centers)
    return {int(v): int(label[v]) for v in np.asarray(parent)}
