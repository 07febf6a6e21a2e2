"""Tangent frames (gauges), neighbour angles, parallel transport and SO(2) irreps."""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable, Sequence

import numpy as np

from meshwss.exceptions import FrameError, TransportError
from meshwss.mesh import AdjacencyGraph, TriangleMesh

TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class RepType:
    """Ordered ``(order, multiplicity)`` list of SO(2) irreps.

    Features are laid out block by block in the listed order; within the
    block of order ``n >= 1`` copy ``i`` occupies columns ``2i, 2i + 1``.
    """

    irreps: tuple[tuple[int, int], ...]

    def __init__(self, irreps: Iterable[tuple[int, int]] = ()):
        cleaned = tuple((int(n), int(m)) for n, m in irreps if int(m) > 0)
        orders = [n for n, _ in cleaned]
        if any(n < 0 for n in orders):
            raise ValueError("irrep orders must be non-negative")
        if len(set(orders)) != len(orders):
            raise ValueError(f"duplicate irrep order in {cleaned}")
        object.__setattr__(self, "irreps", cleaned)

    @classmethod
    def regular(cls, max_order: int, multiplicity: int) -> RepType:
        return cls((n, multiplicity) for n in range(max_order + 1))

    @property
    def dim(self) -> int:
        return sum(irrep_dim(n) * m for n, m in self.irreps)

    @property
    def max_order(self) -> int:
        return max((n for n, _ in self.irreps), default=0)

    def multiplicity(self, order: int) -> int:
        return dict(self.irreps).get(order, 0)

    def blocks(self):
        """Yield ``(order, multiplicity, start, stop)`` column ranges."""
        start = 0
        for n, m in self.irreps:
            stop = start + irrep_dim(n) * m
            yield n, m, start, stop
            start = stop

    def __add__(self, other: RepType) -> RepType:
        mult = dict(self.irreps)
        for n, m in other.irreps:
            mult[n] = mult.get(n, 0) + m
        return RepType(sorted(mult.items()))

    def to_list(self) -> list[list[int]]:
        return [[n, m] for n, m in self.irreps]

    def __repr__(self):
        return "RepType(" + " + ".join(f"{m}x rho{n}" for n, m in self.irreps) + ")"


def irrep_dim(order: int) -> int:
    return 1 if order == 0 else 2


def irrep_matrix(order: int, angle: float) -> np.ndarray:
    """Matrix of the SO(2) irrep of the given order evaluated at ``angle``."""
    if order == 0:
        return np.ones((1, 1))
    c, s = math.cos(order * angle), math.sin(order * angle)
    return np.array([[c, -s], [s, c]])


def rep_matrix(rep: RepType, angle: float) -> np.ndarray:
    """Block-diagonal action of ``rep`` at ``angle`` in the feature layout."""
    out = np.zeros((rep.dim, rep.dim))
    for n, m, start, _ in rep.blocks():
        d = irrep_dim(n)
        block = irrep_matrix(n, angle)
        for i in range(m):
            s = start + d * i
            out[s:s + d, s:s + d] = block
    return out


def rotate_features(values: np.ndarray, rep: RepType, angles) -> np.ndarray:
    """Apply ``rep(angle)`` row-wise; ``angles`` is a scalar or one per row."""
    values = np.asarray(values, dtype=np.float64)
    out = values.copy()
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), values.shape[:1])
    for n, m, start, stop in rep.blocks():
        if n == 0:
            continue
        c, s = np.cos(n * angles)[:, None], np.sin(n * angles)[:, None]
        x = values[:, start:stop:2]
        y = values[:, start + 1:stop:2]
        out[:, start:stop:2] = c * x - s * y
        out[:, start + 1:stop:2] = s * x + c * y
    return out


@dataclasses.dataclass(frozen=True, eq=False)
class Frames:
    """Per-vertex orthonormal right-handed frames ``e1 x e2 = n``."""

    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    reference: np.ndarray

    def __len__(self):
        return len(self.normal)

    def rotated_gauges(self, angles) -> Frames:
        """Frames with each gauge turned by ``angles`` (radians) about its normal."""
        a = np.broadcast_to(np.asarray(angles, dtype=np.float64), (len(self),))[:, None]
        e1 = np.cos(a) * self.e1 + np.sin(a) * self.e2
        e2 = -np.sin(a) * self.e1 + np.cos(a) * self.e2
        return Frames(e1, e2, self.normal, np.full(len(self), -1))

    def subset(self, vertices) -> Frames:
        v = np.asarray(vertices)
        return Frames(self.e1[v], self.e2[v], self.normal[v], self.reference[v])


def _project(vecs: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return vecs - np.sum(vecs * normals, axis=1, keepdims=True) * normals


def build_frames(mesh: TriangleMesh, graph: AdjacencyGraph, normals: np.ndarray) -> Frames:
    """Gauge at each vertex from its first neighbour with a usable tangent projection."""
    pos = mesh.positions
    centre, nbr = graph.edge_list()
    proj = _project(pos[nbr] - pos[centre], normals[centre])
    pnorm = np.linalg.norm(proj, axis=1)
    valid = pnorm > 1e-9 * graph.lengths
    n = mesh.n_vertices
    # first valid neighbour per vertex in CSR (ascending) order
    first = np.full(n, -1, dtype=np.int64)
    idx = np.flatnonzero(valid)[::-1]
    first[centre[idx]] = idx
    missing = np.flatnonzero(first < 0)
    if len(missing):
        raise FrameError(f"no neighbour with a non-degenerate tangent projection at vertex {int(missing[0])}")
    e1 = proj[first] / pnorm[first][:, None]
    e2 = np.cross(normals, e1)
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    return Frames(e1, e2, normals.copy(), nbr[first])


def tangent_angles(frames: Frames, centre: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Angles in [0, 2pi) of the tangent projections of ``offsets`` in the frames at ``centre``."""
    x = np.sum(offsets * frames.e1[centre], axis=1)
    y = np.sum(offsets * frames.e2[centre], axis=1)
    return np.mod(np.arctan2(y, x), TWO_PI)


def neighbor_angles(frames: Frames, p: int, graph: AdjacencyGraph, positions: np.ndarray) -> np.ndarray:
    """Orientation angle of every neighbour of ``p`` in the gauge at ``p``."""
    nbrs = graph.neighbors(p)
    offsets = positions[nbrs] - positions[p]
    return tangent_angles(frames, np.full(len(nbrs), p), offsets)


def transport_angles(frames: Frames, p, q) -> np.ndarray:
    """Angle of the transporter carrying gauge-q coefficients into gauge p.

    The tangent plane at q is rotated onto the one at p by the minimal
    rotation taking ``n(q)`` to ``n(p)``; the result is the angle of the
    rotated ``e1(q)`` measured in the frame at p.
    """
    p = np.atleast_1d(np.asarray(p))
    q = np.atleast_1d(np.asarray(q))
    n_p, n_q = frames.normal[p], frames.normal[q]
    e1q = frames.e1[q]
    cos = np.sum(n_p * n_q, axis=1)
    if (cos <= -1 + 1e-12).any():
        bad = int(np.flatnonzero(cos <= -1 + 1e-12)[0])
        raise TransportError(f"antiparallel normals between vertices {int(p[bad])} and {int(q[bad])}")
    axis = np.cross(n_q, n_p)
    # Rodrigues with the axis unnormalised: R v = v cos + (k x v) + k (k.v) / (1 + cos)
    kv = np.sum(axis * e1q, axis=1, keepdims=True)
    moved = e1q * cos[:, None] + np.cross(axis, e1q) + axis * kv / (1.0 + cos[:, None])
    x = np.sum(moved * frames.e1[p], axis=1)
    y = np.sum(moved * frames.e2[p], axis=1)
    return np.mod(np.arctan2(y, x), TWO_PI)


def transport_angle(frames: Frames, p: int, q: int) -> float:
    return float(transport_angles(frames, [p], [q])[0])


# ---------------------------------------------------------------------------
# Euclidean -> irrep decomposition

VECTOR_REP = RepType([(0, 1), (1, 1)])
MATRIX_REP = RepType([(0, 3), (1, 2), (2, 1)])


def decompose_vectors(vectors: np.ndarray, frames: Frames) -> np.ndarray:
    """3-vectors -> ``[v.n | v.e1, v.e2]`` laid out as :data:`VECTOR_REP`."""
    v = np.atleast_2d(vectors)
    return np.stack([np.sum(v * frames.normal, 1), np.sum(v * frames.e1, 1), np.sum(v * frames.e2, 1)], axis=1)


def decompose_matrices(mats: np.ndarray, frames: Frames) -> np.ndarray:
    """3x3 matrices -> 3 scalars, 2 rho1 and 1 rho2 components (:data:`MATRIX_REP`).

    Scalars: ``n.Mn``, tangential trace, tangential antisymmetric part.
    rho1: tangential parts of ``Mn`` and ``M^T n``. rho2: ``(a, b)`` of the
    symmetric traceless tangential block ``[[a, b], [b, -a]]``.
    """
    mats = np.asarray(mats, dtype=np.float64).reshape(-1, 3, 3)
    basis = np.stack([frames.e1, frames.e2, frames.normal], axis=2)  # columns e1, e2, n
    local = np.einsum("vji,vjk,vkl->vil", basis, mats, basis)  # B^T M B
    t = local[:, :2, :2]
    out = np.empty((len(mats), MATRIX_REP.dim))
    out[:, 0] = local[:, 2, 2]
    out[:, 1] = t[:, 0, 0] + t[:, 1, 1]
    out[:, 2] = 0.5 * (t[:, 1, 0] - t[:, 0, 1])
    out[:, 3:5] = local[:, :2, 2]
    out[:, 5:7] = local[:, 2, :2]
    out[:, 7] = 0.5 * (t[:, 0, 0] - t[:, 1, 1])
    out[:, 8] = 0.5 * (t[:, 0, 1] + t[:, 1, 0])
    return out


def concat_features(parts: Sequence[np.ndarray], reps: Sequence[RepType]) -> tuple[np.ndarray, RepType]:
    """Concatenate irrep-typed blocks, regrouping columns by irrep order."""
    total = RepType()
    for rep in reps:
        total = total + rep
    out = np.empty((parts[0].shape[0], total.dim), dtype=np.result_type(*parts))
    cursor = {n: start for n, _, start, _ in total.blocks()}
    for values, rep in zip(parts, reps):
        for n, _, start, stop in rep.blocks():
            width = stop - start
            out[:, cursor[n]:cursor[n] + width] = values[:, start:stop]
            cursor[n] += width
    return out, total


def concat_permutation(reps: Sequence[RepType]) -> tuple[np.ndarray, RepType]:
    """Column permutation mapping naive concatenation onto :func:`concat_features` layout."""
    dims = [rep.dim for rep in reps]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    naive = np.arange(offsets[-1])[None, :].astype(np.float64)
    parts = [naive[:, offsets[i]:offsets[i + 1]] for i in range(len(reps))]
    perm, total = concat_features(parts, reps)
    return perm[0].astype(np.int64), total
