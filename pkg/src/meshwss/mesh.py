"""Triangle surface meshes: storage, adjacency, normals, validation and OBJ IO."""

from __future__ import annotations

import dataclasses
from collections import defaultdict
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from meshwss.exceptions import MeshError

INLET = "inlet"
OUTLET = "outlet"
UNTAGGED = "untagged"
_TAGS = (INLET, OUTLET, UNTAGGED)


@dataclasses.dataclass(frozen=True)
class BoundaryLoop:
    vertices: tuple[int, ...]
    tag: str = UNTAGGED

    def __post_init__(self):
        if self.tag not in _TAGS:
            raise ValueError(f"unknown boundary tag {self.tag!r}")


@dataclasses.dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Surface mesh with positions in mm and counterclockwise (outward) triangles."""

    positions: np.ndarray
    triangles: np.ndarray
    boundary_loops: tuple[BoundaryLoop, ...] = ()

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise MeshError(f"positions must have shape (n, 3), got {pos.shape}")
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise MeshError(f"triangles must have shape (m, 3), got {tri.shape}")
        pos.flags.writeable = False
        tri.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "boundary_loops", tuple(self.boundary_loops))

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def loops_tagged(self, tag: str) -> list[BoundaryLoop]:
        return [loop for loop in self.boundary_loops if loop.tag == tag]

    @property
    def inlet_vertices(self) -> np.ndarray:
        inlets = self.loops_tagged(INLET)
        if not inlets:
            raise MeshError("mesh has no boundary loop tagged 'inlet'")
        return np.asarray(inlets[0].vertices, dtype=np.int64)

    def with_positions(self, positions) -> TriangleMesh:
        return TriangleMesh(positions, self.triangles, self.boundary_loops)

    def with_loops(self, loops) -> TriangleMesh:
        return TriangleMesh(self.positions, self.triangles, tuple(loops))

    def rotated(self, rotation: np.ndarray) -> TriangleMesh:
        return self.with_positions(self.positions @ np.asarray(rotation).T)

    def translated(self, offset) -> TriangleMesh:
        return self.with_positions(self.positions + np.asarray(offset, dtype=np.float64))


@dataclasses.dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Symmetric vertex adjacency in CSR layout, neighbours sorted ascending.

    ``neighbors(p)`` is ``indices[indptr[p]:indptr[p + 1]]`` and the matching
    slice of ``lengths`` holds the Euclidean edge lengths.
    """

    indptr: np.ndarray
    indices: np.ndarray
    lengths: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_directed_edges(self) -> int:
        return len(self.indices)

    def neighbors(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p]:self.indptr[p + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed edges as (centre, neighbour) arrays in CSR order."""
        centre = np.repeat(np.arange(self.n_vertices), self.degree())
        return centre, self.indices.copy()

    def to_scipy(self):
        from scipy.sparse import csr_matrix
        n = self.n_vertices
        return csr_matrix((self.lengths, self.indices, self.indptr), shape=(n, n))


def _edge_faces(triangles: np.ndarray) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Map undirected edge -> list of (face index, +1 if face traverses a->b else -1)."""
    faces = defaultdict(list)
    for f, (i, j, k) in enumerate(triangles.tolist()):
        for a, b in ((i, j), (j, k), (k, i)):
            key = (a, b) if a < b else (b, a)
            faces[key].append((f, 1 if a < b else -1))
    return faces


def triangle_areas(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (positions[triangles[:, i]] for i in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclasses.dataclass
class ValidationReport:
    degenerate_triangles: list[int] = dataclasses.field(default_factory=list)
    invalid_indices: list[int] = dataclasses.field(default_factory=list)
    nonmanifold_edges: list[tuple[int, int]] = dataclasses.field(default_factory=list)
    winding_conflicts: list[tuple[int, int]] = dataclasses.field(default_factory=list)
    loop_problems: list[str] = dataclasses.field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.degenerate_triangles or self.invalid_indices or self.nonmanifold_edges
                    or self.winding_conflicts or self.loop_problems)

    def summary(self) -> str:
        if self.ok:
            return "ok"
        parts = []
        if self.invalid_indices:
            parts.append(f"{len(self.invalid_indices)} triangles with invalid indices")
        if self.degenerate_triangles:
            parts.append(f"degenerate triangles {self.degenerate_triangles[:5]}")
        if self.nonmanifold_edges:
            parts.append(f"non-manifold edges {self.nonmanifold_edges[:5]}")
        if self.winding_conflicts:
            parts.append(f"inconsistent winding at edges {self.winding_conflicts[:5]}")
        parts.extend(self.loop_problems)
        return "; ".join(parts)


def validate(mesh: TriangleMesh) -> ValidationReport:
    """Check every TriangleMesh invariant and report the failures. Never raises."""
    report = ValidationReport()
    pos, tri = mesh.positions, mesh.triangles
    n = len(pos)
    bad_idx = np.flatnonzero(((tri < 0) | (tri >= n)).any(axis=1))
    report.invalid_indices = bad_idx.tolist()
    if len(bad_idx):
        return report
    repeated = (tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])
    areas = triangle_areas(pos, tri)
    scale = max(float(np.ptp(pos, axis=0).max()) if n else 0.0, 1e-300)
    report.degenerate_triangles = np.flatnonzero(repeated | (areas <= 1e-14 * scale**2)).tolist()

    boundary_edges = set()
    for edge, incident in _edge_faces(tri).items():
        if len(incident) > 2:
            report.nonmanifold_edges.append(edge)
        elif len(incident) == 2:
            # consistent orientation: the two faces traverse the edge in opposite directions
            if incident[0][1] == incident[1][1]:
                report.winding_conflicts.append(edge)
        else:
            boundary_edges.add(edge)

    for loop in mesh.boundary_loops:
        verts = loop.vertices
        if len(verts) < 3:
            report.loop_problems.append(f"{loop.tag} loop has fewer than 3 vertices")
            continue
        for a, b in zip(verts, verts[1:] + verts[:1]):
            if (min(a, b), max(a, b)) not in boundary_edges:
                report.loop_problems.append(f"{loop.tag} loop edge ({a}, {b}) is not a boundary edge")
                break
    n_inlet = len(mesh.loops_tagged(INLET))
    if n_inlet != 1:
        report.loop_problems.append(f"expected exactly one inlet loop, found {n_inlet}")
    if not mesh.loops_tagged(OUTLET):
        report.loop_problems.append("expected at least one outlet loop, found 0")
    return report


def build_adjacency(mesh: TriangleMesh) -> AdjacencyGraph:
    """Edge-connected neighbour lists (ascending index) with Euclidean lengths."""
    tri = mesh.triangles
    n = mesh.n_vertices
    if len(tri) and ((tri < 0) | (tri >= n)).any():
        raise MeshError("triangle references a vertex index out of range")
    repeated = (tri[:, 0] == tri[:, 1]) | (tri[:, 1] == tri[:, 2]) | (tri[:, 0] == tri[:, 2])
    if repeated.any():
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(repeated)[0])} reuses a vertex")

    e = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    e.sort(axis=1)
    keys, counts = np.unique(e[:, 0] * n + e[:, 1], return_counts=True)
    if (counts > 2).any():
        k = int(keys[np.argmax(counts > 2)])
        raise MeshError(f"non-manifold edge ({k // n}, {k % n}) shared by more than two triangles")
    a, b = keys // n, keys % n
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    lengths = np.linalg.norm(mesh.positions[dst] - mesh.positions[src], axis=1)
    return AdjacencyGraph(indptr, dst.astype(np.int64), lengths)


def vertex_normals(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    pos, tri = mesh.positions, mesh.triangles
    a, b, c = (pos[tri[:, i]] for i in range(3))
    # cross product magnitude is twice the area, which is the area weighting we want
    face_n = np.cross(b - a, c - a)
    acc = np.zeros_like(pos)
    for i in range(3):
        np.add.at(acc, tri[:, i], face_n)
    norm = np.linalg.norm(acc, axis=1)
    scale = np.linalg.norm(face_n, axis=1).max(initial=0.0)
    bad = np.flatnonzero(norm <= 1e-12 * max(scale, 1e-300))
    if len(bad):
        raise MeshError(f"degenerate normal at vertex {int(bad[0])}")
    return acc / norm[:, None]


def mean_edge_length(graph: AdjacencyGraph) -> float:
    return float(graph.lengths.mean())


def ball_neighbors(mesh: TriangleMesh, p: int, radius: float, graph: AdjacencyGraph | None = None,
                   tree: cKDTree | None = None) -> np.ndarray:
    """Vertices within Euclidean ``radius`` of ``p`` (excluding ``p``), sorted.

    Falls back to the one-ring when the ball holds no other vertex.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pos = mesh.positions
    if tree is None:
        d = np.linalg.norm(pos - pos[p], axis=1)
        found = np.flatnonzero(d <= radius)
    else:
        found = np.asarray(sorted(tree.query_ball_point(pos[p], radius)), dtype=np.int64)
    found = found[found != p]
    if len(found) == 0:
        graph = graph if graph is not None else build_adjacency(mesh)
        return graph.neighbors(p).copy()
    return found


def find_boundary_loops(triangles: np.ndarray) -> list[tuple[int, ...]]:
    """Boundary loops of a consistently oriented mesh, each starting at its lowest index."""
    faces = _edge_faces(np.asarray(triangles))
    nxt = {}
    for (a, b), incident in faces.items():
        if len(incident) == 1:
            # follow the face orientation along the boundary
            nxt[a if incident[0][1] == 1 else b] = b if incident[0][1] == 1 else a
    loops, seen = [], set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, v = [], start
        while v not in seen:
            seen.add(v)
            loop.append(v)
            v = nxt[v]
        loops.append(tuple(loop))
    return loops


def orient_consistently(triangles: np.ndarray) -> np.ndarray:
    """Flip triangles so that winding agrees across every shared edge (per component)."""
    tri = np.array(triangles, dtype=np.int64, copy=True)
    faces = _edge_faces(tri)
    nbrs = defaultdict(list)
    for incident in faces.values():
        if len(incident) == 2:
            (f, _), (g, _) = incident
            nbrs[f].append(g)
            nbrs[g].append(f)
    done = np.zeros(len(tri), dtype=bool)

    def directed(face):
        i, j, k = face
        return {(i, j), (j, k), (k, i)}

    for root in range(len(tri)):
        if done[root]:
            continue
        done[root] = True
        stack = [root]
        while stack:
            f = stack.pop()
            df = directed(tri[f])
            for g in nbrs[f]:
                if done[g]:
                    continue
                if directed(tri[g]) & df:
                    tri[g] = tri[g][::-1]
                done[g] = True
                stack.append(g)
    return tri


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"only triangular faces are supported: {line.strip()!r}")
                faces.append([i - 1 for i in idx])
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3)


def write_obj(path, positions: np.ndarray, triangles: np.ndarray) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(positions, dtype=np.float64).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(triangles).tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, loops=()) -> TriangleMesh:
    pos, tri = read_obj(path)
    return TriangleMesh(pos, tri, tuple(loops))
