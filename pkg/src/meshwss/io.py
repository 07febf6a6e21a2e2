"""On-disk formats: field files, loop sidecars, checkpoints, PLY export, hierarchy caches."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from meshwss.exceptions import CheckpointError, ConfigurationError, MeshError
from meshwss.mesh import BoundaryLoop, TriangleMesh, load_mesh

CHECKPOINT_MAGIC = b"MWSSCKPT"
CHECKPOINT_VERSION = 1
HIERARCHY_MAGIC = 0x4D574843  # "MWHC"
UNITS = {"positions": "mm", "wss": "Pa", "distance": "mm"}


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serialisable object."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# per-vertex fields


def write_field(path, values) -> None:
    """Little-endian float32, row-major, vertex order."""
    np.ascontiguousarray(values, dtype="<f4").tofile(path)


def read_field(path, components: int) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % components:
        raise ConfigurationError(f"{path}: {raw.size} floats is not a multiple of {components}")
    return raw.reshape(-1, components) if components > 1 else raw


# ---------------------------------------------------------------------------
# boundary-loop sidecar


def write_loops(path, loops) -> None:
    write_json(path, {"loops": [{"tag": lp.tag, "vertices": list(lp.vertices)} for lp in loops]})


def read_loops(path) -> tuple[BoundaryLoop, ...]:
    data = read_json(path)
    return tuple(BoundaryLoop(tuple(int(v) for v in lp["vertices"]), lp["tag"]) for lp in data["loops"])


def load_tagged_mesh(mesh_path, loops_path=None) -> TriangleMesh:
    """OBJ mesh plus its loop tags (sidecar defaults to ``<mesh>.loops.json`` or ``loops.json``)."""
    mesh_path = Path(mesh_path)
    if loops_path is None:
        for candidate in (mesh_path.with_suffix(".loops.json"), mesh_path.parent / "loops.json"):
            if candidate.exists():
                loops_path = candidate
                break
    loops = read_loops(loops_path) if loops_path is not None else ()
    return load_mesh(mesh_path, loops)


# ---------------------------------------------------------------------------
# checkpoints


def write_checkpoint(path, header: dict, params) -> None:
    """Magic, u32 version, u32 header length, JSON header, little-endian f32 parameters."""
    params = np.ascontiguousarray(params, dtype="<f4")
    header = dict(header, n_params=int(params.size))
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.tobytes())


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 8 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, size = struct.unpack_from("<II", data, len(CHECKPOINT_MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    start = len(CHECKPOINT_MAGIC) + 8
    try:
        header = json.loads(data[start:start + size].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted checkpoint header") from exc
    params = np.frombuffer(data, dtype="<f4", offset=start + size)
    if params.size != header.get("n_params"):
        raise CheckpointError(f"{path}: expected {header.get('n_params')} parameters, found {params.size}")
    return header, params.astype(np.float32)


# ---------------------------------------------------------------------------
# PLY export


def write_ply(path, mesh: TriangleMesh, field) -> None:
    """Binary little-endian PLY with per-vertex ``wss_x/y/z`` and ``wss_mag``."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape != (mesh.n_vertices, 3):
        raise ConfigurationError(f"field shape {field.shape} does not match {mesh.n_vertices} vertices")
    mag = np.linalg.norm(field, axis=1)
    header = "\n".join([
        "ply", "format binary_little_endian 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x", "property float y", "property float z",
        "property float wss_x", "property float wss_y", "property float wss_z", "property float wss_mag",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices", "end_header", ""])
    verts = np.concatenate([mesh.positions, field, mag[:, None]], axis=1).astype("<f4")
    faces = np.zeros(len(mesh.triangles), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    faces["n"] = 3
    faces["idx"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(verts.tobytes())
        fh.write(faces.tobytes())


def read_ply(path) -> tuple[TriangleMesh, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_ply`: mesh, WSS vectors and magnitudes (float32 precision)."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise MeshError(f"{path}: only binary little-endian PLY is supported")
    counts = {line.split()[1]: int(line.split()[2]) for line in header if line.startswith("element")}
    props = [line.split()[-1] for line in header if line.startswith("property float")]
    n_v, n_f = counts["vertex"], counts.get("face", 0)
    offset = end + len(b"end_header\n")
    verts = np.frombuffer(data, dtype="<f4", count=n_v * len(props), offset=offset).reshape(n_v, len(props))
    offset += verts.nbytes
    faces = np.frombuffer(data, dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=n_f, offset=offset)
    col = {name: k for k, name in enumerate(props)}
    pos = verts[:, [col["x"], col["y"], col["z"]]].astype(np.float64)
    wss = verts[:, [col["wss_x"], col["wss_y"], col["wss_z"]]].astype(np.float64)
    mag = verts[:, col["wss_mag"]].astype(np.float64)
    return TriangleMesh(pos, faces["idx"].astype(np.int64)), wss, mag


# ---------------------------------------------------------------------------
# pooling hierarchy cache


def write_hierarchy_cache(path, subsets) -> None:
    """Little-endian int32: magic, level count, level sizes, then the vertex ids per level."""
    subsets = [np.asarray(s, dtype=np.int64) for s in subsets]
    head = [HIERARCHY_MAGIC, len(subsets)] + [len(s) for s in subsets]
    body = np.concatenate([np.asarray(head, dtype=np.int64)] + subsets)
    if body.max(initial=0) >= 2**31:
        raise ConfigurationError("vertex ids exceed the int32 cache format")
    body.astype("<i4").tofile(path)


def read_hierarchy_cache(path) -> list[np.ndarray]:
    raw = np.fromfile(path, dtype="<i4").astype(np.int64)
    if len(raw) < 2 or raw[0] != HIERARCHY_MAGIC:
        raise ConfigurationError(f"{path}: not a hierarchy cache")
    n = int(raw[1])
    sizes = raw[2:2 + n]
    out, pos = [], 2 + n
    for size in sizes:
        out.append(raw[pos:pos + size])
        pos += size
    if pos != len(raw):
        raise ConfigurationError(f"{path}: truncated hierarchy cache")
    return out
