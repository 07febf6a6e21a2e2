"""Dataset generation and loading (one directory per sample plus a JSON manifest)."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from meshwss.exceptions import ConfigurationError, LoftingError
from meshwss.flow import BIFURCATION_FLOW, SINGLE_FLOW, SURROGATE, FlowParams, surrogate_wss_field
from meshwss.geodesy import inlet_distance_feature
from meshwss.io import (UNITS, config_hash, read_field, read_json, sha256_file, write_field, write_json,
                        write_loops, load_tagged_mesh)
from meshwss.mesh import TriangleMesh, build_adjacency, write_obj
from meshwss.synth import (BIFURCATING, DEFAULT_EDGE_LENGTH, SINGLE, loft_surface, sample_bifurcation,
                           sample_single_artery, spec_from_dict)
from meshwss.training import split_indices

FORMAT_VERSION = 1
MAX_REDRAWS = 25
FIELD_FORMAT = "little-endian float32, row-major, vertex order = OBJ vertex order"


@dataclasses.dataclass(eq=False)
class Sample:
    id: str
    split: str
    mesh: TriangleMesh
    target: np.ndarray
    spec: object = None


def _draw(kind: str, rng: np.random.Generator, edge_length: float):
    sampler = sample_single_artery if kind == SINGLE else sample_bifurcation
    last = None
    for _ in range(MAX_REDRAWS):
        spec = sampler(rng)
        try:
            return spec, loft_surface(spec, edge_length)
        except LoftingError as exc:
            last = exc
    raise LoftingError(f"lofting failed {MAX_REDRAWS} times in a row: {last}")


def generate_dataset(kind: str, count: int, seed: int, out_dir, edge_length: float | None = None,
                     flow: FlowParams | None = None, split=(0.8, 0.1, 0.1)) -> dict:
    """Write ``count`` samples and ``manifest.json`` to ``out_dir``; returns the manifest.

    Every sample uses its own generator seeded from ``(seed, index)``, so the
    output is a pure function of the arguments.
    """
    if kind not in (SINGLE, BIFURCATING):
        raise ConfigurationError(f"kind must be {SINGLE!r} or {BIFURCATING!r}, got {kind!r}")
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    edge_length = float(edge_length or DEFAULT_EDGE_LENGTH[kind])
    flow = flow or (SINGLE_FLOW if kind == SINGLE else BIFURCATION_FLOW)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = split_indices(count, split, seed)
    tag = np.empty(count, dtype=object)
    for name, idx in splits.items():
        tag[idx] = name
    entries = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        spec, mesh = _draw(kind, rng, edge_length)
        wss = surrogate_wss_field(mesh, spec, flow)
        sid = f"sample_{i:04d}"
        d = out / sid
        d.mkdir(exist_ok=True)
        files = {"mesh": f"{sid}/mesh.obj", "loops": f"{sid}/loops.json", "wss": f"{sid}/wss.f32",
                 "inletdist": f"{sid}/inletdist.f32"}
        write_obj(out / files["mesh"], mesh.positions, mesh.triangles)
        write_loops(out / files["loops"], mesh.boundary_loops)
        write_field(out / files["wss"], wss.values)
        write_field(out / files["inletdist"], inlet_distance_feature(mesh, build_adjacency(mesh)))
        spec_dict = spec.to_dict()
        entries.append({
            "id": sid, "split": tag[i], "seed": [seed, i], "n_vertices": mesh.n_vertices,
            "mesh": files["mesh"], "loops": files["loops"],
            "fields": {"wss": files["wss"]}, "feature_cache": {"inletdist": files["inletdist"]},
            "spec": spec_dict, "spec_hash": config_hash(spec_dict),
            "sha256": {k: sha256_file(out / v) for k, v in sorted(files.items())},
        })
    manifest = {
        "format_version": FORMAT_VERSION, "kind": kind, "count": count, "seed": seed,
        "edge_length": edge_length, "split_fractions": list(split),
        "flow": dataclasses.asdict(flow), "units": UNITS, "field_format": FIELD_FORMAT,
        "wss_provenance": SURROGATE,
        "feature_cache": {"inletdist": {"components": 1, "units": "mm",
                                        "meaning": "geodesic distance to the inlet rim"}},
        "samples": entries,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def load_dataset(path, verify: bool = True) -> tuple[dict, list[Sample]]:
    """Manifest and samples of a generated dataset, optionally hash-checking every file."""
    root = Path(path)
    manifest_path = root / "manifest.json" if root.is_dir() else root
    root = manifest_path.parent
    if not manifest_path.exists():
        raise ConfigurationError(f"no manifest at {manifest_path}")
    manifest = read_json(manifest_path)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported dataset format {manifest.get('format_version')}")
    samples = []
    for entry in manifest["samples"]:
        if verify:
            for key, digest in entry["sha256"].items():
                rel = entry["fields"].get(key) or entry["feature_cache"].get(key) or entry[key]
                if sha256_file(root / rel) != digest:
                    raise ConfigurationError(f"{entry['id']}: {rel} does not match its manifest hash")
        mesh = load_tagged_mesh(root / entry["mesh"], root / entry["loops"])
        target = read_field(root / entry["fields"]["wss"], 3).astype(np.float64)
        if len(target) != mesh.n_vertices:
            raise ConfigurationError(f"{entry['id']}: field length does not match the mesh")
        samples.append(Sample(entry["id"], entry["split"], mesh, target, spec_from_dict(entry["spec"])))
    return manifest, samples
