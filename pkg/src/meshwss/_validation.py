"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from meshwss.bundle import MeshBundle
from meshwss.mesh import TriangleMesh


def check_meshes(X) -> tuple[list, bool]:
    """Normalise ``X`` to a list of meshes/bundles; the flag says whether one item was passed."""
    if isinstance(X, (TriangleMesh, MeshBundle)):
        return [X], True
    try:
        items = list(X)
    except TypeError:
        raise TypeError(f"expected a mesh, a bundle or a sequence of them, got {type(X).__name__}") from None
    if not items:
        raise ValueError("empty mesh list")
    for k, item in enumerate(items):
        if not isinstance(item, (TriangleMesh, MeshBundle)):
            raise TypeError(f"item {k} is {type(item).__name__}, not a TriangleMesh or MeshBundle")
    return items, False


def n_vertices(item) -> int:
    return item.n_vertices


def check_targets(y, meshes) -> list[np.ndarray]:
    """One finite ``(n_vertices, 3)`` float64 array per mesh."""
    if isinstance(y, np.ndarray) and y.ndim == 2 and len(meshes) == 1:
        y = [y]
    y = list(y)
    if len(y) != len(meshes):
        raise ValueError(f"got {len(y)} target fields for {len(meshes)} meshes")
    out = []
    for k, (t, m) in enumerate(zip(y, meshes)):
        t = np.asarray(t, dtype=np.float64)
        if t.shape != (n_vertices(m), 3):
            raise ValueError(f"target {k} has shape {t.shape}, expected ({n_vertices(m)}, 3)")
        if not np.all(np.isfinite(t)):
            raise ValueError(f"target {k} contains non-finite values")
        out.append(t)
    return out
