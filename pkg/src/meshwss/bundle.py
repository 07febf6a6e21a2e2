"""Everything a network needs about one mesh, computed once and cached."""

from __future__ import annotations

import dataclasses

import numpy as np
import torch

from meshwss.conv import MessageGraph
from meshwss.features import FLATTENED, IRREPS, FeatureRecipe, build_inputs
from meshwss.gauge import Frames, RepType, build_frames
from meshwss.geodesy import inlet_distance_feature
from meshwss.mesh import AdjacencyGraph, TriangleMesh, build_adjacency, vertex_normals
from meshwss.pooling import (DEFAULT_RATIOS, PoolingHierarchy, PoolOperator, build_hierarchy,
                             level_message_graph)


@dataclasses.dataclass(eq=False)
class MeshBundle:
    mesh: TriangleMesh
    graph: AdjacencyGraph
    normals: np.ndarray
    frames: Frames
    inlet_distance: np.ndarray
    hierarchy: PoolingHierarchy
    recipe: FeatureRecipe
    _features: dict = dataclasses.field(default_factory=dict, repr=False)
    _torch: dict = dataclasses.field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return self.mesh.n_vertices

    def features(self, form: str) -> tuple[np.ndarray, RepType | None]:
        if form not in self._features:
            recipe = dataclasses.replace(self.recipe, form=form)
            self._features[form] = build_inputs(self.mesh, self.graph, self.normals, recipe,
                                                self.frames, self.inlet_distance)
        return self._features[form]

    def message_graph(self, level: int, gem: bool, dtype=torch.float32) -> MessageGraph:
        key = ("graph", level, gem)
        if key not in self._torch:
            self._torch[key] = level_message_graph(self.mesh, self.frames, self.hierarchy, level, gem, dtype)
        return self._torch[key].to(dtype)

    def pool_operator(self, level: int) -> PoolOperator:
        key = ("pool", level)
        if key not in self._torch:
            self._torch[key] = PoolOperator.from_level(self.hierarchy.pools[level - 1])
        return self._torch[key]

    @property
    def n_levels(self) -> int:
        return len(self.hierarchy.levels)


def prepare_mesh(mesh: TriangleMesh, recipe: FeatureRecipe | None = None, ratios=DEFAULT_RATIOS,
                 seed: int = 0, forms=(FLATTENED, IRREPS), subsets=None) -> MeshBundle:
    """Adjacency, normals, gauges, inlet distance, pooling hierarchy and input features."""
    recipe = recipe or FeatureRecipe()
    graph = build_adjacency(mesh)
    normals = vertex_normals(mesh)
    frames = build_frames(mesh, graph, normals)
    inlet = inlet_distance_feature(mesh, graph)
    hierarchy = build_hierarchy(mesh, graph, frames, ratios, seed, subsets)
    bundle = MeshBundle(mesh, graph, normals, frames, inlet, hierarchy, recipe)
    for form in forms:
        bundle.features(form)
    return bundle
