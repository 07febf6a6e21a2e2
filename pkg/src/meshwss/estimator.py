"""scikit-learn style facade: ``WSSRegressor().fit(meshes, fields).predict(meshes)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from meshwss._validation import check_meshes, check_targets
from meshwss.bundle import MeshBundle, prepare_mesh
from meshwss.exceptions import CheckpointError
from meshwss.features import IRREP_INPUT_REP, N_INPUT_CHANNELS, FeatureRecipe
from meshwss.io import config_hash, read_checkpoint, write_checkpoint
from meshwss.metrics import suite_metrics
from meshwss.pooling import DEFAULT_RATIOS
from meshwss.training import Scales, ScaledModel, TrainConfig, train
from meshwss.unet import ARCH_ALIASES, UNetConfig

FORMAT = "meshwss-checkpoint"


class WSSRegressor(BaseEstimator):
    """Mesh U-Net regressor of per-vertex wall-shear-stress vectors.

    ``X`` is a sequence of :class:`TriangleMesh` (with a tagged inlet) or
    prepared :class:`MeshBundle` objects, ``y`` a matching sequence of
    ``(n_vertices, 3)`` arrays in Pa. ``arch`` is ``"sage"``, ``"feast"``
    or ``"gem"``.
    """

    def __init__(self, arch="gem", widths=None, blocks_per_scale=1, max_order=2, frequency_cap=None,
                 relu_samples=None, output_mode=None, heads=1, ratios=DEFAULT_RATIOS, skip_connections=True,
                 feature_radius=None, epochs=100, learning_rate=1e-3, schedule=None, precision="float32",
                 accumulate=1, random_state=0, verbose=False):
        self.arch = arch
        self.widths = widths
        self.blocks_per_scale = blocks_per_scale
        self.max_order = max_order
        self.frequency_cap = frequency_cap
        self.relu_samples = relu_samples
        self.output_mode = output_mode
        self.heads = heads
        self.ratios = ratios
        self.skip_connections = skip_connections
        self.feature_radius = feature_radius
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.precision = precision
        self.accumulate = accumulate
        self.random_state = random_state
        self.verbose = verbose

    # -- configuration -----------------------------------------------------

    def unet_config(self) -> UNetConfig:
        return UNetConfig(variant=ARCH_ALIASES.get(self.arch, self.arch),
                          widths=None if self.widths is None else tuple(self.widths),
                          blocks_per_scale=self.blocks_per_scale, max_order=self.max_order,
                          frequency_cap=self.frequency_cap, relu_samples=self.relu_samples,
                          output_mode=self.output_mode, heads=self.heads, ratios=tuple(self.ratios),
                          skip_connections=self.skip_connections, seed=self.random_state)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.learning_rate, seed=self.random_state,
                           precision=self.precision, accumulate=self.accumulate, schedule=self.schedule)

    def recipe(self) -> FeatureRecipe:
        return FeatureRecipe(radius=self.feature_radius)

    def prepare(self, mesh) -> MeshBundle:
        """Preprocess one mesh (features, gauges, hierarchy) for this estimator."""
        if isinstance(mesh, MeshBundle):
            return mesh
        config = self.unet_config()
        return prepare_mesh(mesh, self.recipe(), config.ratios, forms=(config.feature_form,))

    def _bundles(self, X) -> tuple[list[MeshBundle], bool]:
        items, single = check_meshes(X)
        return [self.prepare(m) for m in items], single

    # -- estimator API -----------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        bundles, _ = self._bundles(X)
        targets = check_targets(y, bundles)
        val = []
        if X_val is not None:
            val_bundles, _ = self._bundles(X_val)
            val = list(zip(val_bundles, check_targets(y_val, val_bundles)))
        log = print if self.verbose else None
        result = train(list(zip(bundles, targets)), val, self.unet_config(), self.train_config(), log=log)
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.n_parameters_ = result.model.net.n_parameters()
        return self

    def predict(self, X):
        """One ``(n_vertices, 3)`` array per mesh (a bare array for a single mesh)."""
        check_is_fitted(self, "model_")
        bundles, single = self._bundles(X)
        preds = [self.model_.predict(b) for b in bundles]
        return preds[0] if single else preds

    def score(self, X, y) -> float:
        """Negative NMAE in percent (higher is better)."""
        preds = self.predict(X)
        bundles, single = check_meshes(X)
        preds = [preds] if single else preds
        return -suite_metrics(preds, check_targets(y, bundles)).nmae

    # -- persistence -------------------------------------------------------

    def _header(self) -> dict:
        params = self.get_params()
        params["ratios"] = list(params["ratios"])
        if params["widths"] is not None:
            params["widths"] = list(params["widths"])
        config = self.unet_config()
        layout = {"form": config.feature_form, "n_channels": int(len(self.model_.scales.inputs)),
                  "recipe": {"radius": self.feature_radius, "weighting": "gaussian", "inlet_distance": True}}
        header = {"format": FORMAT, "estimator": params, "unet": config.to_dict(),
                  "train": self.train_config().to_dict(), "scales": self.model_.scales.to_dict(),
                  "feature_layout": layout, "best_epoch": self.best_epoch_,
                  "n_parameters": self.n_parameters_}
        header["config_hash"] = config_hash({k: header[k] for k in ("unet", "feature_layout")})
        return header

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        write_checkpoint(path, self._header(), self.model_.get_flat())

    @classmethod
    def load(cls, path) -> WSSRegressor:
        header, params = read_checkpoint(path)
        if header.get("format") != FORMAT:
            raise CheckpointError(f"{path}: not a regressor checkpoint")
        kwargs = dict(header["estimator"])
        kwargs["ratios"] = tuple(kwargs["ratios"])
        if kwargs["widths"] is not None:
            kwargs["widths"] = tuple(kwargs["widths"])
        est = cls(**kwargs)
        config = est.unet_config()
        if config.to_dict() != header["unet"]:
            raise CheckpointError(f"{path}: network description does not match the estimator parameters")
        model = ScaledModel(config, Scales.from_dict(header["scales"]), est.train_config().dtype)
        if len(model.scales.inputs) != header["feature_layout"]["n_channels"]:
            raise CheckpointError(f"{path}: feature layout mismatch")
        model.set_flat(params.astype(np.float64))
        est.model_ = model
        est.history_ = []
        est.best_epoch_ = header.get("best_epoch", 0)
        est.n_parameters_ = model.net.n_parameters()
        est.checkpoint_header_ = header
        return est

    @classmethod
    def initialised(cls, scales: Scales | None = None, **params) -> WSSRegressor:
        """An untrained estimator with its network built (useful for export and timing)."""
        est = cls(**params)
        config = est.unet_config()
        if scales is None:
            scales = Scales(np.ones(IRREP_INPUT_REP.dim if config.is_gem else N_INPUT_CHANNELS), 1.0)
        est.model_ = ScaledModel(config, scales, est.train_config().dtype)
        est.history_ = []
        est.best_epoch_ = 0
        est.n_parameters_ = est.model_.net.n_parameters()
        return est
