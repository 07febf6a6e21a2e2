"""Training loop: one mesh per step, Adam on the flat parameter vector."""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import torch

from meshwss.autodiff import AdamState, adam_step, backward, mse_loss
from meshwss.bundle import MeshBundle
from meshwss.exceptions import ConfigurationError
from meshwss.metrics import suite_metrics
from meshwss.unet import UNetConfig, WSSNet, flatten_params, unflatten_params

PRECISIONS = {"float32": torch.float32, "float64": torch.float64}


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    seed: int = 0
    precision: str = "float32"
    deterministic: bool = True
    split: tuple = (0.8, 0.1, 0.1)
    accumulate: int = 1
    schedule: str | None = None  # None or "cosine"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigurationError("learning rate must be >= 0")
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"precision must be one of {sorted(PRECISIONS)}")
        if len(self.split) != 3 or min(self.split) < 0 or not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ConfigurationError(f"split fractions must be three non-negative numbers summing to 1, got {self.split}")
        if self.accumulate < 1:
            raise ConfigurationError("accumulate must be >= 1")
        if self.schedule not in (None, "cosine"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")

    @property
    def dtype(self) -> torch.dtype:
        return PRECISIONS[self.precision]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["split"], d["betas"] = list(self.split), list(self.betas)
        return d


def split_indices(count: int, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded shuffle into train/val/test; sizes are rounded fractions with test taking the rest."""
    perm = np.random.default_rng(seed).permutation(count)
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    n_val = min(n_val, count - n_train)
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:])}


# ---------------------------------------------------------------------------
# scaling


@dataclasses.dataclass
class Scales:
    """Multiplicative input and output scales (no shifts, so equivariance is kept)."""

    inputs: np.ndarray
    output: float

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.tolist(), "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> Scales:
        return cls(np.asarray(d["inputs"], dtype=np.float64), float(d["output"]))


def _column_groups(config: UNetConfig, n_cols: int, rep) -> list[np.ndarray]:
    if not config.is_gem:
        return [np.array([c]) for c in range(n_cols)]
    groups = []
    for n, m, start, stop in rep.blocks():
        width = 1 if n == 0 else 2
        groups += [np.arange(start + width * i, start + width * (i + 1)) for i in range(m)]
    return groups


def fit_scales(config: UNetConfig, bundles: list[MeshBundle], targets) -> Scales:
    feats = [b.features(config.feature_form) for b in bundles]
    stacked = np.concatenate([f for f, _ in feats])
    groups = _column_groups(config, stacked.shape[1], feats[0][1])
    scale = np.ones(stacked.shape[1])
    rms = [math.sqrt(float(np.mean(np.sum(stacked[:, g] ** 2, axis=1)))) for g in groups]
    # groups that vanish up to rounding (antisymmetric parts of symmetric products)
    # are zeroed; rescaling them would blow rounding noise up to unit size
    dead = 1e-10 * max(rms, default=0.0)
    for g, r in zip(groups, rms):
        scale[g] = 1.0 / r if r > dead else 0.0
    t = np.concatenate([np.asarray(y) for y in targets])
    rms_t = math.sqrt(float(np.mean(np.sum(t**2, axis=1))))
    return Scales(scale, rms_t if rms_t > 0 else 1.0)


# ---------------------------------------------------------------------------
# model wrapper


class ScaledModel:
    """A :class:`WSSNet` plus the scales mapping raw features to Pa outputs."""

    def __init__(self, config: UNetConfig, scales: Scales, dtype=torch.float32):
        self.config = config
        self.scales = scales
        self.dtype = dtype
        self.net = WSSNet(config).to(dtype)

    @property
    def params(self) -> list[torch.Tensor]:
        return list(self.net.parameters())

    def inputs(self, bundle: MeshBundle) -> torch.Tensor:
        feats, _ = bundle.features(self.config.feature_form)
        return torch.as_tensor(feats * self.scales.inputs, dtype=self.dtype)

    def forward_scaled(self, bundle: MeshBundle) -> torch.Tensor:
        return self.net(bundle, self.inputs(bundle))

    def predict(self, bundle: MeshBundle) -> np.ndarray:
        with torch.no_grad():
            out = self.forward_scaled(bundle)
        return out.to(torch.float64).numpy() * self.scales.output

    def get_flat(self) -> np.ndarray:
        return flatten_params(self.net)

    def set_flat(self, flat) -> None:
        unflatten_params(self.net, flat)


@dataclasses.dataclass
class TrainResult:
    model: ScaledModel
    history: list  # (epoch, train_loss, val_nmae, seconds)
    best_epoch: int
    best_params: np.ndarray
    final_params: np.ndarray

    def history_table(self) -> str:
        lines = ["epoch | train-loss | val-NMAE [%]"]
        lines += [f"{e} | {loss:.6e} | {nmae:.4f}" for e, loss, nmae, _ in self.history]
        return "\n".join(lines) + "\n"


def evaluate_nmae(model: ScaledModel, bundles, targets) -> float:
    if not bundles:
        return float("nan")
    return suite_metrics([model.predict(b) for b in bundles], targets).nmae


def train(train_set, val_set, config: UNetConfig, train_config: TrainConfig = TrainConfig(),
          scales: Scales | None = None, init_params=None, log=None) -> TrainResult:
    """Fit a network on ``(bundle, target)`` pairs.

    The returned model holds the parameters of the epoch with the lowest
    validation NMAE (the last epoch when there is no validation data).
    """
    train_set, val_set = list(train_set), list(val_set)
    if not train_set:
        raise ConfigurationError("training split is empty")
    tc = train_config
    if tc.deterministic:
        torch.manual_seed(tc.seed)
    bundles = [b for b, _ in train_set]
    targets = [np.asarray(t, dtype=np.float64) for _, t in train_set]
    scales = scales or fit_scales(config, bundles, targets)
    model = ScaledModel(config, scales, tc.dtype)
    if init_params is not None:
        model.set_flat(init_params)
    params = model.get_flat()
    state = AdamState.zeros(len(params), lr=tc.lr, beta1=tc.betas[0], beta2=tc.betas[1], eps=tc.eps)
    scaled_targets = [torch.as_tensor(t / scales.output, dtype=tc.dtype) for t in targets]
    val_bundles = [b for b, _ in val_set]
    val_targets = [np.asarray(t, dtype=np.float64) for _, t in val_set]
    rng = np.random.default_rng(tc.seed)
    history = []
    best = (math.inf, 0, params.copy())
    total_steps = max(1, tc.epochs * math.ceil(len(train_set) / tc.accumulate))
    step = 0
    for epoch in range(1, tc.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for chunk in range(0, len(order), tc.accumulate):
            grads = np.zeros_like(params)
            for k in order[chunk:chunk + tc.accumulate]:
                loss = mse_loss(model.forward_scaled(bundles[k]), scaled_targets[k])
                grads += backward(loss, model.params)
                losses.append(loss.item())
            grads /= len(order[chunk:chunk + tc.accumulate])
            lr = tc.lr
            if tc.schedule == "cosine":
                lr = 0.5 * tc.lr * (1 + math.cos(math.pi * step / total_steps))
            params, state = adam_step(params, grads, state, lr)
            model.set_flat(params)
            step += 1
        val_nmae = evaluate_nmae(model, val_bundles, val_targets)
        train_loss = float(np.mean(losses))
        history.append((epoch, train_loss, val_nmae, time.perf_counter() - start))
        score = val_nmae if val_bundles else -epoch
        if score < best[0] or (not val_bundles):
            best = (score, epoch, model.get_flat().copy())
        if log is not None:
            log(f"epoch {epoch:4d}  train-loss {train_loss:.4e}  val-NMAE {val_nmae:.3f} %")
    final = model.get_flat()
    model.set_flat(best[2])
    return TrainResult(model, history, best[1], best[2], final)
