"""Error metrics for predicted WSS fields and the rotated-test-set experiment."""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial.transform import Rotation

METRICS = ("epsilon", "delta_max", "delta_mean")
AGGREGATES = ("mean", "median", "p75")
_LABELS = {"epsilon": "eps [%]", "delta_max": "D_max [Pa]", "delta_mean": "D_mean [Pa]"}


@dataclasses.dataclass(frozen=True)
class SampleMetrics:
    epsilon: float  # fraction
    delta_max: float  # Pa
    delta_mean: float  # Pa
    n_vertices: int


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"need matching (n, 3) arrays, got {pred.shape} and {target.shape}")
    return pred, target


def sample_metrics(pred, target) -> SampleMetrics:
    pred, target = _pair(pred, target)
    delta = np.linalg.norm(pred - target, axis=1)
    norm_l = np.linalg.norm(np.linalg.norm(target, axis=1))
    if norm_l == 0:
        raise ValueError("approximation error is undefined for an all-zero target field")
    return SampleMetrics(float(np.linalg.norm(delta) / norm_l), float(delta.max(initial=0.0)),
                         float(delta.mean()) if len(delta) else 0.0, len(delta))


def aggregate(values) -> dict[str, float]:
    values = np.asarray(values, dtype=np.float64)
    return {"mean": float(values.mean()), "median": float(np.median(values)),
            "p75": float(np.percentile(values, 75))}


@dataclasses.dataclass(frozen=True)
class SuiteMetrics:
    nmae: float  # percent
    samples: tuple
    componentwise: bool = False

    @property
    def aggregates(self) -> dict[str, dict[str, float]]:
        return {name: aggregate([getattr(s, name) for s in self.samples]) for name in METRICS}

    @property
    def median_accuracy(self) -> float:
        """``100 - median eps`` in percent."""
        return 100.0 - 100.0 * self.aggregates["epsilon"]["median"]

    def to_dict(self) -> dict:
        return {"nmae": self.nmae, "componentwise": self.componentwise, "aggregates": self.aggregates,
                "samples": [dataclasses.asdict(s) for s in self.samples]}


def suite_metrics(preds, targets, componentwise: bool = False) -> SuiteMetrics:
    """NMAE pooled over all test vertices plus per-sample metrics.

    The NMAE numerator is the mean vertex error norm; ``componentwise``
    switches to the mean absolute component error instead.
    """
    preds, targets = list(preds), list(targets)
    if not preds or len(preds) != len(targets):
        raise ValueError("need a non-empty test set with one prediction per target")
    pairs = [_pair(p, t) for p, t in zip(preds, targets)]
    diff = np.concatenate([p - t for p, t in pairs])
    scale = max(np.linalg.norm(t, axis=1).max(initial=0.0) for _, t in pairs)
    if scale == 0:
        raise ValueError("NMAE is undefined when every target vanishes")
    err = np.abs(diff).mean() if componentwise else np.linalg.norm(diff, axis=1).mean()
    return SuiteMetrics(float(100.0 * err / scale), tuple(sample_metrics(p, t) for p, t in pairs), componentwise)


def format_table(rows: dict[str, SuiteMetrics]) -> str:
    """Plain-text table: NMAE, then eps / D_max / D_mean as mean, median, 75th."""
    head = ["condition", "NMAE [%]"] + [f"{_LABELS[m]} {a}" for m in METRICS for a in ("mean", "median", "75th")]
    lines = [" | ".join(head)]
    for name, suite in rows.items():
        agg = suite.aggregates
        cells = [name, f"{suite.nmae:.3f}"]
        for m in METRICS:
            factor = 100.0 if m == "epsilon" else 1.0
            cells += [f"{factor * agg[m][a]:.4f}" for a in AGGREGATES]
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"


def random_rotations(k: int, seed: int = 0) -> np.ndarray:
    """``k`` rotation matrices uniform on SO(3) (normalised Gaussian quaternions)."""
    return Rotation.random(k, random_state=seed).as_matrix().reshape(k, 3, 3)


@dataclasses.dataclass(frozen=True)
class RotatedEvaluation:
    original: SuiteMetrics
    rotated: SuiteMetrics

    @property
    def ratio(self) -> float:
        return self.rotated.nmae / self.original.nmae if self.original.nmae > 0 else float("nan")

    def to_dict(self) -> dict:
        return {"original": self.original.to_dict(), "rotated": self.rotated.to_dict(), "ratio": self.ratio}


def rotated_evaluation(predict, meshes, targets, k: int = 1, seed: int = 0, rotations=None,
                       componentwise: bool = False) -> RotatedEvaluation:
    """Evaluate ``predict(mesh) -> (n, 3)`` on the test meshes and on ``k`` rotated copies of each.

    Positions and targets are rotated together; the original condition
    repeats every sample ``k`` times so both conditions pool the same
    number of vertices.
    """
    meshes, targets = list(meshes), [np.asarray(t, dtype=np.float64) for t in targets]
    if rotations is None:
        rotations = random_rotations(k * len(meshes), seed).reshape(len(meshes), k, 3, 3)
    rotations = np.asarray(rotations, dtype=np.float64).reshape(len(meshes), -1, 3, 3)
    orig_p, orig_t, rot_p, rot_t = [], [], [], []
    for mesh, target, rots in zip(meshes, targets, rotations):
        base = predict(mesh)
        for R in rots:
            orig_p.append(base)
            orig_t.append(target)
            rot_p.append(predict(mesh.rotated(R)))
            rot_t.append(target @ R.T)
    return RotatedEvaluation(suite_metrics(orig_p, orig_t, componentwise),
                             suite_metrics(rot_p, rot_t, componentwise))
