"""Disruption scoring: distances, threshold-OR success, DSR aggregates, PCA.

Pretrained identity and perceptual networks are out of scope here; both
distances run on frozen, seeded random MLPs instead. That preserves the
protocol's structure (distances plus a threshold-OR success rule) but not
anyone's absolute numbers, so the thresholds are configurable and a
calibration routine reports null-sample distributions to set them against.
All functions are pure numpy over immutable inputs; nothing here records on
a tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DegenerateEmbeddingError, ShapeError

__all__ = [
    "MetricThresholds",
    "SurrogateEmbedder",
    "DsrSummary",
    "l2_image",
    "id_distance",
    "perceptual_distance",
    "classify_success",
    "aggregate_dsr",
    "pca_project_latents",
    "separation_statistic",
]


@dataclass(frozen=True)
class MetricThresholds:
    """Success cutoffs for the three distances (strict greater-than)."""

    l2: float = 0.05
    id: float = 0.6
    lpips: float = 0.4

    def __post_init__(self):
        for name in ("l2", "id", "lpips"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"threshold {name} must be > 0, got {getattr(self, name)}")


class SurrogateEmbedder:
    """Frozen random MLP standing in for a pretrained feature network.

    ``embed`` returns the final embedding; ``features`` returns every hidden
    tap for the perceptual distance. Deterministic from (seed, input size,
    widths); never trained.
    """

    def __init__(self, seed_entropy: Sequence[int], input_size: int,
                 widths: Sequence[int] = (32, 24, 16)):
        if input_size < 1 or any(w < 1 for w in widths):
            raise ConfigError("embedder sizes must be positive")
        rng = np.random.default_rng(list(seed_entropy))
        self.input_size = int(input_size)
        self.widths = tuple(int(w) for w in widths)
        self._layers = []
        fan_in = input_size
        for w in self.widths:
            bound = 1.0 / np.sqrt(fan_in)
            weight = rng.uniform(-bound, bound, size=(w, fan_in))
            weight.flags.writeable = False
            self._layers.append(weight)
            fan_in = w

    def features(self, image) -> list[np.ndarray]:
        """Per-layer activations; all layers tanh except the final linear one."""
        x = _as_array(image).reshape(-1)
        if x.size != self.input_size:
            raise ShapeError(f"embedder expects {self.input_size} values, got {x.size}")
        taps = []
        for i, weight in enumerate(self._layers):
            x = weight @ x
            if i < len(self._layers) - 1:
                x = np.tanh(x)
            taps.append(x)
        return taps

    def embed(self, image) -> np.ndarray:
        return self.features(image)[-1]


def _as_array(t) -> np.ndarray:
    if isinstance(t, Tensor):
        return t.data
    return np.asarray(t, dtype=np.float64)


def l2_image(y_clean, y_pert) -> float:
    """Mean squared pixel difference."""
    a, b = _as_array(y_clean), _as_array(y_pert)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def id_distance(y_clean, y_pert, embedder) -> float:
    """1 - cosine similarity of the two embeddings, in [0, 2]."""
    a, b = _as_array(y_clean), _as_array(y_pert)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    ea, eb = np.asarray(embedder.embed(a)), np.asarray(embedder.embed(b))
    na, nb = float(np.linalg.norm(ea)), float(np.linalg.norm(eb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateEmbeddingError("zero-norm embedding; cosine distance undefined")
    if np.array_equal(ea, eb):
        return 0.0  # self-cosine would round to 1 - ulp
    cos = float(ea @ eb) / (na * nb)
    cos = min(1.0, max(-1.0, cos))
    return 1.0 - cos


def perceptual_distance(y_clean, y_pert, embedder) -> float:
    """Mean over tapped layers of the unit-normalized feature difference L2.

    A zero-norm tap is treated as the zero direction rather than an error,
    so the distance stays defined on degenerate inputs.
    """
    a, b = _as_array(y_clean), _as_array(y_pert)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    taps_a = embedder.features(a)
    taps_b = embedder.features(b)
    dists = []
    for ta, tb in zip(taps_a, taps_b):
        ua = _unit_or_zero(np.asarray(ta))
        ub = _unit_or_zero(np.asarray(tb))
        dists.append(float(np.linalg.norm(ua - ub)))
    return float(np.mean(dists))


def _unit_or_zero(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        return np.zeros_like(v)
    return v / n


def classify_success(l2: float, id_loss: float, lpips: float,
                     th: MetricThresholds) -> bool:
    """True iff any distance strictly exceeds its threshold."""
    if l2 < 0 or id_loss < 0 or lpips < 0:
        raise ValueError("distances must be non-negative")
    return l2 > th.l2 or id_loss > th.id or lpips > th.lpips


@dataclass(frozen=True)
class DsrSummary:
    per_model: dict[str, float]
    avg_dsr: float
    e_dsr: float


def aggregate_dsr(flags_by_model: Mapping[str, Sequence[bool]]) -> DsrSummary:
    """Per-model success rate, their mean, and the all-models-at-once rate."""
    if not flags_by_model:
        raise ConfigError("need at least one model's flags")
    lengths = {name: len(flags) for name, flags in flags_by_model.items()}
    counts = set(lengths.values())
    if len(counts) != 1:
        raise ConfigError(f"inconsistent image counts across models: {lengths}")
    n = counts.pop()
    if n == 0:
        raise ConfigError("need at least one image")
    per_model = {name: float(np.mean([bool(f) for f in flags]))
                 for name, flags in flags_by_model.items()}
    stacked = np.array([[bool(f) for f in flags] for flags in flags_by_model.values()])
    e_dsr = float(np.mean(stacked.all(axis=0)))
    return DsrSummary(
        per_model=per_model,
        avg_dsr=float(np.mean(list(per_model.values()))),
        e_dsr=e_dsr,
    )


def pca_project_latents(latents: Sequence, dims: int = 2) -> np.ndarray:
    """Mean-centered projection of flattened latents onto the top principal axes.

    Component signs are fixed by making each axis's largest-magnitude
    coordinate positive, so the projection is deterministic. All-identical
    latents project to the origin. Returns an array of shape (n, dims).
    """
    if dims < 1:
        raise ConfigError(f"projection dims must be >= 1, got {dims}")
    if len(latents) < 2:
        raise ConfigError("need at least two latents to project")
    flats = [_as_array(z).reshape(-1) for z in latents]
    width = flats[0].size
    for i, f in enumerate(flats):
        if f.size != width:
            raise ShapeError(f"latent {i} has {f.size} values, expected {width}")
    data = np.stack(flats)
    centered = data - data.mean(axis=0)
    if not np.any(centered):
        return np.zeros((len(flats), dims))
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = np.zeros((dims, width))
    take = min(dims, vt.shape[0])
    axes[:take] = vt[:take]
    for r in range(take):
        pivot = int(np.argmax(np.abs(axes[r])))
        if axes[r, pivot] < 0:
            axes[r] = -axes[r]
    return centered @ axes.T


def separation_statistic(group_a: np.ndarray, group_b: np.ndarray) -> float:
    """Inter-centroid distance over mean intra-group spread.

    Zero spread with coincident centroids gives 0; zero spread with distinct
    centroids gives inf (perfectly separated point clusters).
    """
    a = np.asarray(group_a, dtype=np.float64)
    b = np.asarray(group_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"groups must be 2-D with equal width: {a.shape} vs {b.shape}")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    inter = float(np.linalg.norm(ca - cb))
    spread_a = float(np.mean(np.linalg.norm(a - ca, axis=1)))
    spread_b = float(np.mean(np.linalg.norm(b - cb, axis=1)))
    spread = 0.5 * (spread_a + spread_b)
    if spread == 0.0:
        return 0.0 if inter == 0.0 else float("inf")
    return inter / spread
