"""Cross-model gradient aggregation rules.

Four ways to turn K per-model gradients into the single gradient the attack
loop consumes:

- loss_ensemble: weighted sum of gradients (gradient of the weighted loss
  sum, by linearity). Weights default to 1.
- hmm: hard-model mining — the gradient of the model with the minimum loss
  this iteration, ties broken by lowest model_id.
- gradient_ensemble: plain average (1/K) of gradients; mathematically the
  loss ensemble with weights 1/K.
- normalized_gradient_ensemble: sum of gradients each divided by its own L2
  norm, so no single vulnerable model dominates the direction. A gradient
  with norm below ZERO_NORM_THRESHOLD contributes zero instead of NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, ShapeError

__all__ = [
    "ENSEMBLE_KINDS",
    "ZERO_NORM_THRESHOLD",
    "PerModelGradient",
    "EnsembleStrategy",
    "aggregate",
    "aggregate_loss_ensemble",
    "aggregate_hmm",
    "aggregate_gradient_ensemble",
    "aggregate_normalized",
]

ENSEMBLE_KINDS = ("loss_ensemble", "hmm", "gradient_ensemble", "normalized_gradient_ensemble")

# a per-model gradient with L2 norm below this contributes the zero tensor
# to the normalized ensemble instead of dividing by a vanishing norm
ZERO_NORM_THRESHOLD = 1e-12


@dataclass(frozen=True)
class PerModelGradient:
    """One model's contribution: its loss value and d(loss)/d(source image)."""

    model_id: int
    loss_value: float
    gradient: Tensor


def _check(per_model: Sequence[PerModelGradient]) -> None:
    if not per_model:
        raise ConfigError("gradient aggregation needs at least one model")
    shape = per_model[0].gradient.shape
    for pm in per_model[1:]:
        if pm.gradient.shape != shape:
            raise ShapeError(
                f"model {pm.model_id} gradient shape {pm.gradient.shape} != {shape}"
            )


def aggregate_loss_ensemble(per_model: Sequence[PerModelGradient],
                            omega: Sequence[float] | None = None) -> Tensor:
    """Sum of omega_k * gradient_k; omega defaults to all ones."""
    _check(per_model)
    if omega is None:
        omega = [1.0] * len(per_model)
    if len(omega) != len(per_model):
        raise ConfigError(
            f"got {len(omega)} weights for {len(per_model)} models"
        )
    if any(w <= 0 for w in omega):
        raise ConfigError("ensemble weights must all be positive")
    total = np.zeros(per_model[0].gradient.shape)
    for w, pm in zip(omega, per_model):
        total = total + float(w) * pm.gradient.data
    return Tensor._wrap(total)


def aggregate_hmm(per_model: Sequence[PerModelGradient]) -> Tensor:
    """The minimum-loss model's gradient, returned bit-identically."""
    _check(per_model)
    best = min(per_model, key=lambda pm: (pm.loss_value, pm.model_id))
    return best.gradient


def aggregate_gradient_ensemble(per_model: Sequence[PerModelGradient]) -> Tensor:
    """(1/K) * sum of gradients."""
    _check(per_model)
    total = np.zeros(per_model[0].gradient.shape)
    for pm in per_model:
        total = total + pm.gradient.data
    return Tensor._wrap(total / len(per_model))


def aggregate_normalized(per_model: Sequence[PerModelGradient]) -> Tensor:
    """Sum of unit-normalized gradients; vanishing gradients contribute zero."""
    _check(per_model)
    total = np.zeros(per_model[0].gradient.shape)
    for pm in per_model:
        norm = float(np.sqrt(np.sum(pm.gradient.data ** 2)))
        if norm < ZERO_NORM_THRESHOLD:
            continue
        total = total + pm.gradient.data / norm
    return Tensor._wrap(total)


@dataclass(frozen=True)
class EnsembleStrategy:
    """Config-level choice of aggregation rule plus optional loss weights."""

    kind: str = "normalized_gradient_ensemble"
    weights_omega: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise ConfigError(f"unknown ensemble kind {self.kind!r}; expected one of {ENSEMBLE_KINDS}")
        if self.weights_omega is not None:
            if self.kind != "loss_ensemble":
                raise ConfigError("weights_omega is only meaningful for loss_ensemble")
            object.__setattr__(self, "weights_omega", tuple(float(w) for w in self.weights_omega))
            if any(w <= 0 for w in self.weights_omega):
                raise ConfigError("ensemble weights must all be positive")


def aggregate(strategy: EnsembleStrategy, per_model: Sequence[PerModelGradient]) -> Tensor:
    if strategy.kind == "loss_ensemble":
        return aggregate_loss_ensemble(per_model, strategy.weights_omega)
    if strategy.kind == "hmm":
        return aggregate_hmm(per_model)
    if strategy.kind == "gradient_ensemble":
        return aggregate_gradient_ensemble(per_model)
    return aggregate_normalized(per_model)
