"""Sign-gradient perturbation search under an L-infinity budget.

One-step (fgsm) and iterative (run_attack) variants. The iterate keeps three
invariants at every iteration boundary:

- X_t == X + eta, bitwise,
- every X_t value within [0, 1],
- max |eta| <= epsilon + 1e-12 (in fact bitwise <= epsilon).

To make those hold in floating point, the update and the budget clamp are
applied to eta directly (the x-space form (X_t + a*sign(g)) - X is the same
quantity in real arithmetic but loses ulps to cancellation), and pixel
validity is settled per coordinate: where X + eta leaves [0,1], eta is
replaced by -X or (1 - X), which a short fixed-point loop verifies to be
stable under clipping. Settling only ever shrinks |eta|, so the budget
clamp's exact +/-epsilon values survive on untouched coordinates.

The gradient provider passed to run_attack encapsulates the objective and
the ensemble strategy; the loop itself knows nothing about models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .ensembles import EnsembleStrategy, PerModelGradient, aggregate
from .errors import ConfigError, ShapeError
from .objectives import Objective
from .zoo import TwoStageModel

__all__ = [
    "AttackConfig",
    "AttackState",
    "project_budget",
    "fgsm",
    "run_attack",
    "build_gradient_provider",
    "timed_attack",
    "GradientProvider",
]

GradientProvider = Callable[[Tensor], Tensor]

BUDGET_SLACK = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    """Budget, step size, and loop shape. Defaults follow the source protocol."""

    epsilon: float = 0.05
    step_a: float = 0.01
    iterations: int = 30
    random_init: bool = True
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.step_a <= 0:
            raise ConfigError(f"step_a must be > 0, got {self.step_a}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")

    def seed_entropy(self) -> list[int]:
        if isinstance(self.seed, int):
            return [self.seed]
        return list(self.seed)


@dataclass(frozen=True)
class AttackState:
    """Loop snapshot handed to the on_step callback after each iteration."""

    X: Tensor
    x_t: Tensor
    eta: Tensor
    t: int


def project_budget(X: Tensor, X_candidate: Tensor, epsilon: float) -> Tensor:
    """Clamp a candidate image to [X-eps, X+eps], then to [0, 1]."""
    if X.shape != X_candidate.shape:
        raise ShapeError(f"candidate shape {X_candidate.shape} != source shape {X.shape}")
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    ball = np.clip(X_candidate.data, X.data - epsilon, X.data + epsilon)
    return Tensor._wrap(np.clip(ball, 0.0, 1.0))


def _settle_pixels(x_arr: np.ndarray, eta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Adjust eta only where X + eta leaves [0,1]; other coordinates keep their bits.

    x + (-x) is exactly 0 and x + fl(1-x) never rounds above 1, so one
    corrective pass suffices; the loop just verifies the fixed point.
    """
    eta = np.array(eta)
    for _ in range(4):
        x_t = x_arr + eta
        lo = x_t < 0.0
        hi = x_t > 1.0
        if not (lo.any() or hi.any()):
            return x_t, eta
        eta[lo] = -x_arr[lo]
        eta[hi] = 1.0 - x_arr[hi]
    raise FloatingPointError("pixel-range projection did not reach a fixed point")


def _check_source_image(X: Tensor) -> None:
    if np.any(X.data < 0.0) or np.any(X.data > 1.0):
        raise ConfigError("source image must have values in [0,1]")


def fgsm(objective: Callable[[Tensor], Tensor], X: Tensor, config: AttackConfig) -> Tensor:
    """One signed-gradient step: eta = epsilon * sign(grad), budget-projected.

    ``objective`` maps a taped perturbed image to a scalar loss. Coordinates
    with nonzero gradient that stay pixel-feasible carry exactly +/-epsilon.
    """
    _check_source_image(X)
    tape = Tape()
    tape.watch(X)
    with ad.recording(tape):
        loss = objective(X)
    g = ad.backward(loss, X)
    eta = config.epsilon * np.sign(g.data)
    _, eta = _settle_pixels(X.data, eta)
    return Tensor._wrap(eta)


def run_attack(objective_grad: GradientProvider, X: Tensor, config: AttackConfig,
               *, init_eta: Tensor | None = None,
               on_step: Callable[[AttackState], None] | None = None) -> Tensor:
    """Iterative signed-gradient attack; returns the final perturbation eta.

    Each iteration: X' = X_t + a * sign(g); eta = clip_eps(X' - X);
    X_{t+1} = X + eta kept pixel-valid. With random_init the loop starts
    from eta uniform in [-eps, +eps] (drawn from config.seed), otherwise
    from zero. ``init_eta`` resumes from a previous run's output (mutually
    exclusive with random_init); an already-valid state is resumed verbatim
    so split runs reproduce one long run bit-for-bit.
    """
    _check_source_image(X)
    eps = config.epsilon
    x_arr = X.data
    if init_eta is not None:
        if config.random_init:
            raise ConfigError("init_eta cannot be combined with random_init")
        if init_eta.shape != X.shape:
            raise ShapeError(f"init_eta shape {init_eta.shape} != source shape {X.shape}")
        eta = init_eta.data
        x_t = x_arr + eta
        if (np.max(np.abs(eta)) > eps + BUDGET_SLACK
                or np.any(x_t < 0.0) or np.any(x_t > 1.0)):
            eta = np.clip(eta, -eps, eps)
            x_t, eta = _settle_pixels(x_arr, eta)
    else:
        if config.random_init:
            rng = np.random.default_rng(config.seed_entropy())
            eta = rng.uniform(-eps, eps, size=X.shape)
        else:
            eta = np.zeros(X.shape)
        x_t, eta = _settle_pixels(x_arr, eta)

    for t in range(config.iterations):
        g = objective_grad(Tensor._wrap(x_t))
        if g.shape != X.shape:
            raise ShapeError(f"gradient provider returned shape {g.shape}, expected {X.shape}")
        eta = np.clip(eta + config.step_a * np.sign(g.data), -eps, eps)
        x_t, eta = _settle_pixels(x_arr, eta)
        assert np.array_equal(x_t, x_arr + eta)
        assert np.max(np.abs(eta)) <= eps + BUDGET_SLACK
        assert np.all(x_t >= 0.0) and np.all(x_t <= 1.0)
        if on_step is not None:
            on_step(AttackState(X=X, x_t=Tensor._wrap(x_t), eta=Tensor._wrap(eta), t=t))
    return Tensor._wrap(eta)


def build_gradient_provider(models: Sequence[TwoStageModel], objective: Objective,
                            strategy: EnsembleStrategy, X: Tensor) -> GradientProvider:
    """Bind objective references to X and wire per-model gradients into the ensemble.

    Clean references (latents or outputs) are frozen here, once, before any
    iteration. Each call then runs one fresh tape per model and aggregates.
    """
    if not models:
        raise ConfigError("gradient provider needs at least one model")
    bound = [(i, objective.bind(model, X)) for i, model in enumerate(models)]

    def provider(x_t: Tensor) -> Tensor:
        per_model = []
        for model_id, loss_fn in bound:
            tape = Tape()
            tape.watch(x_t)
            with ad.recording(tape):
                loss = loss_fn(x_t)
            per_model.append(PerModelGradient(
                model_id=model_id,
                loss_value=loss.item(),
                gradient=ad.backward(loss, x_t),
            ))
        return aggregate(strategy, per_model)

    return provider


def timed_attack(objective_grad: GradientProvider, X: Tensor,
                 config: AttackConfig) -> tuple[Tensor, float]:
    """run_attack plus its wall time on a monotonic clock."""
    start = time.perf_counter()
    eta = run_attack(objective_grad, X, config)
    return eta, time.perf_counter() - start
