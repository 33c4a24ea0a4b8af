"""Gradient-step accounting: one step is one parameter update from one batch."""
from __future__ import annotations

from ..errors import DomainError


def gradient_steps(iterations: int, model_count: int, batches_per_iteration: int, epochs_per_iteration: int = 1) -> int:
    args = (iterations, model_count, batches_per_iteration, epochs_per_iteration)
    if any(int(a) != a or a < 1 for a in args):
        raise DomainError(f"all step-accounting factors must be integers >= 1, got {args}")
    return iterations * model_count * batches_per_iteration * epochs_per_iteration


def grid_steps(grid_size: int, budget_per_model: int) -> int:
    if grid_size < 1 or budget_per_model < 1:
        raise DomainError("grid size and per-model budget must be >= 1")
    return grid_size * budget_per_model


def search_steps(trials: int, probe_epochs: int, final_epochs: int, batches_per_epoch: int) -> int:
    """Probe phase plus the (early-stopped) final training of the winner."""
    return (trials * probe_epochs + final_epochs) * batches_per_epoch
