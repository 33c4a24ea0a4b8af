"""Value types passed between the engine, the local optimizers and the mutation step."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DomainError

LEARNING_RATE = "learning_rate"
REGULARIZATION_RATE = "regularization_rate"


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DomainError(
                f"batch has {self.inputs.shape[0]} input rows but {self.targets.shape[0]} targets"
            )
        if self.inputs.shape[0] < 1:
            raise DomainError("batch must contain at least one example")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])


@dataclass
class Individual:
    """Model parameters ``theta`` plus hyper-parameters ``alpha``.

    ``opt_state`` belongs to the local optimizer (``None`` for plain SGD).
    ``steps`` counts the gradient steps applied along this individual's lineage.
    """

    theta: np.ndarray
    alpha: dict[str, float]
    id: int
    opt_state: Any = None
    steps: int = 0

    def __post_init__(self):
        for name, value in self.alpha.items():
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"hyper-parameter {name}={value!r} must be positive and finite")

    @property
    def learning_rate(self) -> float:
        return self.alpha[LEARNING_RATE]

    @property
    def regularization_rate(self) -> float:
        return self.alpha.get(REGULARIZATION_RATE, 0.0)

    def copy(self, **changes) -> Individual:
        fields = {
            "theta": self.theta.copy(),
            "alpha": dict(self.alpha),
            "id": self.id,
            "opt_state": copy.deepcopy(self.opt_state),
            "steps": self.steps,
        }
        fields.update(changes)
        return Individual(**fields)

    def identical_to(self, other: Individual) -> bool:
        """Bit-level equality of theta, alpha and optimizer state."""
        if self.id != other.id or self.steps != other.steps:
            return False
        if self.theta.dtype != other.theta.dtype or self.theta.tobytes() != other.theta.tobytes():
            return False
        if self.alpha.keys() != other.alpha.keys():
            return False
        if any(np.float64(self.alpha[k]).tobytes() != np.float64(other.alpha[k]).tobytes() for k in self.alpha):
            return False
        return _state_bytes(self.opt_state) == _state_bytes(other.opt_state)


def _state_bytes(state) -> bytes:
    if state is None:
        return b""
    parts = []
    for value in vars(state).values():
        if isinstance(value, np.ndarray):
            parts.append(value.tobytes())
        else:
            parts.append(repr(value).encode())
    return b"|".join(parts)


@dataclass
class Population:
    members: list[Individual]
    m: int
    iteration: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < self.m < len(self.members):
            raise DomainError(f"elite count m={self.m} must satisfy 0 < m < |P|={len(self.members)}")
        ids = [ind.id for ind in self.members]
        if len(set(ids)) != len(ids):
            raise DomainError(f"individual ids must be unique, got {ids}")

    @property
    def size(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)
