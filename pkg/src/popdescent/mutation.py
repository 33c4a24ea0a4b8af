"""Fitness-scaled perturbation of weights and hyper-parameters.

Weights receive additive Gaussian noise with standard deviation
``beta1 * magnitude``; every hyper-parameter is multiplied by
``base ** N(0, beta2 * magnitude)``, a random walk in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .individual import LEARNING_RATE, REGULARIZATION_RATE, Individual

ALPHA_MIN = 1e-12
ALPHA_MAX = 1e6


@dataclass(frozen=True)
class LogInit:
    """``base ** N(mean, sd)`` initialization for a positive hyper-parameter."""

    mean: float
    sd: float
    base: float = 10.0

    def sample(self, rng: np.random.Generator, size=None):
        return self.base ** rng.normal(self.mean, self.sd, size=size)


@dataclass(frozen=True)
class MutationConfig:
    beta1: float = 0.01
    beta2: float = 15.0
    base: float = 2.0
    lr_init: LogInit = LogInit(-4.0, 2.0)
    reg_init: LogInit = LogInit(0.0, 2.0)

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise DomainError("noise scales beta1, beta2 must be non-negative")
        if not self.base > 1:
            raise DomainError("multiplicative base must exceed 1")


def mutate(
    individual: Individual,
    magnitude: float,
    config: MutationConfig,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> Individual:
    """Return a perturbed copy of ``individual``.

    At ``magnitude == 0`` the copy is bit-identical and ``rng`` is not consumed.
    Hyper-parameters are clamped to ``[ALPHA_MIN, ALPHA_MAX]``; the number of
    clamped values is added to ``stats['clamped']`` when ``stats`` is given.
    """
    if not (0.0 <= magnitude <= 1.0):
        raise DomainError(f"mutation magnitude must lie in [0, 1], got {magnitude!r}")
    if magnitude == 0.0:
        return individual.copy()
    theta = individual.theta + rng.normal(0.0, config.beta1 * magnitude, size=individual.theta.shape)
    sigma = config.beta2 * magnitude
    alpha = {}
    clamped = 0
    # sorted keys keep the draw order independent of dict insertion order
    for name in sorted(individual.alpha):
        value = individual.alpha[name] * config.base ** rng.normal(0.0, sigma)
        if not (ALPHA_MIN <= value <= ALPHA_MAX):
            value = min(max(value, ALPHA_MIN), ALPHA_MAX)
            clamped += 1
        alpha[name] = value
    if stats is not None:
        stats["clamped"] = stats.get("clamped", 0) + clamped
    return individual.copy(theta=theta, alpha={k: alpha[k] for k in individual.alpha})


def init_hyperparams(config: MutationConfig, rng: np.random.Generator) -> dict[str, float]:
    return {
        LEARNING_RATE: float(config.lr_init.sample(rng)),
        REGULARIZATION_RATE: float(config.reg_init.sample(rng)),
    }


def log_symmetry_check(sigma: float, base: float, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Fractions of multiplicative factors ``base ** N(0, sigma)`` below 1/10 and above 10."""
    if n < 100_000:
        raise DomainError("log_symmetry_check needs n >= 1e5 draws")
    if sigma == 0:
        return 0.0, 0.0
    factors = base ** rng.normal(0.0, sigma, size=n)
    return float(np.mean(factors < 0.1)), float(np.mean(factors > 10.0))


def factor_tail_fractions(sigma: float, base: float, n: int, rng: np.random.Generator, factor: float) -> tuple[float, float]:
    """Like :func:`log_symmetry_check` for an arbitrary threshold pair ``(1/factor, factor)``."""
    if sigma == 0:
        return 0.0, 0.0
    logs = rng.normal(0.0, sigma, size=n) * math.log(base)
    cut = math.log(factor)
    return float(np.mean(logs < -cut)), float(np.mean(logs > cut))
