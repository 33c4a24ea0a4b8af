"""The Population Descent loop.

One iteration trains every member on a shared chunk of training batches,
scores the results on a fresh cross-validation batch, keeps the ``m`` fittest
members untouched and overwrites the rest with mutated copies drawn in
proportion to fitness. Poorly performing sources are mutated harder, since
the mutation magnitude is ``1 - fitness``.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, NumericalError
from .individual import LEARNING_RATE, REGULARIZATION_RATE, Batch, Individual, Population
from .localsearch import OPTIMIZERS, local_update
from .mutation import MutationConfig, init_hyperparams, mutate
from .streams import substream

FITNESS_SOURCES = ("cv", "train")


@dataclass
class PopDescentConfig:
    m: int
    iterations: int = 50
    batches_per_iteration: int = 128
    epochs_per_iteration: int = 1
    cv_batch_size: int = 64
    optimizer: str = "adam"
    mutation: MutationConfig = field(default_factory=MutationConfig)
    # False keeps selection and copying but applies zero-magnitude mutation
    mutate: bool = True
    # False skips selection entirely: members only take local updates
    replace: bool = True
    fitness_source: str = "cv"

    def check(self, population_size: int) -> None:
        if not 0 < self.m < population_size:
            raise DomainError(f"elite count m={self.m} must satisfy 0 < m < population size {population_size}")
        for name in ("iterations", "batches_per_iteration", "epochs_per_iteration", "cv_batch_size"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if self.fitness_source not in FITNESS_SOURCES:
            raise DomainError(f"fitness_source must be one of {FITNESS_SOURCES}")

    @property
    def steps_per_member(self) -> int:
        return self.batches_per_iteration * self.epochs_per_iteration


@dataclass
class IterationTrace:
    iteration: int
    member_ids: list[int]
    losses: list[float]
    fitness: list[float]
    best_id: int
    best_loss: float
    replaced_ids: list[int]
    source_ids: list[int]
    magnitudes: list[float]
    clamped: int
    gradient_steps: int
    learning_rates: list[float]
    regularization_rates: list[float]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def traces_to_json(traces: Sequence[IterationTrace]) -> bytes:
    return json.dumps([t.to_dict() for t in traces], sort_keys=True).encode()


@dataclass
class RunResult:
    best: Individual
    best_fitness: float
    best_loss: float
    population: Population
    traces: list[IterationTrace]
    best_ever_fitness: float

    @property
    def gradient_steps(self) -> int:
        return sum(t.gradient_steps for t in self.traces)


@dataclass
class ReplacementLog:
    replaced_ids: list[int] = field(default_factory=list)
    source_ids: list[int] = field(default_factory=list)
    magnitudes: list[float] = field(default_factory=list)


def fitness_from_loss(loss: float) -> float:
    """Map a non-negative loss into (0, 1]; the mutation magnitude is ``1 - fitness``."""
    loss = float(loss)
    if math.isnan(loss) or loss < 0 or math.isinf(loss):
        raise DomainError(f"loss must be finite and non-negative, got {loss!r}")
    return 2.0 / (2.0 + loss)


def build_fitness_distribution(fitnesses: Sequence[float]) -> np.ndarray:
    f = np.asarray(fitnesses, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise DomainError("fitness vector must be a non-empty 1-D sequence")
    if np.any(np.isnan(f)) or np.any(f < 0) or np.any(f > 1):
        raise DomainError("fitness values must lie in [0, 1]")
    total = f.sum()
    if total == 0:
        return np.full(f.size, 1.0 / f.size)
    return f / total


def _argbest(fitnesses: Sequence[float], ids: Sequence[int]) -> int:
    return min(range(len(ids)), key=lambda i: (-fitnesses[i], ids[i]))


def replace_weakest(
    optimized: Population,
    fitnesses: Sequence[float],
    rng: np.random.Generator,
    mutate_fn: Callable[[Individual, float, np.random.Generator], Individual],
) -> tuple[Population, ReplacementLog]:
    """m-elitist replacement.

    The ``size - m`` weakest members (ties: lowest id first) are discarded.
    Each vacated slot receives ``mutate_fn(source, 1 - fitness(source), rng)``
    where ``source`` is drawn with replacement from all members, weighted by
    normalized fitness. The copy takes over the slot's id so ids stay unique.
    """
    members = optimized.members
    n = len(members)
    if len(fitnesses) != n:
        raise DomainError(f"{len(fitnesses)} fitness values for {n} members")
    probs = build_fitness_distribution(fitnesses)
    order = sorted(range(n), key=lambda i: (fitnesses[i], members[i].id))
    log = ReplacementLog()
    new_members = list(members)
    for slot in order[: n - optimized.m]:
        src = int(rng.choice(n, p=probs))
        magnitude = 1.0 - float(fitnesses[src])
        child = mutate_fn(members[src], magnitude, rng)
        new_members[slot] = dataclasses.replace(child, id=members[slot].id)
        log.replaced_ids.append(members[slot].id)
        log.source_ids.append(members[src].id)
        log.magnitudes.append(magnitude)
    return Population(new_members, optimized.m, optimized.iteration, dict(optimized.meta)), log


def _score(model, members: Iterable[Individual], batch: Batch) -> list[float]:
    losses = []
    for ind in members:
        try:
            loss = model.loss(ind.theta, batch, 0.0).data_loss
        except NumericalError as exc:
            raise NumericalError(f"individual {ind.id}: {exc}", where=exc.where, individual_id=ind.id) from exc
        if not math.isfinite(loss):
            raise NumericalError(f"individual {ind.id}: non-finite fitness loss", where="fitness", individual_id=ind.id)
        losses.append(loss)
    return losses


def _fitness_batch(config, train_stream, cv_stream, seed, tag, iteration) -> Batch:
    if config.fitness_source == "cv":
        return cv_stream.sample(substream(seed, tag, iteration), config.cv_batch_size)
    return train_stream.sample(substream(seed, "train-" + tag, iteration), config.cv_batch_size)


def _zero_mutation(individual, magnitude, rng):
    return individual.copy()


def popdescent_iteration(
    pop: Population,
    model,
    train_stream,
    cv_stream,
    config: PopDescentConfig,
    seed: int,
    map_fn: Callable = map,
) -> tuple[Population, IterationTrace]:
    """Run one local-update / selection / mutation round.

    ``map_fn`` may be swapped for an executor's ``map``; local updates are
    pure and the batches are shared, so the result does not depend on it.
    """
    config.check(pop.size)
    it = pop.iteration
    batches = train_stream.sample_batches(substream(seed, "train", it), config.batches_per_iteration)
    batches = batches * config.epochs_per_iteration
    update = partial(local_update, model=model, batches=batches, optimizer=config.optimizer)
    optimized = Population(list(map_fn(update, pop.members)), pop.m, it, dict(pop.meta))
    steps = pop.size * len(batches)

    fit_batch = _fitness_batch(config, train_stream, cv_stream, seed, "cv", it)
    losses = _score(model, optimized.members, fit_batch)
    fitness = [fitness_from_loss(x) for x in losses]
    ids = [ind.id for ind in optimized.members]
    best = _argbest(fitness, ids)

    stats = {"clamped": 0}
    if config.replace:
        if config.mutate:
            def mutate_fn(ind, magnitude, rng):
                return mutate(ind, magnitude, config.mutation, rng, stats)
        else:
            mutate_fn = _zero_mutation
        new_pop, log = replace_weakest(optimized, fitness, substream(seed, "replace", it), mutate_fn)
        if not config.mutate:
            log.magnitudes = [0.0] * len(log.magnitudes)
    else:
        new_pop, log = optimized, ReplacementLog()
    new_pop.iteration = it + 1

    trace = IterationTrace(
        iteration=it,
        member_ids=ids,
        losses=losses,
        fitness=fitness,
        best_id=ids[best],
        best_loss=losses[best],
        replaced_ids=log.replaced_ids,
        source_ids=log.source_ids,
        magnitudes=log.magnitudes,
        clamped=stats["clamped"],
        gradient_steps=steps,
        learning_rates=[ind.alpha[LEARNING_RATE] for ind in new_pop.members],
        regularization_rates=[ind.alpha.get(REGULARIZATION_RATE, 0.0) for ind in new_pop.members],
    )
    return new_pop, trace


def fixed_iterations(n: int) -> Callable[[Population, list], bool]:
    return lambda pop, traces: len(traces) >= n


def run(
    pop: Population,
    model,
    train_stream,
    cv_stream,
    config: PopDescentConfig,
    seed: int,
    converged: Callable[[Population, list], bool] | None = None,
    map_fn: Callable = map,
    on_iteration: Callable[[IterationTrace], None] | None = None,
) -> RunResult:
    """Iterate until ``converged(pop, traces)`` holds, then return the fittest member.

    The final pick is scored on a fresh batch; it is not the best member ever
    seen. ``best_ever_fitness`` is kept for reporting only.
    """
    config.check(pop.size)
    converged = converged or fixed_iterations(config.iterations)
    traces: list[IterationTrace] = []
    while not converged(pop, traces):
        pop, trace = popdescent_iteration(pop, model, train_stream, cv_stream, config, seed, map_fn)
        traces.append(trace)
        if on_iteration is not None:
            on_iteration(trace)

    batch = _fitness_batch(config, train_stream, cv_stream, seed, "select", pop.iteration)
    losses = _score(model, pop.members, batch)
    fitness = [fitness_from_loss(x) for x in losses]
    best = _argbest(fitness, [ind.id for ind in pop.members])
    best_ever = max([fitness[best]] + [max(t.fitness) for t in traces])
    return RunResult(
        best=pop.members[best],
        best_fitness=fitness[best],
        best_loss=losses[best],
        population=pop,
        traces=traces,
        best_ever_fitness=best_ever,
    )


def init_population(
    model,
    size: int,
    m: int,
    seed: int,
    alpha: dict[str, float] | None = None,
    mutation: MutationConfig | None = None,
) -> Population:
    """Fresh population with ids ``0..size-1``.

    With ``alpha=None`` hyper-parameters are drawn from the log-normal
    initializers in ``mutation``; otherwise every member starts from ``alpha``.
    """
    mutation = mutation or MutationConfig()
    members = []
    for i in range(size):
        theta = model.init_theta(substream(seed, "init", i))
        a = dict(alpha) if alpha is not None else init_hyperparams(mutation, substream(seed, "alpha", i))
        members.append(Individual(theta=theta, alpha=a, id=i))
    return Population(members, m)
