"""Competing tuners: exhaustive grid search, random search with short probes
followed by early-stopped training, and step-based learning-rate schedules."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .errors import DomainError
from .individual import LEARNING_RATE, REGULARIZATION_RATE, Individual
from .localsearch import evaluate_loss, local_update
from .streams import substream

SCHEDULE_KINDS = ("exponential", "inverse_time", "polynomial")


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str
    initial_lr: float
    decay_rate: float = 0.9
    decay_steps: int = 1000
    end_lr: float = 1e-4
    power: float = 1.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if self.decay_steps < 1:
            raise DomainError("decay_steps must be >= 1")
        if not self.initial_lr > 0:
            raise DomainError("initial_lr must be positive")
        if self.kind == "polynomial" and (self.end_lr < 0 or not self.power > 0):
            raise DomainError("polynomial decay needs end_lr >= 0 and power > 0")


def schedule_lr(spec: ScheduleSpec, step: int) -> float:
    if step < 0:
        raise DomainError("step must be non-negative")
    s = spec.decay_steps
    if spec.kind == "exponential":
        return spec.initial_lr * spec.decay_rate ** (step / s)
    if spec.kind == "inverse_time":
        return spec.initial_lr / (1.0 + spec.decay_rate * step / s)
    frac = 1.0 - min(step, s) / s
    return (spec.initial_lr - spec.end_lr) * frac**spec.power + spec.end_lr


def early_stop(cv_history: Sequence[float], patience: int) -> bool:
    """True once the best CV loss is more than ``patience`` epochs old."""
    if not cv_history:
        raise DomainError("early_stop needs a non-empty history")
    best = int(np.argmin(cv_history))
    return len(cv_history) - 1 - best > patience


@dataclass(frozen=True)
class LogRange:
    low: float
    high: float

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise DomainError(f"log range needs 0 < low < high, got [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator) -> float:
        return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))


@dataclass(frozen=True)
class UniformRange:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise DomainError(f"range needs low < high, got [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high))


class SearchSpace:
    """Per-hyper-parameter discrete lists (grid) or continuous ranges.

    ``0.0`` is allowed in a regularization list and means "no penalty".
    """

    def __init__(self, params: dict[str, Sequence[float] | LogRange | UniformRange]):
        if not params:
            raise DomainError("search space is empty")
        self.params = {}
        for name, dom in params.items():
            if isinstance(dom, (LogRange, UniformRange)):
                self.params[name] = dom
            else:
                values = [float(v) for v in dom]
                if not values:
                    raise DomainError(f"value list for {name!r} is empty")
                self.params[name] = values

    @property
    def is_discrete(self) -> bool:
        return all(isinstance(d, list) for d in self.params.values())

    def grid(self) -> list[dict[str, float]]:
        if not self.is_discrete:
            raise DomainError("grid search needs an all-discrete search space")
        names = list(self.params)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.params[n] for n in names))]

    def sample(self, rng: np.random.Generator) -> dict[str, float]:
        out = {}
        for name, dom in self.params.items():
            if isinstance(dom, list):
                out[name] = dom[int(rng.integers(len(dom)))]
            else:
                out[name] = dom.sample(rng)
        return out


@dataclass(frozen=True)
class ScheduleSpace:
    """Ranges the schedule search draws from; the kind is picked uniformly."""

    decay_rate: UniformRange = UniformRange(0.8, 0.99)
    decay_steps: tuple[int, int] = (1000, 10000)
    end_lr: LogRange = LogRange(1e-5, 1e-2)
    power: UniformRange = UniformRange(0.1, 2.0)

    def sample(self, rng: np.random.Generator, initial_lr: float) -> ScheduleSpec:
        kind = SCHEDULE_KINDS[int(rng.integers(len(SCHEDULE_KINDS)))]
        return ScheduleSpec(
            kind=kind,
            initial_lr=initial_lr,
            decay_rate=self.decay_rate.sample(rng),
            decay_steps=int(rng.integers(self.decay_steps[0], self.decay_steps[1] + 1)),
            end_lr=self.end_lr.sample(rng),
            power=self.power.sample(rng),
        )


def _alpha(hparams: dict[str, float]) -> dict[str, float]:
    # zero regularization is a valid grid point but alpha must stay positive
    return {k: v for k, v in hparams.items() if not (k == REGULARIZATION_RATE and v == 0.0)}


class Trainer:
    """Trains single models on fixed partitions, counting every gradient step.

    Each call is keyed so the batches it sees, and the initialization of a
    fresh model, come from their own substream.
    """

    def __init__(self, model, train_stream, cv_stream, seed: int, optimizer: str = "adam"):
        self.model = model
        self.train_stream = train_stream
        self.cv_stream = cv_stream
        self.seed = seed
        self.optimizer = optimizer
        self.steps = 0

    @property
    def batches_per_epoch(self) -> int:
        return self.train_stream.batches_per_epoch

    def fresh(self, hparams: dict[str, float], *key) -> Individual:
        theta = self.model.init_theta(substream(self.seed, "fresh", *key))
        return Individual(theta=theta, alpha=_alpha(hparams), id=0)

    def train(self, ind: Individual, n_batches: int, *key, schedule: ScheduleSpec | None = None) -> Individual:
        batches = self.train_stream.sample_batches(substream(self.seed, "batches", *key), n_batches)
        lr_schedule = partial(schedule_lr, schedule) if schedule is not None else None
        out = local_update(ind, self.model, batches, self.optimizer, lr_schedule)
        self.steps += n_batches
        return out

    def cv_loss(self, ind: Individual) -> float:
        return evaluate_loss(self.model, ind.theta, self.cv_stream.full()).data_loss


@dataclass
class SearchResult:
    hparams: dict[str, float]
    individual: Individual
    cv_loss: float
    gradient_steps: int
    trials: list[dict] = field(default_factory=list)
    trace: list[tuple[int, float]] = field(default_factory=list)
    schedule: ScheduleSpec | None = None
    epochs_trained: int = 0


def grid_search(space: SearchSpace, trainer: Trainer, budget_per_model: int, chunk: int | None = None) -> SearchResult:
    """Train one model per grid point to ``budget_per_model`` steps; keep the lowest final CV loss.

    ``chunk`` only controls how often the CV trace is sampled.
    """
    points = space.grid()
    if not points:
        raise DomainError("empty grid")
    if budget_per_model < 1:
        raise DomainError("budget_per_model must be >= 1")
    chunk = chunk or budget_per_model
    start = trainer.steps
    best = None
    trials, trace = [], []
    best_so_far = math.inf
    for i, hp in enumerate(points):
        ind = trainer.fresh(hp, "grid", i)
        done, part = 0, 0
        while done < budget_per_model:
            n = min(chunk, budget_per_model - done)
            ind = trainer.train(ind, n, "grid", i, part)
            done += n
            part += 1
            cv = trainer.cv_loss(ind)
            trace.append((trainer.steps - start, min(best_so_far, cv)))
        best_so_far = min(best_so_far, cv)
        trials.append({**hp, "cv_loss": cv})
        if best is None or cv < best[2]:
            best = (hp, ind, cv)
    return SearchResult(best[0], best[1], best[2], trainer.steps - start, trials, trace)


def random_search(
    space: SearchSpace,
    trials: int,
    probe_epochs: int,
    trainer: Trainer,
    rng: np.random.Generator,
    max_epochs: int = 20,
    patience: int = 2,
    step_budget: int | None = None,
    schedules: ScheduleSpace | None = None,
) -> SearchResult:
    """Probe ``trials`` sampled combinations briefly, then retrain the winner.

    Probes train for ``probe_epochs`` epochs and are ranked by CV loss. The
    winner is retrained from a fresh initialization with early stopping, for
    at most ``max_epochs`` epochs and never past ``step_budget`` total steps.
    With ``schedules`` each trial also draws a learning-rate schedule.
    """
    if trials < 1 or probe_epochs < 1:
        raise DomainError("trials and probe_epochs must be >= 1")
    bpe = trainer.batches_per_epoch
    start = trainer.steps
    sampled = []
    for t in range(trials):
        hp = space.sample(rng)
        sched = schedules.sample(rng, hp[LEARNING_RATE]) if schedules is not None else None
        sampled.append((hp, sched))

    records = []
    best = None
    for t, (hp, sched) in enumerate(sampled):
        ind = trainer.fresh(hp, "probe", t)
        for e in range(probe_epochs):
            ind = trainer.train(ind, bpe, "probe", t, e, schedule=sched)
        cv = trainer.cv_loss(ind)
        records.append({**hp, "cv_loss": cv, "schedule": sched.kind if sched else ""})
        if best is None or cv < best[2]:
            best = (hp, sched, cv)
    probe_steps = trainer.steps - start

    hp, sched, _ = best
    epochs = max_epochs
    if step_budget is not None:
        epochs = min(epochs, max(0, (step_budget - probe_steps) // bpe))
    ind = trainer.fresh(hp, "final")
    history: list[float] = []
    trace = []
    for e in range(epochs):
        ind = trainer.train(ind, bpe, "final", e, schedule=sched)
        history.append(trainer.cv_loss(ind))
        trace.append((trainer.steps - start, history[-1]))
        if early_stop(history, patience):
            break
    cv = history[-1] if history else trainer.cv_loss(ind)
    return SearchResult(hp, ind, cv, trainer.steps - start, records, trace, sched, len(history))
