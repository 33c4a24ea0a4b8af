"""Differentiable models and the gradient-based local update.

Everything here is float64 and pure: functions return new arrays / individuals
instead of mutating their inputs, so members of a population can be updated
concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import DomainError, NumericalError
from .individual import Batch, Individual

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class LossReport:
    data_loss: float
    reg_loss: float

    @property
    def total(self) -> float:
        return self.data_loss + self.reg_loss


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected ReLU network; ``widths[-1]`` is the class count.

    ``regularized`` holds indices of weight matrices (0 = first layer) that
    receive an L2 penalty. Biases are never penalized.
    """

    widths: tuple[int, ...]
    regularized: tuple[int, ...] = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "regularized", tuple(sorted(set(int(i) for i in self.regularized))))
        if len(self.widths) < 2:
            raise DomainError("an MLP needs at least an input and an output layer")
        if any(w < 1 for w in self.widths):
            raise DomainError(f"layer widths must be positive, got {self.widths}")
        if self.widths[-1] < 2:
            raise DomainError("output width is the class count and must be >= 2")
        for i in self.regularized:
            if not 0 <= i < self.n_layers:
                raise DomainError(f"regularized layer index {i} out of range for {self.n_layers} layers")
        if self.activation != "relu":
            raise DomainError(f"unsupported activation {self.activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def n_classes(self) -> int:
        return self.widths[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


class MlpModel:
    """Multi-layer perceptron with sparse categorical cross-entropy loss."""

    def __init__(self, spec: MlpSpec):
        self.spec = spec
        self._slices = []
        offset = 0
        for fan_in, fan_out in zip(spec.widths[:-1], spec.widths[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset += fan_in * fan_out
            b = slice(offset, offset + fan_out)
            offset += fan_out
            self._slices.append((w, (fan_in, fan_out), b))
        self.n_params = offset

    def __repr__(self):
        return f"MlpModel({self.spec!r})"

    def init_theta(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        theta = np.zeros(self.n_params)
        for w, (fan_in, fan_out), _ in self._slices:
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            theta[w] = rng.uniform(-limit, limit, size=fan_in * fan_out)
        return theta

    def unpack(self, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        self._check_theta(theta)
        return [(theta[w].reshape(shape), theta[b]) for w, shape, b in self._slices]

    def _check_theta(self, theta):
        if theta.shape != (self.n_params,):
            raise DomainError(f"theta has shape {theta.shape}, model expects ({self.n_params},)")

    def _forward(self, theta, batch):
        layers = self.unpack(theta)
        targets = np.asarray(batch.targets)
        if targets.min() < 0 or targets.max() >= self.spec.n_classes:
            raise DomainError(f"labels must lie in [0, {self.spec.n_classes})")
        acts = [np.asarray(batch.inputs, dtype=np.float64)]
        a = acts[0]
        for i, (W, b) in enumerate(layers):
            z = a @ W + b
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"non-finite activation in layer {i}", where=f"layer {i}")
            a = np.maximum(z, 0.0) if i < len(layers) - 1 else z
            acts.append(a)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_norm
        n = targets.shape[0]
        data_loss = float(-log_probs[np.arange(n), targets].mean())
        return layers, acts, log_probs, targets, data_loss

    def _reg(self, layers, reg_rate):
        if reg_rate == 0 or not self.spec.regularized:
            return 0.0
        return float(reg_rate * sum(np.sum(layers[i][0] ** 2) for i in self.spec.regularized))

    def loss(self, theta: np.ndarray, batch: Batch, reg_rate: float = 0.0) -> LossReport:
        layers, _, _, _, data_loss = self._forward(theta, batch)
        return LossReport(data_loss, self._reg(layers, reg_rate))

    def loss_and_grad(self, theta: np.ndarray, batch: Batch, reg_rate: float = 0.0) -> tuple[LossReport, np.ndarray]:
        if reg_rate < 0:
            raise DomainError("regularization rate must be non-negative")
        layers, acts, log_probs, targets, data_loss = self._forward(theta, batch)
        n = targets.shape[0]
        grad = np.empty(self.n_params)
        delta = np.exp(log_probs)
        delta[np.arange(n), targets] -= 1.0
        delta /= n
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            w_slice, _, b_slice = self._slices[i]
            gW = acts[i].T @ delta
            if reg_rate and i in self.spec.regularized:
                gW = gW + 2.0 * reg_rate * W
            grad[w_slice] = gW.ravel()
            grad[b_slice] = delta.sum(axis=0)
            if i:
                delta = (delta @ W.T) * (acts[i] > 0)
        return LossReport(data_loss, self._reg(layers, reg_rate)), grad

    def accuracy(self, theta: np.ndarray, batch: Batch) -> float:
        _, _, log_probs, targets, _ = self._forward(theta, batch)
        return float(np.mean(log_probs.argmax(axis=1) == targets))


def mlp_loss_and_grad(spec: MlpSpec, theta: np.ndarray, batch: Batch, reg_rate: float) -> tuple[LossReport, np.ndarray]:
    return MlpModel(spec).loss_and_grad(theta, batch, reg_rate)


def analytic_objective(name: str, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Value and exact gradient of ``sphere`` or ``rosenbrock`` (a=1, b=100)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise DomainError("objective input must be a non-empty vector")
    if name == "sphere":
        return float(np.dot(x, x)), 2.0 * x
    if name == "rosenbrock":
        if x.size < 2:
            raise DomainError("rosenbrock needs dimension >= 2")
        head, tail = x[:-1], x[1:]
        value = float(np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2))
        grad = np.zeros_like(x)
        grad[:-1] = -400.0 * head * (tail - head**2) - 2.0 * (1.0 - head)
        grad[1:] += 200.0 * (tail - head**2)
        return value, grad
    raise DomainError(f"unknown objective {name!r}")


class AnalyticModel:
    """Adapter letting the engine optimize an analytic objective; batches are ignored."""

    def __init__(self, name: str, dim: int):
        analytic_objective(name, np.zeros(dim))
        self.name = name
        self.n_params = dim

    def __repr__(self):
        return f"AnalyticModel({self.name!r}, dim={self.n_params})"

    def init_theta(self, rng: np.random.Generator) -> np.ndarray:
        return rng.normal(size=self.n_params)

    def loss(self, theta, batch=None, reg_rate=0.0) -> LossReport:
        return LossReport(analytic_objective(self.name, theta)[0], 0.0)

    def loss_and_grad(self, theta, batch=None, reg_rate=0.0):
        value, grad = analytic_objective(self.name, theta)
        return LossReport(value, 0.0), grad


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise DomainError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericalError(f"non-finite function value near coordinate {i}", where=f"coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad


def _check_grad(grad, theta):
    if grad.shape != theta.shape:
        raise DomainError(f"gradient shape {grad.shape} does not match theta {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient", where="gradient")


def _adam_inplace(theta, state, grad, lr):
    state.t += 1
    state.m *= ADAM_BETA1
    state.m += (1.0 - ADAM_BETA1) * grad
    state.v *= ADAM_BETA2
    state.v += (1.0 - ADAM_BETA2) * (grad * grad)
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    theta -= (lr / bc1) * state.m / (np.sqrt(state.v / bc2) + ADAM_EPS)


def sgd_step(individual: Individual, grad: np.ndarray) -> Individual:
    _check_grad(grad, individual.theta)
    return individual.copy(theta=individual.theta - individual.learning_rate * grad, steps=individual.steps + 1)


def adam_step(individual: Individual, state: AdamState, grad: np.ndarray) -> tuple[Individual, AdamState]:
    _check_grad(grad, individual.theta)
    if state.m.shape != individual.theta.shape or state.v.shape != individual.theta.shape:
        raise DomainError("Adam moment vectors do not match theta")
    theta = individual.theta.copy()
    new_state = AdamState(state.m.copy(), state.v.copy(), state.t)
    _adam_inplace(theta, new_state, grad, individual.learning_rate)
    return individual.copy(theta=theta, opt_state=new_state, steps=individual.steps + 1), new_state


OPTIMIZERS = ("sgd", "adam")


def local_update(
    individual: Individual,
    model,
    batches: Iterable[Batch],
    optimizer: str = "adam",
    lr_schedule: Callable[[int], float] | None = None,
) -> Individual:
    """Apply one gradient step per batch and return the updated copy.

    Hyper-parameters are read, never written. ``lr_schedule`` maps the
    individual's lineage step count to a learning rate and overrides
    ``alpha['learning_rate']`` when given.
    """
    if optimizer not in OPTIMIZERS:
        raise DomainError(f"unknown optimizer {optimizer!r}")
    theta = individual.theta.copy()
    steps = individual.steps
    state = individual.opt_state
    if optimizer == "adam":
        state = AdamState(state.m.copy(), state.v.copy(), state.t) if state is not None else AdamState.zeros(theta.size)
    reg = individual.regularization_rate
    for batch in batches:
        report, grad = model.loss_and_grad(theta, batch, reg)
        if not (math.isfinite(report.total) and np.all(np.isfinite(grad))):
            raise NumericalError(
                f"individual {individual.id}: non-finite loss or gradient at step {steps}",
                where="local_update",
                individual_id=individual.id,
            )
        lr = lr_schedule(steps) if lr_schedule is not None else individual.learning_rate
        if optimizer == "adam":
            _adam_inplace(theta, state, grad, lr)
        else:
            theta -= lr * grad
        steps += 1
    if not np.all(np.isfinite(theta)):
        raise NumericalError(
            f"individual {individual.id}: parameters became non-finite", where="local_update", individual_id=individual.id
        )
    return Individual(theta=theta, alpha=dict(individual.alpha), id=individual.id, opt_state=state, steps=steps)


def evaluate_loss(model, theta: np.ndarray, batch: Batch, reg_rate: float = 0.0, chunk: int = 4096) -> LossReport:
    """Mean loss over a (possibly large) batch, evaluated in chunks."""
    n = batch.size
    if n <= chunk:
        return model.loss(theta, batch, reg_rate)
    total = 0.0
    for start in range(0, n, chunk):
        part = Batch(batch.inputs[start:start + chunk], batch.targets[start:start + chunk])
        total += model.loss(theta, part, 0.0).data_loss * part.size
    return LossReport(total / n, model.loss(theta, Batch(batch.inputs[:1], batch.targets[:1]), reg_rate).reg_loss)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


__all__ = [
    "AdamState",
    "AnalyticModel",
    "LossReport",
    "MlpModel",
    "MlpSpec",
    "adam_step",
    "analytic_objective",
    "evaluate_loss",
    "finite_diff_grad",
    "local_update",
    "mlp_loss_and_grad",
    "relative_error",
    "sgd_step",
]
