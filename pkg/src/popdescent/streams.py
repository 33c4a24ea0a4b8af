"""Seed derivation and minibatch streams.

Every random draw in the package comes from ``substream(seed, *keys)``, so a
master seed fixes the whole run and no draw depends on execution order.
"""
from __future__ import annotations

import zlib

import numpy as np

from .errors import DomainError
from .individual import Batch


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def substream(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(_key(k) for k in keys)]))


class BatchStream:
    """Samples minibatches from a fixed partition.

    ``sample_batches`` walks fresh permutations in consecutive chunks, so a
    request for more batches than fit in one pass behaves like several epochs.
    """

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, batch_size: int):
        if inputs.shape[0] != targets.shape[0]:
            raise DomainError("inputs and targets differ in length")
        if batch_size < 1:
            raise DomainError("batch size must be >= 1")
        if inputs.shape[0] < batch_size:
            raise DomainError(f"partition of {inputs.shape[0]} examples cannot fill a batch of {batch_size}")
        self.inputs = inputs
        self.targets = targets
        self.batch_size = batch_size

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def batches_per_epoch(self) -> int:
        return len(self) // self.batch_size

    def sample(self, rng: np.random.Generator, size: int | None = None) -> Batch:
        size = self.batch_size if size is None else size
        idx = rng.choice(len(self), size=min(size, len(self)), replace=False)
        return Batch(self.inputs[idx], self.targets[idx])

    def sample_batches(self, rng: np.random.Generator, k: int) -> list[Batch]:
        per_epoch = self.batches_per_epoch
        batches = []
        while len(batches) < k:
            order = rng.permutation(len(self))
            for j in range(min(per_epoch, k - len(batches))):
                idx = order[j * self.batch_size:(j + 1) * self.batch_size]
                batches.append(Batch(self.inputs[idx], self.targets[idx]))
        return batches

    def epoch(self, rng: np.random.Generator) -> list[Batch]:
        return self.sample_batches(rng, self.batches_per_epoch)

    def full(self) -> Batch:
        return Batch(self.inputs, self.targets)


class ConstantStream:
    """Stream that always yields the same batch (handy for analytic objectives)."""

    def __init__(self, batch: Batch):
        self.batch = batch
        self.batch_size = batch.size

    def sample(self, rng=None, size=None) -> Batch:
        return self.batch

    def sample_batches(self, rng, k: int) -> list[Batch]:
        return [self.batch] * k

    def full(self) -> Batch:
        return self.batch
