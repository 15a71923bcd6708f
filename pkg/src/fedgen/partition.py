"""Client partitioners: Dirichlet label skew, IID, and one-domain-per-client."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import _seeding
from .errors import ConfigError, ContractViolation
from .worldgen import Dataset

IID = "iid"
BY_DOMAIN = "by-domain"
MAX_EMPTY_REDRAWS = 10_000


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    client_indices: tuple[np.ndarray, ...]
    beta: Union[float, str]
    seed: int

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [int(ix.size) for ix in self.client_indices]

    def shard(self, dataset: Dataset, client_id: int) -> Dataset:
        return dataset.subset(self.client_indices[client_id])

    def __eq__(self, other):
        if not isinstance(other, PartitionPlan):
            return NotImplemented
        return (
            self.beta == other.beta
            and self.seed == other.seed
            and self.num_clients == other.num_clients
            and all(np.array_equal(a, b) for a, b in zip(self.client_indices, other.client_indices))
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["client_id", "sample_index"])
            for cid, idx in enumerate(self.client_indices):
                for i in idx:
                    writer.writerow([cid, int(i)])


def _freeze(lists) -> tuple[np.ndarray, ...]:
    out = []
    for ix in lists:
        arr = np.sort(np.asarray(ix, dtype=np.int64))
        arr.setflags(write=False)
        out.append(arr)
    return tuple(out)


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total``; leftover units go to the largest fractions."""
    raw = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort on the negated remainder: ties resolve to the lower client id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _check_clients(dataset: Dataset, num_clients: int) -> None:
    if num_clients < 2:
        raise ConfigError("num_clients must be >= 2")
    if num_clients > len(dataset):
        raise ConfigError(f"{num_clients} clients but only {len(dataset)} samples")


def dirichlet_partition(dataset: Dataset, num_clients: int, beta: float, seed: int) -> PartitionPlan:
    """Per class, split its samples over clients with proportions ``p ~ Dir(beta)``.

    Draws that leave some client with no samples at all are discarded and the
    whole plan is redrawn from the next seed offset.
    """
    _check_clients(dataset, num_clients)
    if not beta > 0:
        raise ConfigError("beta must be positive")
    labels = dataset.labels
    classes = np.unique(labels)
    for attempt in range(MAX_EMPTY_REDRAWS):
        g = _seeding.rng(seed, "dirichlet", attempt)
        buckets: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in classes:
            members = np.flatnonzero(labels == c)
            g.shuffle(members)
            p = g.dirichlet(np.full(num_clients, float(beta)))
            counts = largest_remainder(p, members.size)
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(num_clients):
                buckets[k].append(members[bounds[k] : bounds[k + 1]])
        lists = [np.concatenate(b) for b in buckets]
        if all(ix.size > 0 for ix in lists):
            return PartitionPlan(_freeze(lists), float(beta), int(seed))
    raise ConfigError(f"no Dirichlet draw gave every client a sample in {MAX_EMPTY_REDRAWS} tries")


def iid_partition(dataset: Dataset, num_clients: int, seed: int) -> PartitionPlan:
    """Global shuffle followed by a round-robin deal."""
    _check_clients(dataset, num_clients)
    order = _seeding.rng(seed, "iid").permutation(len(dataset))
    lists = [order[k::num_clients] for k in range(num_clients)]
    return PartitionPlan(_freeze(lists), IID, int(seed))


def domain_partition(dataset: Dataset, num_clients: int) -> PartitionPlan:
    num_domains = int(dataset.domains.max()) + 1 if len(dataset) else 0
    if num_clients != num_domains:
        raise ConfigError(f"{num_clients} clients for {num_domains} domains")
    lists = [np.flatnonzero(dataset.domains == k) for k in range(num_clients)]
    if any(ix.size == 0 for ix in lists):
        raise ConfigError("some domain has no samples")
    return PartitionPlan(_freeze(lists), BY_DOMAIN, 0)


def label_histogram(plan: PartitionPlan, dataset: Dataset, num_classes: int | None = None) -> np.ndarray:
    """Class counts per client, shape ``(num_clients, num_classes)``."""
    n = len(dataset)
    if num_classes is None:
        num_classes = int(dataset.labels.max()) + 1
    table = np.zeros((plan.num_clients, num_classes), dtype=np.int64)
    for k, idx in enumerate(plan.client_indices):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ContractViolation(f"client {k} holds an index outside [0, {n})")
        table[k] = np.bincount(dataset.labels[idx], minlength=num_classes)
    return table


def mean_max_class_mass(plan: PartitionPlan, dataset: Dataset) -> float:
    """Average over clients of the fraction of the client's data in its largest class."""
    table = label_histogram(plan, dataset)
    return float(np.mean(table.max(axis=1) / table.sum(axis=1)))


def make_partition(dataset: Dataset, kind: str, num_clients: int, beta: float, seed: int) -> PartitionPlan:
    if kind == "dirichlet":
        return dirichlet_partition(dataset, num_clients, beta, seed)
    if kind == "iid":
        return iid_partition(dataset, num_clients, seed)
    if kind == "domain":
        return domain_partition(dataset, num_clients)
    raise ConfigError(f"unknown partition kind {kind!r}")
