"""Synthetic ground truth: Gaussian class x domain distributions and labeled sampling."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from . import _seeding
from .errors import ConfigError, ContractViolation

# Worlds whose closest pair of class means (within a domain) is nearer than
# this many within-class standard deviations are re-drawn with seed + 1.
SEPARATION_FLOOR = 1.5
MAX_REDRAWS = 1000


@dataclass(frozen=True, eq=False)
class WorldSpec:
    num_classes: int
    num_domains: int
    feature_dim: int
    class_domain_means: np.ndarray  # (num_classes, num_domains, feature_dim)
    within_std: float
    mean_radius: float
    seed: int
    # every mean is center + a class-specific part of norm mean_radius
    center: np.ndarray = None

    @property
    def world_id(self) -> str:
        return f"world-{self.seed}"

    def mean(self, class_id: int, domain_id: int) -> np.ndarray:
        return self.class_domain_means[class_id, domain_id]

    def bounds(self, width: float = 4.0) -> tuple[float, float]:
        """Per-coordinate range that holds essentially every sample of this world."""
        offset = float(np.linalg.norm(self.center)) if self.center is not None else 0.0
        r = offset + self.mean_radius + width * self.within_std
        return -r, r

    @property
    def shared_offset(self) -> float:
        return float(np.linalg.norm(self.center)) if self.center is not None else 0.0


class LabeledSample(NamedTuple):
    features: np.ndarray
    label: int
    domain: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented labeled data; ``samples`` gives the row view."""

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    world_id: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        d = np.asarray(self.domains, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or not (x.shape[0] == y.size == d.size):
            raise ContractViolation("features, labels and domains disagree in length")
        for arr in (x, y, d):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "domains", d)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def samples(self) -> Iterator[LabeledSample]:
        for x, y, d in zip(self.features, self.labels, self.domains):
            yield LabeledSample(x, int(y), int(d))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.domains[idx], self.world_id)

    @classmethod
    def concat(cls, parts: list["Dataset"], world_id: str = "") -> "Dataset":
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.domains for p in parts]),
            world_id or (parts[0].world_id if parts else ""),
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["domain", "label"] + [f"f{i}" for i in range(self.feature_dim)])
            for x, y, d in zip(self.features, self.labels, self.domains):
                writer.writerow([int(d), int(y)] + [repr(float(v)) for v in x])

    @classmethod
    def from_csv(cls, path, world_id: str = "") -> "Dataset":
        rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 2:], rows[:, 1].astype(np.int64), rows[:, 0].astype(np.int64), world_id)


def _min_separation(means: np.ndarray) -> float:
    best = np.inf
    for dom in range(means.shape[1]):
        m = means[:, dom, :]
        for a, b in itertools.combinations(range(m.shape[0]), 2):
            best = min(best, float(np.linalg.norm(m[a] - m[b])))
    return best


def _draw_means(num_classes, num_domains, feature_dim, mean_radius, seed) -> np.ndarray:
    g = _seeding.rng(seed, "world-means")
    raw = g.standard_normal((num_classes, num_domains, feature_dim))
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True) * mean_radius


def make_world(
    num_classes: int = 10,
    num_domains: int = 1,
    feature_dim: int = 64,
    mean_radius: float = 5.0,
    within_std: float = 2.5,
    seed: int = 0,
    shared_offset: float = 0.0,
) -> WorldSpec:
    """Draw one mean per (class, domain) uniformly on a sphere of radius ``mean_radius``.

    With ``shared_offset > 0`` the sphere is centred at a random point at that
    distance from the origin instead of at the origin, giving all classes a
    common mean component that they do not share in the centred world.
    """
    if num_classes < 1 or num_domains < 1:
        raise ConfigError("num_classes and num_domains must be >= 1")
    if feature_dim < 2:
        raise ConfigError("feature_dim must be >= 2")
    if not (mean_radius > 0 and within_std > 0):
        raise ConfigError("mean_radius and within_std must be positive")
    if shared_offset < 0:
        raise ConfigError("shared_offset must be >= 0")
    draw_seed = int(seed)
    for _ in range(MAX_REDRAWS):
        means = _draw_means(num_classes, num_domains, feature_dim, mean_radius, draw_seed)
        if num_classes < 2 or _min_separation(means) >= SEPARATION_FLOOR * within_std:
            break
        draw_seed += 1
    else:
        raise ConfigError("could not draw a world meeting the class separation floor")
    direction = _seeding.rng(seed, "world-center").standard_normal(feature_dim)
    center = direction / np.linalg.norm(direction) * shared_offset
    means = means + center
    means.setflags(write=False)
    center.setflags(write=False)
    return WorldSpec(
        num_classes, num_domains, feature_dim, means, float(within_std), float(mean_radius), int(seed), center
    )


def sample_dataset(world: WorldSpec, n_per_class_per_domain: int, seed: int) -> Dataset:
    """``n`` Gaussian draws for every (class, domain), ordered by class then domain."""
    if n_per_class_per_domain < 1:
        raise ConfigError("n_per_class_per_domain must be >= 1")
    n = int(n_per_class_per_domain)
    g = _seeding.rng(seed, "sample", world.seed)
    c, k, dim = world.num_classes, world.num_domains, world.feature_dim
    noise = g.standard_normal((c, k, n, dim)) * world.within_std
    x = (world.class_domain_means[:, :, None, :] + noise).reshape(-1, dim)
    labels = np.repeat(np.arange(c), k * n)
    domains = np.tile(np.repeat(np.arange(k), n), c)
    return Dataset(x, labels, domains, world.world_id)
