"""Membership-inference metrics and cosine-similarity replication retrieval.

The four MIA metrics are computed from a model's output distribution on a
sample. A model leaks membership when the metric distributions of its
training members and of fresh non-members differ; :func:`mia_report`
summarizes this by the absolute gap between the two means.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ContractViolation
from .learner import PROB_CLIP, ModelParams, forward

METRICS = ("confidence", "loss", "entropy", "modified_entropy")


def _probs_labels(probs, label):
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(label)
    c = p.shape[-1]
    if np.any(y < 0) or np.any(y >= c):
        raise ContractViolation(f"label out of range for {c} classes")
    return p, y.astype(np.int64)


def _true_prob(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    if p.ndim == 1:
        return p[y]
    return p[np.arange(p.shape[0]), y]


def confidence(probs, label):
    """Probability assigned to the true label, clipped below at 1e-12."""
    p, y = _probs_labels(probs, label)
    return np.clip(_true_prob(p, y), PROB_CLIP, 1.0)


def sample_loss(probs, label):
    return -np.log(confidence(probs, label)) + 0.0


def entropy(probs):
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1) + 0.0


def modified_entropy(probs, label):
    """``-(1 - p_y) log p_y - sum_{i != y} p_i log(1 - p_i)``; zero for a confident correct prediction."""
    p, y = _probs_labels(probs, label)
    p_y = np.clip(_true_prob(p, y), PROB_CLIP, 1.0)
    own = -(1.0 - p_y) * np.log(p_y)
    rest = p * np.log(np.clip(1.0 - p, PROB_CLIP, 1.0))
    mask = np.zeros_like(p, dtype=bool)
    if p.ndim == 1:
        mask[y] = True
    else:
        mask[np.arange(p.shape[0]), y] = True
    other = -np.where(mask, 0.0, rest).sum(axis=-1)
    return own + other + 0.0


def metric_values(probs, labels) -> dict[str, np.ndarray]:
    return {
        "confidence": confidence(probs, labels),
        "loss": sample_loss(probs, labels),
        "entropy": entropy(probs),
        "modified_entropy": modified_entropy(probs, labels),
    }


class MetricGap(NamedTuple):
    member_mean: float
    nonmember_mean: float
    abs_gap: float


@dataclass
class MIAReport:
    metrics: dict[str, MetricGap]
    member_count: int
    nonmember_count: int
    member_values: dict[str, np.ndarray] = field(repr=False)
    nonmember_values: dict[str, np.ndarray] = field(repr=False)

    def gap(self, metric: str) -> float:
        return self.metrics[metric].abs_gap

    def to_csv(self, path) -> None:
        """Per-sample metric values, one row per (side, sample)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["side", "sample_index", *METRICS])
            for side, values in (("member", self.member_values), ("nonmember", self.nonmember_values)):
                n = values[METRICS[0]].size
                for i in range(n):
                    writer.writerow([side, i, *(repr(float(values[m][i])) for m in METRICS)])


def _side_values(params: ModelParams, data) -> dict[str, np.ndarray]:
    if len(data) == 0:
        raise ContractViolation("membership sets must be nonempty")
    return metric_values(forward(params, data.features), data.labels)


def mia_report(model_params: ModelParams, member_set, nonmember_set) -> MIAReport:
    members = _side_values(model_params, member_set)
    nonmembers = _side_values(model_params, nonmember_set)
    metrics = {}
    for m in METRICS:
        a = math.fsum(members[m]) / members[m].size
        b = math.fsum(nonmembers[m]) / nonmembers[m].size
        metrics[m] = MetricGap(a, b, abs(a - b))
    return MIAReport(metrics, len(member_set), len(nonmember_set), members, nonmembers)


@dataclass
class RetrievalReport:
    query_index: np.ndarray  # original index of each reported query
    top_indices: np.ndarray  # (queries, k) into the reference set
    top_similarities: np.ndarray  # (queries, k), descending
    threshold: float
    excluded_queries: list[int] = field(default_factory=list)
    excluded_references: list[int] = field(default_factory=list)

    @property
    def replication_flags(self) -> np.ndarray:
        return self.top_similarities[:, 0] >= self.threshold

    @property
    def flagged_fraction(self) -> float:
        flags = self.replication_flags
        return float(flags.mean()) if flags.size else 0.0

    def to_csv(self, path) -> None:
        flags = self.replication_flags
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["query_index", "rank", "reference_index", "similarity", "flagged"])
            for row, q in enumerate(self.query_index):
                for rank in range(self.top_indices.shape[1]):
                    writer.writerow([
                        int(q),
                        rank + 1,
                        int(self.top_indices[row, rank]),
                        repr(float(self.top_similarities[row, rank])),
                        int(flags[row]) if rank == 0 else 0,
                    ])


def _features(data) -> np.ndarray:
    x = data.features if hasattr(data, "features") else data
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def _normalized(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray, list[int]]:
    norms = np.linalg.norm(x, axis=1)
    keep = np.flatnonzero(norms > 0)
    dropped = np.flatnonzero(norms == 0).tolist()
    if dropped:
        warnings.warn(f"{len(dropped)} zero-norm {what} vector(s) excluded from retrieval", RuntimeWarning, stacklevel=3)
    return x[keep] / norms[keep, None], keep, dropped


def retrieval(query_set, reference_set, k: int = 2, threshold: float = 0.999, chunk: int = 1024) -> RetrievalReport:
    """Exact top-``k`` cosine neighbours of each query among the references.

    Ties in similarity go to the lower reference index.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if not 0 < threshold <= 1:
        raise ConfigError("threshold must lie in (0, 1]")
    q, q_keep, q_drop = _normalized(_features(query_set), "query")
    r, r_keep, r_drop = _normalized(_features(reference_set), "reference")
    if q.shape[0] == 0 or r.shape[0] == 0:
        raise ContractViolation("retrieval needs nonempty query and reference sets")
    k_eff = min(k, r.shape[0])
    idx_out = np.empty((q.shape[0], k_eff), dtype=np.int64)
    sim_out = np.empty((q.shape[0], k_eff), dtype=np.float64)
    for start in range(0, q.shape[0], chunk):
        sims = np.clip(q[start : start + chunk] @ r.T, -1.0, 1.0)
        # stable sort of negated similarity keeps lower reference index first on ties
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k_eff]
        idx_out[start : start + chunk] = r_keep[order]
        sim_out[start : start + chunk] = np.take_along_axis(sims, order, axis=1)
    return RetrievalReport(q_keep, idx_out, sim_out, float(threshold), q_drop, r_drop)
