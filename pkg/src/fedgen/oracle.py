"""Generative oracle standing in for a pretrained text-to-image model.

Clients describe their data with prompts; the server turns prompts into
labeled synthetic samples. A class-level prompt selects the oracle's own
(imperfect) belief about a (class, domain) distribution. An instance-level
prompt carries an 8-bit quantized descriptor of one real sample.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _seeding
from .errors import ConfigError, ContractViolation
from .worldgen import Dataset, WorldSpec

QUANT_LEVELS = 255


class PromptKind(enum.IntEnum):
    CLASS_LEVEL = 0
    INSTANCE_LEVEL = 1

    @classmethod
    def parse(cls, value) -> "PromptKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper()]
        except KeyError:
            raise ConfigError(f"unknown prompt kind {value!r}") from None

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    class_id: int
    domain_id: int
    descriptor: Optional[bytes] = None

    def __post_init__(self):
        if self.kind == PromptKind.CLASS_LEVEL and self.descriptor is not None:
            raise ContractViolation("class-level prompts carry no descriptor")
        if self.kind == PromptKind.INSTANCE_LEVEL and not self.descriptor:
            raise ContractViolation("instance-level prompts need a descriptor")


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[Prompt, ...]
    source_client: int = -1

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)


@dataclass(frozen=True, eq=False)
class OracleState:
    approx_means: np.ndarray  # (classes, domains, dim)
    within_std: float
    fidelity_eps: np.ndarray  # (domains,)
    mem_pool: Dataset
    p_mem: float
    instance_std: float
    seed: int
    bounds: tuple[float, float]
    _pool_unit: np.ndarray = field(repr=False, default=None)

    @property
    def feature_dim(self) -> int:
        return self.approx_means.shape[-1]


def quantize(features, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    if not lo < hi:
        raise ConfigError(f"invalid quantization bounds ({lo}, {hi})")
    scaled = (np.asarray(features, dtype=np.float64) - lo) / (hi - lo) * QUANT_LEVELS
    return np.clip(np.rint(scaled), 0, QUANT_LEVELS).astype(np.uint8)


def dequantize(codes, bounds: tuple[float, float]) -> np.ndarray:
    lo, hi = bounds
    return lo + np.asarray(codes, dtype=np.float64) / QUANT_LEVELS * (hi - lo)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def pretrain_oracle(
    world: WorldSpec,
    fidelity_eps_per_domain,
    mem_pool_size: int = 1000,
    p_mem: float = 0.0,
    instance_std: float | None = None,
    seed: int = 0,
    bounds: tuple[float, float] | None = None,
) -> OracleState:
    """Build the oracle's approximate world and draw its memorization pool.

    ``fidelity_eps_per_domain`` is a scalar or one value per domain: every
    (class, domain) mean is displaced by exactly that distance in a random
    direction. The pool comes from the true world on its own seed stream, so it
    never coincides with client data.
    """
    eps = np.broadcast_to(np.asarray(fidelity_eps_per_domain, dtype=np.float64), (world.num_domains,)).copy()
    if np.any(eps < 0):
        raise ConfigError("fidelity_eps must be >= 0")
    if mem_pool_size < 0:
        raise ConfigError("mem_pool_size must be >= 0")
    if not 0.0 <= p_mem <= 1.0:
        raise ConfigError("p_mem must lie in [0, 1]")
    if p_mem > 0 and mem_pool_size == 0:
        raise ConfigError("p_mem > 0 needs a nonempty mem_pool")
    if instance_std is None:
        instance_std = world.within_std / 4
    if not instance_std > 0:
        raise ConfigError("instance_std must be positive")

    g = _seeding.rng(seed, "oracle-fidelity", world.seed)
    direction = _unit_rows(g.standard_normal(world.class_domain_means.shape))
    approx = world.class_domain_means + direction * eps[None, :, None]
    # eps == 0 must reproduce the true means bit for bit
    approx[:, eps == 0, :] = world.class_domain_means[:, eps == 0, :]

    gp = _seeding.rng(seed, "oracle-mem-pool", world.seed)
    cells = world.num_classes * world.num_domains
    cell = np.arange(mem_pool_size) % cells
    labels, domains = cell // world.num_domains, cell % world.num_domains
    pool_x = world.class_domain_means[labels, domains] + gp.standard_normal(
        (mem_pool_size, world.feature_dim)
    ) * world.within_std
    pool = Dataset(pool_x, labels, domains, world.world_id + "-mempool")

    approx.setflags(write=False)
    eps.setflags(write=False)
    return OracleState(
        approx_means=approx,
        within_std=world.within_std,
        fidelity_eps=eps,
        mem_pool=pool,
        p_mem=float(p_mem),
        instance_std=float(instance_std),
        seed=int(seed),
        bounds=tuple(bounds) if bounds is not None else world.bounds(),
        _pool_unit=_unit_rows(pool.features),
    )


def class_prompts(local_dataset: Dataset, source_client: int = -1) -> PromptSet:
    if len(local_dataset) == 0:
        raise ContractViolation("cannot describe an empty dataset")
    pairs = sorted(set(zip(local_dataset.labels.tolist(), local_dataset.domains.tolist())))
    return PromptSet(tuple(Prompt(PromptKind.CLASS_LEVEL, c, d) for c, d in pairs), source_client)


def instance_prompts(local_dataset: Dataset, world_bounds: tuple[float, float], source_client: int = -1) -> PromptSet:
    if len(local_dataset) == 0:
        raise ContractViolation("cannot describe an empty dataset")
    codes = quantize(local_dataset.features, world_bounds)
    prompts = tuple(
        Prompt(PromptKind.INSTANCE_LEVEL, int(y), int(d), row.tobytes())
        for row, y, d in zip(codes, local_dataset.labels, local_dataset.domains)
    )
    return PromptSet(prompts, source_client)


def make_prompts(local_dataset: Dataset, kind, world_bounds, source_client: int = -1) -> PromptSet:
    if PromptKind.parse(kind) == PromptKind.CLASS_LEVEL:
        return class_prompts(local_dataset, source_client)
    return instance_prompts(local_dataset, world_bounds, source_client)


def prompt_center(oracle: OracleState, prompt: Prompt) -> np.ndarray:
    """The location a prompt asks the oracle to sample around."""
    if prompt.kind == PromptKind.CLASS_LEVEL:
        return oracle.approx_means[prompt.class_id, prompt.domain_id]
    codes = np.frombuffer(prompt.descriptor, dtype=np.uint8)
    if codes.size != oracle.feature_dim:
        raise ContractViolation(f"descriptor has {codes.size} entries, oracle expects {oracle.feature_dim}")
    return dequantize(codes, oracle.bounds)


def nearest_memorized(oracle: OracleState, center: np.ndarray) -> int:
    """Index of the pool sample with the highest cosine similarity to ``center``."""
    norm = np.linalg.norm(center)
    if norm == 0:
        return 0
    return int(np.argmax(oracle._pool_unit @ (center / norm)))


def synthesize(oracle: OracleState, aggregated_prompts: Sequence[Prompt], n_per_class_prompt: int, seed: int) -> Dataset:
    """Sample a labeled synthetic dataset from prompts.

    A class-level prompt emits ``n_per_class_prompt`` samples around the
    oracle's mean for its (class, domain). An instance-level prompt emits one
    sample around its dequantized descriptor with spread ``instance_std``.
    Each emission independently comes back as a verbatim pool sample with
    probability ``p_mem``.
    """
    prompts = list(aggregated_prompts)
    if not prompts:
        raise ContractViolation("no prompts to synthesize from")
    if n_per_class_prompt < 1:
        raise ConfigError("n_per_class_prompt must be >= 1")
    g = _seeding.rng(seed, "synthesize", oracle.seed)
    dim = oracle.feature_dim
    chunks, labels, domains = [], [], []
    for prompt in prompts:
        center = prompt_center(oracle, prompt)
        if prompt.kind == PromptKind.CLASS_LEVEL:
            n, std = int(n_per_class_prompt), oracle.within_std
        else:
            n, std = 1, oracle.instance_std
        draws = center + g.standard_normal((n, dim)) * std
        replace = g.random(n) < oracle.p_mem
        if replace.any():
            draws[replace] = oracle.mem_pool.features[nearest_memorized(oracle, center)]
        chunks.append(draws)
        labels.append(np.full(n, prompt.class_id))
        domains.append(np.full(n, prompt.domain_id))
    return Dataset(np.concatenate(chunks), np.concatenate(labels), np.concatenate(domains), "synthetic")
