"""Experiment configuration schema.

Configs are JSON documents. Every field has a default; unknown keys are
rejected. Validation errors are reported with the line of the offending key.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

PROTOCOLS = ("fedavg", "fgl_oneshot", "fgl_multiround", "fgl_multiround_syn", "centralized")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WorldConfig(_Strict):
    num_classes: int = Field(10, ge=2)
    num_domains: int = Field(1, ge=1)
    feature_dim: int = Field(64, ge=2)
    mean_radius: float = Field(5.0, gt=0)
    within_std: float = Field(2.5, gt=0)
    shared_offset: float = Field(20.0, ge=0)
    train_per_class: int = Field(200, ge=1)
    test_per_class: int = Field(200, ge=1)


class PartitionConfig(_Strict):
    kind: Literal["dirichlet", "iid", "domain"] = "dirichlet"
    beta: float = Field(0.5, gt=0)
    num_clients: int = Field(5, ge=2)
    client_fraction: float = Field(1.0, gt=0, le=1)


class OracleConfig(_Strict):
    fidelity_eps: Union[float, list[float]] = 0.5
    p_mem: float = Field(0.0, ge=0, le=1)
    mem_pool_size: int = Field(1000, ge=0)
    instance_std: Optional[float] = Field(None, gt=0)

    @field_validator("fidelity_eps")
    @classmethod
    def _nonnegative(cls, v):
        values = v if isinstance(v, list) else [v]
        if any(e < 0 for e in values):
            raise ValueError("fidelity_eps must be >= 0")
        return v


class TrainSettings(_Strict):
    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(128, ge=1)
    local_epochs: int = Field(5, ge=0)
    server_epochs: int = Field(30, ge=0)
    finetune_epochs: int = Field(5, ge=0)
    rounds: int = Field(30, ge=1)  # FedAvg
    fgl_rounds: int = Field(5, ge=2)  # multi-round FGL
    hidden_dim: int = Field(0, ge=0)


class MIASettings(_Strict):
    enabled: bool = False
    protocols: list[Literal[PROTOCOLS]] = ["fedavg", "fgl_oneshot"]
    export_samples: bool = True


class RetrievalSettings(_Strict):
    enabled: bool = False
    reference: Literal["mem_pool", "train"] = "mem_pool"
    k: int = Field(2, ge=1)
    threshold: float = Field(0.999, gt=0, le=1)
    max_queries: Optional[int] = Field(None, ge=1)


class OutputSettings(_Strict):
    dir: Optional[str] = None
    results: str = "results.csv"
    export_ledger: bool = False


class ExperimentConfig(_Strict):
    world: WorldConfig = WorldConfig()
    partition: PartitionConfig = PartitionConfig()
    oracle: OracleConfig = OracleConfig()
    prompt_kind: Literal["class_level", "instance_level"] = "class_level"
    protocol: Literal[PROTOCOLS] = "fgl_oneshot"
    train: TrainSettings = TrainSettings()
    n_per_class_prompt: int = Field(500, ge=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    mia: MIASettings = MIASettings()
    retrieval: RetrievalSettings = RetrievalSettings()
    output: OutputSettings = OutputSettings()

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def beta_label(self) -> str:
        if self.partition.kind == "iid":
            return "iid"
        if self.partition.kind == "domain":
            return "by-domain"
        return repr(float(self.partition.beta))


class MatrixAxes(_Strict):
    protocol: Optional[list[Literal[PROTOCOLS]]] = None
    beta: Optional[list[Union[float, Literal["iid"]]]] = None
    prompt_kind: Optional[list[Literal["class_level", "instance_level"]]] = None
    n_per_class_prompt: Optional[list[int]] = None
    fidelity_eps: Optional[list[float]] = None


class MatrixConfig(_Strict):
    base: ExperimentConfig = ExperimentConfig()
    axes: MatrixAxes = MatrixAxes()
    seeds: Optional[list[int]] = None
    output: OutputSettings = OutputSettings(results="matrix.csv")

    def axis_items(self) -> list[tuple[str, list]]:
        items = [(name, values) for name, values in self.axes if values is not None]
        if any(len(v) == 0 for _, v in items):
            raise ConfigError("matrix axes must not be empty")
        return items


def _line_of(text: str, loc: tuple) -> Optional[int]:
    """Best-effort line number of the JSON key named by a validation location."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    pattern = re.compile(r'"' + re.escape(keys[-1]) + r'"\s*:')
    for lineno, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return lineno
    return None


def _parse(model, text: str, source: str):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            lineno = _line_of(text, err["loc"])
            prefix = f"{source}:{lineno}" if lineno else source
            lines.append(f"{prefix}: {where}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return _parse(ExperimentConfig, text, str(path))


def load_matrix(path) -> MatrixConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return _parse(MatrixConfig, text, str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    return _parse(ExperimentConfig, text, source)
