"""Protocol runners: FedAvg, one-shot FGL, and multi-round FGL (with or without
server-side fine-tuning on the round-1 synthetic set), plus a centralized
baseline. Clients and server only exchange data through a :class:`Channel`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .. import _seeding
from ..errors import ConfigError, ContractViolation, ProtocolError
from ..learner import ModelParams, ModelShape, TrainConfig, evaluate, init_params, sgd_train
from ..oracle import OracleState, Prompt, PromptKind, make_prompts, synthesize
from ..partition import PartitionPlan
from ..worldgen import Dataset, WorldSpec, sample_dataset
from .ledger import DOWN, UP, Channel, CommLedger
from .wire import Message, MessageKind


@dataclass(frozen=True)
class FedConfig:
    rounds: int = 30
    local_epochs: int = 5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    client_fraction: float = 1.0
    hidden_dim: int = 0
    test_per_class: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError("client_fraction must lie in (0, 1]")

    def train_config(self, epochs: int, *tags) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            epochs=epochs,
            batch_size=self.batch_size,
            seed=_seeding.derive(self.seed, *tags),
        )


@dataclass(frozen=True)
class FGLConfig(FedConfig):
    rounds: int = 5
    prompt_kind: str = "class_level"
    n_per_class_prompt: int = 500
    server_epochs: int = 30
    finetune_epochs: int = 5

    def __post_init__(self):
        super().__post_init__()
        PromptKind.parse(self.prompt_kind)
        if self.n_per_class_prompt < 1:
            raise ConfigError("n_per_class_prompt must be >= 1")


@dataclass
class RunResult:
    final_params: ModelParams
    per_round_accuracy: list[float]
    ledger: CommLedger
    config_echo: dict
    seed: int
    synthetic: Optional[Dataset] = None


def aggregate_params(param_list: Sequence[ModelParams]) -> ModelParams:
    """Coordinate-wise mean, summed in list order (callers pass ascending client id)."""
    if not param_list:
        raise ContractViolation("nothing to aggregate")
    shape = param_list[0].shape
    acc = np.zeros(shape.num_params, dtype=np.float64)
    for p in param_list:
        if p.shape != shape:
            raise ContractViolation(f"shape {tuple(p.shape)} differs from {tuple(shape)}")
        acc += p.values
    return ModelParams(acc / len(param_list), shape)


def aggregate_prompts(uploads: Sequence[Sequence[Prompt]]) -> tuple[Prompt, ...]:
    """Class-level prompts are deduplicated globally and sorted by (class, domain);
    instance-level prompts are concatenated in client order."""
    class_level = sorted(
        {(p.class_id, p.domain_id) for up in uploads for p in up if p.kind == PromptKind.CLASS_LEVEL}
    )
    merged = [Prompt(PromptKind.CLASS_LEVEL, c, d) for c, d in class_level]
    merged += [p for up in uploads for p in up if p.kind == PromptKind.INSTANCE_LEVEL]
    return tuple(merged)


def select_clients(num_clients: int, fraction: float, seed: int, round_: int) -> list[int]:
    if fraction >= 1.0:
        return list(range(num_clients))
    m = max(1, int(round(fraction * num_clients)))
    chosen = _seeding.rng(seed, "select", round_).choice(num_clients, size=m, replace=False)
    return sorted(int(k) for k in chosen)


def model_shape(world: WorldSpec, config: FedConfig) -> ModelShape:
    return ModelShape(world.feature_dim, config.hidden_dim, world.num_classes)


def default_test_set(world: WorldSpec, config: FedConfig) -> Dataset:
    return sample_dataset(world, config.test_per_class, _seeding.derive(config.seed, "test"))


def _echo(config: FedConfig, **extra) -> dict:
    return {**dataclasses.asdict(config), **extra}


def _client_update(
    channel: Channel, global_model: ModelParams, shard: Dataset, round_: int, client: int, config: FedConfig
) -> ModelParams:
    trained = sgd_train(global_model, shard, config.train_config(config.local_epochs, "local", round_, client))
    msg = channel.send(Message(MessageKind.LOCAL_MODEL_UP, round_, client, trained.values), UP, client)
    return ModelParams(msg.payload, global_model.shape)


def _broadcast(channel: Channel, model: ModelParams, round_: int, clients: Sequence[int]) -> ModelParams:
    received = model
    for k in clients:
        msg = channel.send(Message(MessageKind.GLOBAL_MODEL_DOWN, round_, k, model.values), DOWN, k)
        received = ModelParams(msg.payload, model.shape)
    return received


def run_fedavg(
    world: WorldSpec,
    dataset: Dataset,
    plan: PartitionPlan,
    config: FedConfig,
    *,
    test_set: Optional[Dataset] = None,
    channel: Optional[Channel] = None,
) -> RunResult:
    """Each round: send the global model down, train locally on real shards,
    upload, average."""
    channel = channel or Channel(world.feature_dim)
    test_set = test_set if test_set is not None else default_test_set(world, config)
    shape = model_shape(world, config)
    shards = [plan.shard(dataset, k) for k in range(plan.num_clients)]
    global_model = init_params(shape, _seeding.derive(config.seed, "init"))
    accuracy = []
    for r in range(1, config.rounds + 1):
        selected = select_clients(plan.num_clients, config.client_fraction, config.seed, r)
        updates = []
        for k in selected:
            start = _broadcast(channel, global_model, r, [k])
            updates.append(_client_update(channel, start, shards[k], r, k, config))
        global_model = aggregate_params(updates)
        accuracy.append(evaluate(global_model, test_set)[0])
    return RunResult(global_model, accuracy, channel.ledger, _echo(config, protocol="fedavg"), config.seed)


def collect_and_synthesize(
    dataset: Dataset, plan: PartitionPlan, oracle: OracleState, config: FGLConfig, channel: Channel
) -> Dataset:
    """Round-1 uplink: every client uploads prompts; the server merges them and synthesizes."""
    kind = PromptKind.parse(config.prompt_kind)
    uploads = []
    for k in range(plan.num_clients):
        prompts = make_prompts(plan.shard(dataset, k), kind, oracle.bounds, k)
        received = channel.send(Message(MessageKind.PROMPT_UPLOAD, 1, k, prompts.prompts), UP, k)
        uploads.append(received.payload)
    aggregated = aggregate_prompts(uploads)
    if not aggregated:
        raise ProtocolError("clients uploaded no prompts")
    return synthesize(oracle, aggregated, config.n_per_class_prompt, _seeding.derive(config.seed, "synth"))


def _first_round(
    world: WorldSpec, dataset: Dataset, plan: PartitionPlan, oracle: OracleState, config: FGLConfig, channel: Channel
) -> tuple[ModelParams, Dataset]:
    synthetic = collect_and_synthesize(dataset, plan, oracle, config, channel)
    model = init_params(model_shape(world, config), _seeding.derive(config.seed, "server-init"))
    model = sgd_train(model, synthetic, config.train_config(config.server_epochs, "server-train"))
    model = _broadcast(channel, model, 1, range(plan.num_clients))
    return model, synthetic


def run_fgl_oneshot(
    world: WorldSpec,
    dataset: Dataset,
    plan: PartitionPlan,
    oracle: OracleState,
    config: FGLConfig,
    *,
    test_set: Optional[Dataset] = None,
    channel: Optional[Channel] = None,
) -> RunResult:
    """Prompts up, server synthesizes and trains from scratch, model down. One round."""
    channel = channel or Channel(world.feature_dim)
    test_set = test_set if test_set is not None else default_test_set(world, config)
    model, synthetic = _first_round(world, dataset, plan, oracle, config, channel)
    acc = evaluate(model, test_set)[0]
    echo = _echo(config, protocol="fgl_oneshot")
    return RunResult(model, [acc], channel.ledger, echo, config.seed, synthetic)


def run_fgl_multiround(
    world: WorldSpec,
    dataset: Dataset,
    plan: PartitionPlan,
    oracle: OracleState,
    config: FGLConfig,
    with_syn_finetune: bool = False,
    *,
    test_set: Optional[Dataset] = None,
    channel: Optional[Channel] = None,
) -> RunResult:
    """One-shot round, then ``rounds - 1`` FedAvg rounds on real shards.

    Clients start each later round from the model they last received, so
    those rounds cost one upload and one download per client. With
    ``with_syn_finetune`` the server also trains the aggregate on the round-1
    synthetic set for ``finetune_epochs`` before sending it out.
    """
    if config.rounds < 2:
        raise ConfigError("multi-round FGL needs rounds >= 2")
    channel = channel or Channel(world.feature_dim)
    test_set = test_set if test_set is not None else default_test_set(world, config)
    shards = [plan.shard(dataset, k) for k in range(plan.num_clients)]
    global_model, synthetic = _first_round(world, dataset, plan, oracle, config, channel)
    accuracy = [evaluate(global_model, test_set)[0]]
    for r in range(2, config.rounds + 1):
        selected = select_clients(plan.num_clients, config.client_fraction, config.seed, r)
        updates = [_client_update(channel, global_model, shards[k], r, k, config) for k in selected]
        global_model = aggregate_params(updates)
        if with_syn_finetune:
            global_model = sgd_train(
                global_model, synthetic, config.train_config(config.finetune_epochs, "finetune", r)
            )
        global_model = _broadcast(channel, global_model, r, range(plan.num_clients))
        accuracy.append(evaluate(global_model, test_set)[0])
    protocol = "fgl_multiround_syn" if with_syn_finetune else "fgl_multiround"
    return RunResult(global_model, accuracy, channel.ledger, _echo(config, protocol=protocol), config.seed, synthetic)


def run_centralized(
    world: WorldSpec,
    dataset: Dataset,
    config: FGLConfig,
    *,
    test_set: Optional[Dataset] = None,
) -> RunResult:
    """Train once on the pooled real data for ``server_epochs``; nothing is transmitted."""
    test_set = test_set if test_set is not None else default_test_set(world, config)
    model = init_params(model_shape(world, config), _seeding.derive(config.seed, "server-init"))
    model = sgd_train(model, dataset, config.train_config(config.server_epochs, "central-train"))
    acc = evaluate(model, test_set)[0]
    return RunResult(model, [acc], CommLedger(), _echo(config, protocol="centralized"), config.seed)
