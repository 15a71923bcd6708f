"""Wire world -> partition -> oracle -> protocol for one config, and run grids of them."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import _seeding
from .config import ExperimentConfig, MatrixConfig
from .errors import FedGenError, TrainingDiverged
from .federation import (
    Channel,
    FedConfig,
    FGLConfig,
    RunResult,
    collect_and_synthesize,
    run_centralized,
    run_fedavg,
    run_fgl_multiround,
    run_fgl_oneshot,
)
from .oracle import OracleState, pretrain_oracle
from .partition import PartitionPlan, make_partition
from .privacy import METRICS, MIAReport, RetrievalReport, mia_report, retrieval
from .worldgen import Dataset, WorldSpec, make_world, sample_dataset

log = logging.getLogger(__name__)

OUT_ENV = "FEDGEN_OUT"
RESULT_COLUMNS = [
    "seed",
    "protocol",
    "beta",
    "prompt_kind",
    "final_accuracy",
    "per_round_accuracy",
    "uplink_bytes",
    "downlink_bytes",
    "status",
    "config",
]
MIA_COLUMNS = ["seed", "protocol", "metric", "member_mean", "nonmember_mean", "abs_gap", "member_count", "nonmember_count"]
RETRIEVAL_SUMMARY_COLUMNS = ["seed", "reference", "queries", "flagged", "flagged_fraction", "threshold"]


class SeedFailure(FedGenError):
    def __init__(self, seed: int, cause: Exception):
        self.seed = seed
        self.cause = cause
        super().__init__(f"seed {seed}: {cause}")


@dataclass
class Setup:
    world: WorldSpec
    train: Dataset
    test: Dataset
    plan: PartitionPlan
    oracle: OracleState


def build(config: ExperimentConfig, seed: int) -> Setup:
    w = config.world
    world = make_world(
        num_classes=w.num_classes,
        num_domains=w.num_domains,
        feature_dim=w.feature_dim,
        mean_radius=w.mean_radius,
        within_std=w.within_std,
        seed=seed,
        shared_offset=w.shared_offset,
    )
    train = sample_dataset(world, w.train_per_class, _seeding.derive(seed, "train"))
    test = sample_dataset(world, w.test_per_class, _seeding.derive(seed, "test"))
    p = config.partition
    plan = make_partition(train, p.kind, p.num_clients, p.beta, _seeding.derive(seed, "partition"))
    o = config.oracle
    oracle = pretrain_oracle(
        world, o.fidelity_eps, o.mem_pool_size, o.p_mem, o.instance_std, _seeding.derive(seed, "oracle")
    )
    return Setup(world, train, test, plan, oracle)


def protocol_config(config: ExperimentConfig, seed: int, protocol: Optional[str] = None) -> FedConfig:
    protocol = protocol or config.protocol
    t = config.train
    common = dict(
        local_epochs=t.local_epochs,
        learning_rate=t.learning_rate,
        momentum=t.momentum,
        batch_size=t.batch_size,
        client_fraction=config.partition.client_fraction,
        hidden_dim=t.hidden_dim,
        test_per_class=config.world.test_per_class,
        seed=seed,
    )
    if protocol == "fedavg":
        return FedConfig(rounds=t.rounds, **common)
    return FGLConfig(
        rounds=t.fgl_rounds,
        prompt_kind=config.prompt_kind,
        n_per_class_prompt=config.n_per_class_prompt,
        server_epochs=t.server_epochs,
        finetune_epochs=t.finetune_epochs,
        **common,
    )


def run_protocol(config: ExperimentConfig, setup: Setup, seed: int, protocol: Optional[str] = None) -> RunResult:
    protocol = protocol or config.protocol
    pc = protocol_config(config, seed, protocol)
    channel = Channel(setup.world.feature_dim)
    s = setup
    if protocol == "fedavg":
        return run_fedavg(s.world, s.train, s.plan, pc, test_set=s.test, channel=channel)
    if protocol == "fgl_oneshot":
        return run_fgl_oneshot(s.world, s.train, s.plan, s.oracle, pc, test_set=s.test, channel=channel)
    if protocol in ("fgl_multiround", "fgl_multiround_syn"):
        return run_fgl_multiround(
            s.world, s.train, s.plan, s.oracle, pc, protocol == "fgl_multiround_syn", test_set=s.test, channel=channel
        )
    return run_centralized(s.world, s.train, pc, test_set=s.test)


def _fmt(x: float) -> str:
    return repr(float(x))


def _config_json(config: ExperimentConfig, seed: int) -> str:
    resolved = config.resolved()
    resolved["seeds"] = [seed]
    return json.dumps(resolved, sort_keys=True, separators=(",", ":"))


def result_row(config: ExperimentConfig, seed: int, result: Optional[RunResult], status: str = "ok") -> dict:
    row = {
        "seed": seed,
        "protocol": config.protocol,
        "beta": config.beta_label(),
        "prompt_kind": config.prompt_kind,
        "final_accuracy": "",
        "per_round_accuracy": "",
        "uplink_bytes": "",
        "downlink_bytes": "",
        "status": status,
        "config": _config_json(config, seed),
    }
    if result is not None:
        row.update(
            final_accuracy=_fmt(result.per_round_accuracy[-1]),
            per_round_accuracy=";".join(_fmt(a) for a in result.per_round_accuracy),
            uplink_bytes=result.ledger.uplink_bytes,
            downlink_bytes=result.ledger.downlink_bytes,
        )
    return row


def mia_rows(seed: int, protocol: str, report: MIAReport) -> list[dict]:
    return [
        {
            "seed": seed,
            "protocol": protocol,
            "metric": m,
            "member_mean": _fmt(report.metrics[m].member_mean),
            "nonmember_mean": _fmt(report.metrics[m].nonmember_mean),
            "abs_gap": _fmt(report.metrics[m].abs_gap),
            "member_count": report.member_count,
            "nonmember_count": report.nonmember_count,
        }
        for m in METRICS
    ]


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def resolve_out_dir(config_dir: Optional[str], override: Optional[str]) -> Path:
    return Path(override or config_dir or os.environ.get(OUT_ENV) or "results")


def membership_sets(setup: Setup) -> tuple[Dataset, Dataset]:
    """Members are the clients' real training samples; non-members are fresh draws."""
    return setup.train, setup.test


def run_retrieval(config: ExperimentConfig, setup: Setup, seed: int, synthetic: Optional[Dataset] = None) -> RetrievalReport:
    if synthetic is None:
        pc = protocol_config(config, seed, "fgl_oneshot")
        synthetic = collect_and_synthesize(setup.train, setup.plan, setup.oracle, pc, Channel(setup.world.feature_dim))
    queries = synthetic.features
    if config.retrieval.max_queries is not None:
        queries = queries[: config.retrieval.max_queries]
    reference = setup.oracle.mem_pool if config.retrieval.reference == "mem_pool" else setup.train
    return retrieval(queries, reference, config.retrieval.k, config.retrieval.threshold)


def retrieval_summary(config: ExperimentConfig, seed: int, report: RetrievalReport) -> dict:
    flags = report.replication_flags
    return {
        "seed": seed,
        "reference": config.retrieval.reference,
        "queries": int(flags.size),
        "flagged": int(flags.sum()),
        "flagged_fraction": _fmt(report.flagged_fraction),
        "threshold": _fmt(report.threshold),
    }


@dataclass
class SeedOutput:
    row: dict
    mia: list[dict]
    retrieval: Optional[dict]


def _run_seed(config: ExperimentConfig, seed: int, out_dir: Path) -> SeedOutput:
    setup = build(config, seed)
    result = run_protocol(config, setup, seed)
    mia, summary = [], None
    tag = f"{config.protocol}_seed{seed}"
    if config.output.export_ledger:
        result.ledger.to_csv(out_dir / f"ledger_{tag}.csv")
    if config.mia.enabled:
        report = mia_report(result.final_params, *membership_sets(setup))
        mia = mia_rows(seed, config.protocol, report)
        if config.mia.export_samples:
            report.to_csv(out_dir / f"mia_samples_{tag}.csv")
    if config.retrieval.enabled and config.protocol != "centralized" and config.protocol != "fedavg":
        rep = run_retrieval(config, setup, seed, result.synthetic)
        rep.to_csv(out_dir / f"retrieval_{tag}.csv")
        summary = retrieval_summary(config, seed, rep)
    return SeedOutput(result_row(config, seed, result), mia, summary)


def _seed_job(args):
    config, seed, out_dir = args
    try:
        return _run_seed(config, seed, out_dir)
    except TrainingDiverged as exc:
        raise SeedFailure(seed, exc) from None


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> list[Path]:
    """Run every seed of ``config`` and write the results (and optional MIA /
    retrieval) CSVs. Returns the paths written."""
    out = resolve_out_dir(config.output.dir, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = _map(_seed_job, [(config, s, out) for s in config.seeds], jobs)
    paths = [write_csv(out / config.output.results, RESULT_COLUMNS, [o.row for o in outputs])]
    if config.mia.enabled:
        paths.append(write_csv(out / "mia_summary.csv", MIA_COLUMNS, [r for o in outputs for r in o.mia]))
    summaries = [o.retrieval for o in outputs if o.retrieval is not None]
    if summaries:
        paths.append(write_csv(out / "retrieval_summary.csv", RETRIEVAL_SUMMARY_COLUMNS, summaries))
    return paths


def _mia_job(args):
    config, seed, protocol, out_dir, export = args
    try:
        setup = build(config, seed)
        result = run_protocol(config, setup, seed, protocol)
    except TrainingDiverged as exc:
        raise SeedFailure(seed, exc) from None
    report = mia_report(result.final_params, *membership_sets(setup))
    if export:
        report.to_csv(out_dir / f"mia_samples_{protocol}_seed{seed}.csv")
    return mia_rows(seed, protocol, report)


def run_mia(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> list[Path]:
    """Member/non-member metric gaps for each protocol in ``config.mia.protocols``."""
    out = resolve_out_dir(config.output.dir, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = [
        (config, s, p, out, config.mia.export_samples) for p in config.mia.protocols for s in config.seeds
    ]
    rows = [r for chunk in _map(_mia_job, items, jobs) for r in chunk]
    return [write_csv(out / "mia_summary.csv", MIA_COLUMNS, rows)]


def _retrieve_job(args):
    config, seed, out_dir = args
    setup = build(config, seed)
    report = run_retrieval(config, setup, seed)
    report.to_csv(out_dir / f"retrieval_seed{seed}.csv")
    return retrieval_summary(config, seed, report)


def run_retrieve(config: ExperimentConfig, out_dir=None, jobs: int = 1) -> list[Path]:
    """Cosine retrieval of round-1 synthetic samples against the reference set."""
    out = resolve_out_dir(config.output.dir, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = _map(_retrieve_job, [(config, s, out) for s in config.seeds], jobs)
    return [write_csv(out / "retrieval_summary.csv", RETRIEVAL_SUMMARY_COLUMNS, rows)]


def expand_matrix(matrix: MatrixConfig) -> list[tuple[tuple, ExperimentConfig, int]]:
    """All cells as ``(sort_key, config, seed)``; the key is the index of each axis value."""
    axes = matrix.axis_items()
    seeds = matrix.seeds if matrix.seeds is not None else matrix.base.seeds
    cells = []
    names = [n for n, _ in axes]
    for combo in itertools.product(*(list(enumerate(v)) for _, v in axes)):
        data = matrix.base.model_dump()
        for name, (_, value) in zip(names, combo):
            if name == "protocol":
                data["protocol"] = value
            elif name == "beta":
                if value == "iid":
                    data["partition"]["kind"] = "iid"
                else:
                    data["partition"]["kind"] = "dirichlet"
                    data["partition"]["beta"] = value
            elif name == "prompt_kind":
                data["prompt_kind"] = value
            elif name == "n_per_class_prompt":
                data["n_per_class_prompt"] = value
            elif name == "fidelity_eps":
                data["oracle"]["fidelity_eps"] = value
        for si, seed in enumerate(seeds):
            data["seeds"] = [seed]
            cfg = ExperimentConfig.model_validate(data)
            cells.append((tuple(i for i, _ in combo) + (si,), cfg, seed))
    return cells


def _cell_job(args):
    key, config, seed = args
    try:
        setup = build(config, seed)
        result = run_protocol(config, setup, seed)
        return key, result_row(config, seed, result)
    except Exception as exc:  # recorded per row; the matrix keeps going
        log.warning("cell %s seed %s failed: %s", key, seed, exc)
        return key, result_row(config, seed, None, status=f"error: {type(exc).__name__}: {exc}")


def matrix_columns(matrix: MatrixConfig) -> list[str]:
    extra = [n for n, _ in matrix.axis_items() if n not in RESULT_COLUMNS]
    return RESULT_COLUMNS[:-2] + extra + RESULT_COLUMNS[-2:]


def run_matrix(matrix: MatrixConfig, out_dir=None, jobs: int = 1) -> tuple[Path, int]:
    """Run every cell and write one CSV sorted by cell key. Returns (path, failed cells)."""
    out = resolve_out_dir(matrix.output.dir, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = expand_matrix(matrix)
    results = sorted(_map(_cell_job, cells, jobs), key=lambda kr: kr[0])
    rows = []
    for key, row in results:
        cfg = json.loads(row["config"])
        row["n_per_class_prompt"] = cfg["n_per_class_prompt"]
        row["fidelity_eps"] = json.dumps(cfg["oracle"]["fidelity_eps"])
        rows.append(row)
    columns = matrix_columns(matrix)
    rows = [{c: r.get(c, "") for c in columns} for r in rows]
    failed = sum(1 for r in rows if r["status"] != "ok")
    return write_csv(out / matrix.output.results, columns, rows), failed
