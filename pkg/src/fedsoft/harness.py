"""Experiment runner, communication ledger, and result files.

run_experiment wires the pieces together: build data, partition it,
build the public pool, then drive the configured protocol round by
round, evaluating the server-side model on held-out data and recording
one ledger entry per round and direction.

Results serialize two ways: a fixed-schema CSV (one row per round) and
a JSON document that additionally carries the config echo and the
per-participant average cumulative traffic that bits_to_target uses.
MB means 10^6 bytes throughout.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import RunConfig
from .data import (
    Dataset,
    PublicPool,
    blob_means,
    dirichlet_partition,
    load_csv,
    load_idx,
    load_idx_images,
    make_blobs,
    sample_blobs,
    select_active,
    select_random,
)
from .errors import ConfigError, ProtocolError, ValidationError
from .models import ModelSpec, accuracy, forward
from .protocols import (
    ClientState,
    ServerState,
    cfd_round,
    fa_round,
    fd_round,
    make_round_plan,
    server_eval_model,
)

MB = 1_000_000

CSV_COLUMNS = (
    "round",
    "accuracy",
    "up_bytes",
    "down_bytes",
    "up_entropy_bits",
    "down_entropy_bits",
    "up_eta",
    "cumulative_up_bytes",
    "cumulative_down_bytes",
)


@dataclass
class RoundRecord:
    """One ledger row; byte counts are totals over the round's messages."""

    round: int
    accuracy: float
    up_bytes: int
    down_bytes: int
    up_entropy_bits: float
    down_entropy_bits: float
    up_eta: float
    cumulative_up_bytes: int
    cumulative_down_bytes: int
    participants: int = 0
    avg_cumulative_up_bytes: float = 0.0
    avg_cumulative_down_bytes: float = 0.0


@dataclass
class RunReport:
    protocol: str
    rounds: list
    config: dict = field(default_factory=dict)

    @property
    def final_accuracy(self) -> float:
        return self.rounds[-1].accuracy if self.rounds else 0.0

    @property
    def best_accuracy(self) -> float:
        return max((r.accuracy for r in self.rounds), default=0.0)


@dataclass(frozen=True)
class BitsToTarget:
    """Cumulative traffic when a run first reaches an accuracy target."""

    target: float
    round: int
    avg_up_mb: float
    avg_down_mb: float
    total_up_mb: float
    total_down_mb: float


def bits_to_target(report: RunReport, target: float) -> BitsToTarget | None:
    """Traffic at the first round with accuracy >= target; None if never."""
    if not 0.0 <= target <= 1.0:
        raise ValidationError("target must lie in [0, 1]")
    for rec in report.rounds:
        if rec.accuracy >= target:
            return BitsToTarget(
                target=target,
                round=rec.round,
                avg_up_mb=rec.avg_cumulative_up_bytes / MB,
                avg_down_mb=rec.avg_cumulative_down_bytes / MB,
                total_up_mb=rec.cumulative_up_bytes / MB,
                total_down_mb=rec.cumulative_down_bytes / MB,
            )
    return None


def _build_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    data = cfg.data
    if data.kind == "blobs":
        per_class = data.train_per_class + data.val_per_class
        full = make_blobs(data.classes, data.dim, per_class, data.spread, data.seed)
        train_idx, val_idx = [], []
        taken = np.zeros(data.classes, dtype=np.int64)
        for i, label in enumerate(full.labels):
            if taken[label] < data.train_per_class:
                train_idx.append(i)
            else:
                val_idx.append(i)
            taken[label] += 1
        return full.subset(np.asarray(train_idx)), full.subset(np.asarray(val_idx))
    if data.kind == "idx":
        train = load_idx(data.train_images, data.train_labels)
        val = load_idx(data.val_images, data.val_labels, num_classes=train.num_classes)
        return train, val
    train = load_csv(data.train_csv)
    val = load_csv(data.val_csv, num_classes=train.num_classes)
    return train, val


def _build_pool(cfg: RunConfig, train: Dataset) -> PublicPool:
    pool_cfg = cfg.pool
    if cfg.data.kind == "blobs":
        means = blob_means(cfg.data.classes, cfg.data.dim, cfg.data.seed)
        offset = None
        if pool_cfg.mode == "shifted":
            direction = np.random.default_rng(pool_cfg.seed).normal(size=cfg.data.dim)
            offset = pool_cfg.shift * direction / np.linalg.norm(direction)
        per_class = -(-pool_cfg.size // cfg.data.classes)  # ceil
        sampled = sample_blobs(means, per_class, cfg.data.spread, pool_cfg.seed, offset=offset)
        features = sampled.features[: pool_cfg.size]
    elif cfg.data.kind == "idx":
        features = load_idx_images(pool_cfg.images)[: pool_cfg.size]
    else:
        pool_ds = load_csv(pool_cfg.csv)
        features = pool_ds.features[: pool_cfg.size]
    if features.shape[0] < pool_cfg.size:
        raise ConfigError([f"[pool] only {features.shape[0]} rows available, size={pool_cfg.size}"])
    if features.shape[1] != train.dim:
        raise ConfigError(["[pool] pool feature dimension does not match training data"])
    selected = select_random(
        PublicPool(features, np.arange(features.shape[0])), cfg.pool.n_pub, pool_cfg.seed
    )
    return PublicPool(features, selected)


def run_experiment(cfg: RunConfig, on_round=None) -> RunReport:
    """Run the configured protocol end to end; deterministic in the config."""
    train_ds, val_ds = _build_datasets(cfg)
    if cfg.partition.num_clients > train_ds.n:
        raise ConfigError(["[partition] more clients than training samples"])

    parts = dirichlet_partition(train_ds, cfg.partition)
    clients = [
        ClientState(client_id=i, x=train_ds.features[idx], y=train_ds.labels[idx])
        for i, idx in enumerate(parts)
    ]

    model_spec = ModelSpec(
        kind=cfg.model.kind,
        input_dim=train_ds.dim,
        num_classes=train_ds.num_classes,
        hidden_dim=cfg.model.hidden_dim if cfg.model.kind == "mlp1" else 0,
        init_seed=cfg.protocol.seeds.init,
    )
    server = ServerState(model_spec=model_spec)

    pool = None
    pool_features_current = None
    if cfg.protocol.protocol in ("fd", "cfd"):
        pool = _build_pool(cfg, train_ds)

    proto = cfg.protocol
    records: list[RoundRecord] = []
    cum_up = cum_down = 0
    avg_cum_up = avg_cum_down = 0.0

    for t in range(1, proto.rounds + 1):
        plan = make_round_plan(t, cfg.partition.num_clients, proto.participation_rate, proto.seeds.sampling)

        if proto.protocol == "fa":
            stats = fa_round(server, clients, plan, proto, cfg.train)
        else:
            prev_features = pool_features_current
            if cfg.pool.selection != "random" and t > 1:
                model = server_eval_model(server, proto)
                predictions = forward(model, model_spec, pool.features)
                pool.selected_indices = select_active(
                    pool, cfg.pool.n_pub, predictions, cfg.pool.selection
                )
            pool_features_current = pool.selected_features
            round_fn = fd_round if proto.protocol == "fd" else cfd_round
            stats = round_fn(
                server,
                clients,
                plan,
                pool_features_current,
                proto,
                cfg.train,
                prev_pool_x=prev_features,
            )

        acc = accuracy(server_eval_model(server, proto), model_spec, val_ds.features, val_ds.labels)
        cum_up += stats.up_bytes
        cum_down += stats.down_bytes
        participants = len(plan.participant_ids)
        avg_cum_up += stats.up_bytes / participants
        avg_cum_down += stats.down_bytes / participants
        record = RoundRecord(
            round=t,
            accuracy=acc,
            up_bytes=stats.up_bytes,
            down_bytes=stats.down_bytes,
            up_entropy_bits=stats.up_entropy_bits,
            down_entropy_bits=stats.down_entropy_bits,
            up_eta=stats.up_eta_bits,
            cumulative_up_bytes=cum_up,
            cumulative_down_bytes=cum_down,
            participants=participants,
            avg_cumulative_up_bytes=avg_cum_up,
            avg_cumulative_down_bytes=avg_cum_down,
        )
        records.append(record)
        if on_round is not None:
            on_round(record)

    return RunReport(protocol=proto.protocol, rounds=records, config=_config_echo(cfg))


def _config_echo(cfg: RunConfig) -> dict:
    echo = {
        "data": asdict(cfg.data),
        "partition": asdict(cfg.partition),
        "pool": asdict(cfg.pool),
        "model": asdict(cfg.model),
        "protocol": asdict(cfg.protocol),
        "train": asdict(cfg.train),
        "eval_targets": list(cfg.eval_targets),
    }
    return echo


def emit_results(report: RunReport, path: str, format: str = "csv") -> str:
    """Write the report to ``path`` as csv or json; returns the path."""
    if format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in report.rounds:
                writer.writerow(
                    [
                        r.round,
                        repr(r.accuracy),
                        r.up_bytes,
                        r.down_bytes,
                        repr(r.up_entropy_bits),
                        repr(r.down_entropy_bits),
                        repr(r.up_eta),
                        r.cumulative_up_bytes,
                        r.cumulative_down_bytes,
                    ]
                )
        return path
    if format == "json":
        doc = {
            "protocol": report.protocol,
            "config": report.config,
            "rounds": [asdict(r) for r in report.rounds],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        return path
    raise ValidationError(f"unknown results format {format!r}")


def emit_plotdata(report: RunReport, path: str) -> str:
    """Long-form plot data: one row per (round, direction)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "direction", "bytes", "entropy_bits", "cumulative_bytes", "accuracy"])
        for r in report.rounds:
            writer.writerow([r.round, "up", r.up_bytes, repr(r.up_entropy_bits), r.cumulative_up_bytes, repr(r.accuracy)])
            writer.writerow([r.round, "down", r.down_bytes, repr(r.down_entropy_bits), r.cumulative_down_bytes, repr(r.accuracy)])
    return path


def read_results_csv(path: str) -> list[RoundRecord]:
    """Parse an emit_results csv back into ledger rows (csv fields only)."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ConfigError([f"unexpected results csv header in {path}"])
        for row in reader:
            records.append(
                RoundRecord(
                    round=int(row[0]),
                    accuracy=float(row[1]),
                    up_bytes=int(row[2]),
                    down_bytes=int(row[3]),
                    up_entropy_bits=float(row[4]),
                    down_entropy_bits=float(row[5]),
                    up_eta=float(row[6]),
                    cumulative_up_bytes=int(row[7]),
                    cumulative_down_bytes=int(row[8]),
                )
            )
    return records


def load_report_json(path: str) -> RunReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rounds = [RoundRecord(**r) for r in doc.get("rounds", [])]
    return RunReport(protocol=doc.get("protocol", ""), rounds=rounds, config=doc.get("config", {}))


def write_run_outputs(report: RunReport, out_dir: str) -> dict:
    """results.csv + results.json + plotdata.csv under ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    return {
        "csv": emit_results(report, os.path.join(out_dir, "results.csv"), "csv"),
        "json": emit_results(report, os.path.join(out_dir, "results.json"), "json"),
        "plot": emit_plotdata(report, os.path.join(out_dir, "plotdata.csv")),
    }
