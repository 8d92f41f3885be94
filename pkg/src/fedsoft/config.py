"""Run configuration: INI schema, parsing, and exhaustive validation.

A run file has five sections.  Every problem found is collected and
reported at once inside a single ConfigError rather than failing on the
first bad key.

    [data]        kind=blobs|idx|csv plus kind-specific keys
    [partition]   clients, alpha, seed, equal_sizes
    [pool]        size, n_pub, selection, mode, shift, seed
    [model]       kind, hidden_dim
    [protocol]    protocol, rounds, rates, bit widths, epochs, seeds,
                  optimizer settings
    [eval]        targets (comma-separated accuracy levels)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .data import SELECTION_STRATEGIES, PartitionSpec
from .errors import ConfigError
from .protocols import ProtocolConfig, Seeds, TrainSettings, protocol_problems

DATA_KINDS = ("blobs", "idx", "csv")
POOL_MODES = ("same", "shifted")


@dataclass
class DataConfig:
    kind: str = "blobs"
    classes: int = 10
    dim: int = 32
    train_per_class: int = 500
    val_per_class: int = 100
    spread: float = 0.35
    seed: int = 7
    train_images: str = ""
    train_labels: str = ""
    val_images: str = ""
    val_labels: str = ""
    train_csv: str = ""
    val_csv: str = ""


@dataclass
class PoolConfig:
    size: int = 4000
    n_pub: int = 2000
    selection: str = "random"
    mode: str = "same"
    shift: float = 0.0
    seed: int = 13
    images: str = ""
    csv: str = ""


@dataclass
class ModelConfig:
    kind: str = "mlp1"
    hidden_dim: int = 64


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionSpec = field(default_factory=lambda: PartitionSpec(num_clients=20, alpha=1.0))
    pool: PoolConfig = field(default_factory=PoolConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    protocol: ProtocolConfig = field(
        default_factory=lambda: ProtocolConfig(protocol="fd", rounds=10)
    )
    train: TrainSettings = field(default_factory=TrainSettings)
    eval_targets: tuple = (0.8, 0.9)


# (key, type, target attribute) per section; booleans use configparser rules.
_DATA_KEYS = {
    "kind": str,
    "classes": int,
    "dim": int,
    "train_per_class": int,
    "val_per_class": int,
    "spread": float,
    "seed": int,
    "train_images": str,
    "train_labels": str,
    "val_images": str,
    "val_labels": str,
    "train_csv": str,
    "val_csv": str,
}
_PARTITION_KEYS = {"clients": int, "alpha": float, "seed": int, "equal_sizes": bool}
_POOL_KEYS = {
    "size": int,
    "n_pub": int,
    "selection": str,
    "mode": str,
    "shift": float,
    "seed": int,
    "images": str,
    "csv": str,
}
_MODEL_KEYS = {"kind": str, "hidden_dim": int}
_PROTOCOL_KEYS = {
    "protocol": str,
    "rounds": int,
    "participation_rate": float,
    "b_up": int,
    "b_down": int,
    "delta_coding": bool,
    "local_epochs": int,
    "distill_epochs": int,
    "init_mode": str,
    "sampling_seed": int,
    "init_seed": int,
    "tie_seed": int,
    "local_optimizer": str,
    "local_lr": float,
    "local_momentum": float,
    "distill_optimizer": str,
    "distill_lr": float,
    "batch_size": int,
}
_EVAL_KEYS = {"targets": str}

_SECTIONS = {
    "data": _DATA_KEYS,
    "partition": _PARTITION_KEYS,
    "pool": _POOL_KEYS,
    "model": _MODEL_KEYS,
    "protocol": _PROTOCOL_KEYS,
    "eval": _EVAL_KEYS,
}


def _read_section(parser, section, keys, problems):
    """Typed key/value dict for one section, recording every bad entry."""
    out = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in keys:
            problems.append(f"[{section}] unknown key {key!r}")
            continue
        want = keys[key]
        try:
            if want is bool:
                lowered = raw.strip().lower()
                if lowered in ("1", "yes", "true", "on"):
                    out[key] = True
                elif lowered in ("0", "no", "false", "off"):
                    out[key] = False
                else:
                    raise ValueError(f"not a boolean: {raw!r}")
            else:
                out[key] = want(raw)
        except ValueError as exc:
            problems.append(f"[{section}] {key}: {exc}")
    return out


def parse_config(path: str) -> RunConfig:
    """Read and validate a run file; raises ConfigError with all problems."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError([f"cannot read config file {path!r}"])

    problems: list[str] = []
    for section in parser.sections():
        if section not in _SECTIONS:
            problems.append(f"unknown section [{section}]")

    raw = {
        name: _read_section(parser, name, keys, problems) for name, keys in _SECTIONS.items()
    }
    cfg = build_config(raw, problems)
    if problems:
        raise ConfigError(problems)
    return cfg


def build_config(raw: dict, problems: list) -> RunConfig:
    """Assemble a RunConfig from typed section dicts, appending problems."""
    data = DataConfig(**raw.get("data", {}))
    pool_kwargs = raw.get("pool", {})
    pool = PoolConfig(**pool_kwargs)
    model = ModelConfig(**raw.get("model", {}))

    if data.kind not in DATA_KINDS:
        problems.append(f"[data] kind must be one of {DATA_KINDS}")
    if data.kind == "blobs":
        if data.classes < 2:
            problems.append("[data] classes must be >= 2")
        if data.dim < 1:
            problems.append("[data] dim must be >= 1")
        if data.train_per_class < 1 or data.val_per_class < 1:
            problems.append("[data] train_per_class and val_per_class must be >= 1")
        if not data.spread > 0:
            problems.append("[data] spread must be positive")
    elif data.kind == "idx":
        for key in ("train_images", "train_labels", "val_images", "val_labels"):
            if not getattr(data, key):
                problems.append(f"[data] kind=idx requires {key}")
        if not pool.images:
            problems.append("[pool] kind=idx requires images")
    elif data.kind == "csv":
        for key in ("train_csv", "val_csv"):
            if not getattr(data, key):
                problems.append(f"[data] kind=csv requires {key}")
        if not pool.csv:
            problems.append("[pool] kind=csv requires csv")

    part_kwargs = raw.get("partition", {})
    num_clients = part_kwargs.get("clients", 20)
    alpha = part_kwargs.get("alpha", 1.0)
    if num_clients < 1:
        problems.append("[partition] clients must be >= 1")
    if not alpha > 0:
        problems.append("[partition] alpha must be positive")
    partition = PartitionSpec(
        num_clients=max(num_clients, 1),
        alpha=alpha if alpha > 0 else 1.0,
        seed=part_kwargs.get("seed", 0),
        equal_sizes=part_kwargs.get("equal_sizes", True),
    )

    if pool.size < 1:
        problems.append("[pool] size must be >= 1")
    if not 1 <= pool.n_pub <= max(pool.size, 1):
        problems.append("[pool] n_pub must be in [1, size]")
    if pool.selection not in SELECTION_STRATEGIES:
        problems.append(f"[pool] selection must be one of {SELECTION_STRATEGIES}")
    if pool.mode not in POOL_MODES:
        problems.append(f"[pool] mode must be one of {POOL_MODES}")
    if pool.mode == "shifted" and pool.shift == 0.0:
        problems.append("[pool] mode=shifted requires a nonzero shift")

    if model.kind not in ("softmax_regression", "mlp1"):
        problems.append("[model] kind must be softmax_regression or mlp1")
    if model.kind == "mlp1" and model.hidden_dim < 1:
        problems.append("[model] mlp1 requires hidden_dim >= 1")

    proto_kwargs = raw.get("protocol", {})
    seeds = Seeds(
        sampling=proto_kwargs.pop("sampling_seed", 0),
        init=proto_kwargs.pop("init_seed", 0),
        tie_break=proto_kwargs.pop("tie_seed", 0),
    )
    train = TrainSettings(
        local_optimizer=proto_kwargs.pop("local_optimizer", "sgd"),
        local_lr=proto_kwargs.pop("local_lr", 1e-3),
        local_momentum=proto_kwargs.pop("local_momentum", 0.9),
        distill_optimizer=proto_kwargs.pop("distill_optimizer", "adam"),
        distill_lr=proto_kwargs.pop("distill_lr", 1e-3),
        batch_size=proto_kwargs.pop("batch_size", 32),
    )
    if train.local_optimizer not in ("sgd", "adam"):
        problems.append("[protocol] local_optimizer must be sgd or adam")
    if train.distill_optimizer not in ("sgd", "adam"):
        problems.append("[protocol] distill_optimizer must be sgd or adam")
    if train.local_lr <= 0 or train.distill_lr <= 0:
        problems.append("[protocol] learning rates must be positive")
    if train.batch_size < 1:
        problems.append("[protocol] batch_size must be >= 1")

    protocol_name = proto_kwargs.get("protocol", "fd")
    fields = {
        "protocol": protocol_name,
        "rounds": proto_kwargs.get("rounds", 10),
        "participation_rate": proto_kwargs.get("participation_rate", 1.0),
        "b_up": proto_kwargs.get("b_up", 32),
        "b_down": proto_kwargs.get("b_down", 32),
        "delta_coding": proto_kwargs.get("delta_coding", False),
        "local_epochs": proto_kwargs.get("local_epochs", 1),
        "distill_epochs": proto_kwargs.get("distill_epochs", 1),
        "init_mode": proto_kwargs.get(
            "init_mode", "dual_distill" if protocol_name == "cfd" else "previous"
        ),
    }
    proto_issues = protocol_problems(**fields)
    problems.extend(f"[protocol] {p}" for p in proto_issues)
    protocol = None
    if not proto_issues:
        protocol = ProtocolConfig(seeds=seeds, **fields)

    if protocol is not None:
        if protocol.protocol in ("fd", "cfd") and pool.selection != "random":
            if protocol.delta_coding:
                problems.append(
                    "[protocol] delta_coding cannot be combined with active pool "
                    "re-selection; references would index different pool rows"
                )
        if protocol.protocol == "fa" and pool.selection != "random":
            problems.append("[pool] fa ignores the pool; selection must stay random")

    targets: tuple = ()
    targets_raw = raw.get("eval", {}).get("targets", "0.8, 0.9")
    try:
        parsed = tuple(float(tok) for tok in targets_raw.split(",") if tok.strip())
        if any(not 0.0 < v <= 1.0 for v in parsed):
            problems.append("[eval] targets must lie in (0, 1]")
        else:
            targets = parsed
    except ValueError:
        problems.append(f"[eval] cannot parse targets {targets_raw!r}")

    if problems:
        return RunConfig()  # caller raises; the value is never used
    return RunConfig(
        data=data,
        partition=partition,
        pool=pool,
        model=model,
        protocol=protocol,
        train=train,
        eval_targets=targets,
    )


def apply_seed_override(cfg: RunConfig, value: int) -> RunConfig:
    """Rederive every seed in the config from one override value."""
    import numpy as np

    def sub(idx: int) -> int:
        return int(np.random.SeedSequence((int(value), idx)).generate_state(1, np.uint64)[0])

    from dataclasses import replace

    data = replace(cfg.data, seed=sub(0))
    partition = PartitionSpec(
        num_clients=cfg.partition.num_clients,
        alpha=cfg.partition.alpha,
        seed=sub(1),
        equal_sizes=cfg.partition.equal_sizes,
    )
    pool = replace(cfg.pool, seed=sub(2))
    protocol = ProtocolConfig(
        protocol=cfg.protocol.protocol,
        rounds=cfg.protocol.rounds,
        participation_rate=cfg.protocol.participation_rate,
        b_up=cfg.protocol.b_up,
        b_down=cfg.protocol.b_down,
        delta_coding=cfg.protocol.delta_coding,
        local_epochs=cfg.protocol.local_epochs,
        distill_epochs=cfg.protocol.distill_epochs,
        init_mode=cfg.protocol.init_mode,
        seeds=Seeds(sampling=sub(3), init=sub(4), tie_break=sub(5)),
    )
    return RunConfig(
        data=data,
        partition=partition,
        pool=pool,
        model=cfg.model,
        protocol=protocol,
        train=cfg.train,
        eval_targets=cfg.eval_targets,
    )
