"""Federated rounds: parameter averaging (fa) and distillation (fd, cfd).

fa averages locally trained parameter vectors, weighted by client data
size.  fd and cfd share one engine: participants distill the previous
broadcast into a seed-synchronized shared model, train it locally, and
upload predictions on the public pool; the server aggregates the decoded
uploads and prepares the next broadcast.  fd is exactly the engine at
b_up = b_down = 32 with delta coding off and init_mode "previous", so
its traffic and accuracy match a cfd run configured that way bit for
bit.

Everything that crosses the simulated wire is framed as an
EncodedMessage, and receivers only ever see decoded payload content:
float32-rounded values for raw32, dequantized grids otherwise.  Byte
counts are payload sizes; headers are simulator framing.

Seed discipline: every stochastic phase derives its generator from
(seed, phase tag, round, client) via SeedSequence, so runs are
reproducible and client-side distillation is identical across
participants of a round.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .codec import (
    EncodedMessage,
    MessageMode,
    QuantizedLabels,
    decode_message,
    delta_encode,
    empirical_entropy,
    encode_upstream,
    quantize_matrix,
    wire_round32,
)
from .errors import ConfigError, ProtocolError, ValidationError
from .models import (
    ModelParams,
    ModelSpec,
    OptimizerState,
    adam_state,
    forward,
    init_model,
    one_hot,
    sgd_state,
    train,
)

PROTOCOLS = ("fa", "fd", "cfd")
INIT_MODES = ("random", "previous", "dual_distill")

# sender_id used for downstream messages
SERVER_ID = 0xFFFFFFFF

# phase tags for seed derivation
_T_SAMPLING = 1
_T_ROUND1 = 2
_T_INIT = 3
_T_SYNC = 4
_T_LOCAL = 5
_T_SERVER = 6
_T_TIE = 7


def derive_rng(base: int, *keys: int) -> np.random.Generator:
    """Independent generator for (base seed, integer key path)."""
    return np.random.default_rng(np.random.SeedSequence((int(base), *(int(k) for k in keys))))


def derive_seed(base: int, *keys: int) -> int:
    seq = np.random.SeedSequence((int(base), *(int(k) for k in keys)))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Seeds:
    sampling: int = 0
    init: int = 0
    tie_break: int = 0


def protocol_problems(
    protocol: str,
    rounds: int,
    participation_rate: float,
    b_up: int,
    b_down: int,
    delta_coding: bool,
    local_epochs: int,
    distill_epochs: int,
    init_mode: str,
) -> list[str]:
    """Every constraint violation in a would-be ProtocolConfig."""
    out = []
    if protocol not in PROTOCOLS:
        out.append(f"unknown protocol {protocol!r}")
    if rounds < 1:
        out.append("rounds must be >= 1")
    if not 0.0 < participation_rate <= 1.0:
        out.append("participation_rate must be in (0, 1]")
    for name, b in (("b_up", b_up), ("b_down", b_down)):
        if b != 32 and not 1 <= b <= 16:
            out.append(f"{name} must be 32 or in [1, 16]")
    if delta_coding and b_up != 1:
        out.append("delta_coding requires b_up = 1")
    if local_epochs < 1 or distill_epochs < 1:
        out.append("local_epochs and distill_epochs must be >= 1")
    if init_mode not in INIT_MODES:
        out.append(f"unknown init_mode {init_mode!r}")
    if protocol == "fa" and (b_up != 32 or b_down != 32 or delta_coding):
        out.append("fa sends raw parameters: b_up = b_down = 32, no delta coding")
    return out


@dataclass(frozen=True)
class ProtocolConfig:
    """Static description of one federated run."""

    protocol: str
    rounds: int
    participation_rate: float = 1.0
    b_up: int = 32
    b_down: int = 32
    delta_coding: bool = False
    local_epochs: int = 1
    distill_epochs: int = 1
    init_mode: str = "previous"
    seeds: Seeds = field(default_factory=Seeds)

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        return protocol_problems(
            self.protocol,
            self.rounds,
            self.participation_rate,
            self.b_up,
            self.b_down,
            self.delta_coding,
            self.local_epochs,
            self.distill_epochs,
            self.init_mode,
        )


@dataclass
class TrainSettings:
    """Optimizer hyperparameters for the two training phases."""

    local_optimizer: str = "sgd"
    local_lr: float = 1e-3
    local_momentum: float = 0.9
    distill_optimizer: str = "adam"
    distill_lr: float = 1e-3
    batch_size: int = 32

    def local_state(self) -> OptimizerState:
        if self.local_optimizer == "adam":
            return adam_state(self.local_lr)
        return sgd_state(self.local_lr, momentum=self.local_momentum)

    def distill_state(self) -> OptimizerState:
        if self.distill_optimizer == "sgd":
            return sgd_state(self.distill_lr, momentum=self.local_momentum)
        return adam_state(self.distill_lr)


@dataclass
class ClientState:
    client_id: int
    x: np.ndarray
    y: np.ndarray
    params: ModelParams | None = None
    last_uploaded: QuantizedLabels | None = None
    last_received: QuantizedLabels | None = None


@dataclass
class ServerState:
    model_spec: ModelSpec
    round_no: int = 0
    params: ModelParams | None = None  # dual-distill server model
    sync_model: ModelParams | None = None  # shared distilled model (random/previous)
    aggregate: np.ndarray | None = None
    broadcast_raw: np.ndarray | None = None
    broadcast_quantized: QuantizedLabels | None = None
    up_refs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RoundPlan:
    round_no: int
    participant_ids: tuple


def make_round_plan(
    round_no: int, num_clients: int, participation_rate: float, seed: int
) -> RoundPlan:
    """Sample |I_t| = max(1, round(rate * clients)) participants without replacement."""
    if round_no < 1:
        raise ValidationError("round_no must be >= 1")
    if num_clients < 1:
        raise ValidationError("num_clients must be >= 1")
    if not 0.0 < participation_rate <= 1.0:
        raise ValidationError("participation_rate must be in (0, 1]")
    count = max(1, int(np.floor(participation_rate * num_clients + 0.5)))
    count = min(count, num_clients)
    rng = derive_rng(seed, _T_SAMPLING, round_no)
    ids = np.sort(rng.choice(num_clients, size=count, replace=False))
    return RoundPlan(round_no=round_no, participant_ids=tuple(int(i) for i in ids))


@dataclass(frozen=True)
class MessageStats:
    """Accounting for one message; entropy is per coded symbol (32.0 for raw32)."""

    direction: str
    client_id: int
    payload_bytes: int
    bit_length: int
    symbols: int
    entropy_bits: float

    @property
    def eta_bits(self) -> float:
        """Coder overhead: actual bits per symbol minus empirical entropy."""
        if self.symbols == 0:
            return 0.0
        return self.bit_length / self.symbols - self.entropy_bits


@dataclass
class RoundStats:
    round_no: int
    participant_ids: tuple
    up: list
    down: list

    @staticmethod
    def _total_bytes(messages) -> int:
        return sum(m.payload_bytes for m in messages)

    @staticmethod
    def _mean(values) -> float:
        values = list(values)
        return float(np.mean(values)) if values else 0.0

    @property
    def up_bytes(self) -> int:
        return self._total_bytes(self.up)

    @property
    def down_bytes(self) -> int:
        return self._total_bytes(self.down)

    @property
    def up_entropy_bits(self) -> float:
        return self._mean(m.entropy_bits for m in self.up)

    @property
    def down_entropy_bits(self) -> float:
        return self._mean(m.entropy_bits for m in self.down)

    @property
    def up_eta_bits(self) -> float:
        return self._mean(m.eta_bits for m in self.up)


def _check_round_order(server: ServerState, plan: RoundPlan) -> None:
    if plan.round_no != server.round_no + 1:
        raise ProtocolError(
            f"round {plan.round_no} requested but server finished round {server.round_no}"
        )


def _check_participants(clients, plan: RoundPlan) -> None:
    for cid in plan.participant_ids:
        if cid >= len(clients) or clients[cid].client_id != cid:
            raise ProtocolError(f"participant {cid} not found at its index in the client list")


def _stats_for_message(direction: str, cid: int, msg: EncodedMessage, symbols) -> MessageStats:
    if msg.mode == MessageMode.RAW32:
        entropy = 32.0
    else:
        entropy = empirical_entropy(symbols)
    return MessageStats(
        direction=direction,
        client_id=cid,
        payload_bytes=msg.payload_bytes,
        bit_length=msg.bit_length,
        symbols=msg.symbol_count,
        entropy_bits=entropy,
    )


def _params_message(values: np.ndarray, round_no: int, sender_id: int) -> EncodedMessage:
    # Parameter vectors ride the raw32 frame with C = 1.
    payload = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return EncodedMessage(
        mode=MessageMode.RAW32,
        round_no=round_no,
        sender_id=sender_id,
        n=values.shape[0],
        C=1,
        b=32,
        flags=1,
        payload=payload,
    )


def fa_round(
    server: ServerState,
    clients: list,
    plan: RoundPlan,
    cfg: ProtocolConfig,
    settings: TrainSettings,
) -> RoundStats:
    """One parameter-averaging round; eval model is ``server.params``."""
    _check_round_order(server, plan)
    _check_participants(clients, plan)
    spec = server.model_spec
    t = plan.round_no
    expected_layout = spec.layout()
    for cid in plan.participant_ids:
        held = clients[cid].params
        if held is not None and held.layout != expected_layout:
            raise ProtocolError(f"client {cid} holds parameters with a different layout")
    if server.params is None:
        server.params = init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_ROUND1)))

    down_msg = _params_message(server.params.values, t, SERVER_ID)
    delivered = decode_message(down_msg).ravel()
    start = ModelParams(server.params.layout, delivered)

    up_stats, down_stats = [], []
    uploads, sizes = [], []
    for cid in plan.participant_ids:
        client = clients[cid]
        down_stats.append(_stats_for_message("down", cid, down_msg, None))
        theta = train(
            start,
            spec,
            client.x,
            one_hot(client.y, spec.num_classes),
            settings.local_state(),
            epochs=cfg.local_epochs,
            batch_size=settings.batch_size,
            shuffle_seed=derive_seed(cfg.seeds.init, _T_LOCAL, t, cid),
        )
        client.params = theta
        up_msg = _params_message(theta.values, t, cid)
        uploads.append(decode_message(up_msg).ravel())
        sizes.append(client.x.shape[0])
        up_stats.append(_stats_for_message("up", cid, up_msg, None))

    weights = np.asarray(sizes, dtype=np.float64)
    weights /= weights.sum()
    averaged = np.zeros_like(server.params.values)
    for w, vec in zip(weights, uploads):
        averaged += w * vec
    server.params = ModelParams(server.params.layout, averaged)
    server.round_no = t
    return RoundStats(round_no=t, participant_ids=plan.participant_ids, up=up_stats, down=down_stats)


def aggregate_softlabels(uploads) -> np.ndarray:
    """Unweighted mean of decoded soft-label uploads."""
    if not uploads:
        raise ProtocolError("cannot aggregate zero uploads")
    mats = []
    for u in uploads:
        mat = u.dequantize() if isinstance(u, QuantizedLabels) else np.asarray(u, dtype=np.float64)
        mats.append(mat)
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ValidationError("uploads disagree on shape")
    return np.mean(mats, axis=0)


def dual_distill_server(
    server: ServerState,
    pool_x: np.ndarray,
    y_pub: np.ndarray,
    cfg: ProtocolConfig,
    settings: TrainSettings,
    round_no: int,
) -> tuple[ModelParams, np.ndarray]:
    """Distill the aggregate into the persistent server model, then predict.

    The server model carries over between rounds; its predictions (not
    the raw aggregate) become the next broadcast.
    """
    spec = server.model_spec
    base = server.params
    if base is None:
        base = init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_SERVER, 0)))
    theta = train(
        base,
        spec,
        pool_x,
        y_pub,
        settings.distill_state(),
        epochs=cfg.distill_epochs,
        batch_size=settings.batch_size,
        shuffle_seed=derive_seed(cfg.seeds.init, _T_SERVER, round_no),
    )
    return theta, forward(theta, spec, pool_x)


def _downstream_phase(server, clients, plan, cfg):
    """Deliver the standing broadcast to every participant.

    Returns (stats, targets) where targets are the distillation targets
    exactly as a receiver reconstructs them.
    """
    t = plan.round_no
    stats = []
    if cfg.b_down == 32:
        if server.broadcast_raw is None:
            raise ProtocolError("no broadcast available; did round 1 run?")
        msg = encode_upstream(
            None, None, MessageMode.RAW32, y_raw=server.broadcast_raw, round_no=t, sender_id=SERVER_ID
        )
        targets = decode_message(msg)
        for cid in plan.participant_ids:
            stats.append(_stats_for_message("down", cid, msg, None))
        return stats, targets

    if server.broadcast_quantized is None:
        raise ProtocolError("no broadcast available; did round 1 run?")
    # Delta frames only exist for one-hot messages, so a wider downstream
    # grid falls back to plain quantized broadcast.
    if not (cfg.delta_coding and cfg.b_down == 1):
        q = server.broadcast_quantized
        symbols = (q.class_ids - 1) if q.b == 1 else q.grid.ravel()
        msg = encode_upstream(q, None, MessageMode.QUANTIZED, round_no=t, sender_id=SERVER_ID)
        decoded = decode_message(msg)
        targets = decoded.dequantize()
        for cid in plan.participant_ids:
            stats.append(_stats_for_message("down", cid, msg, symbols))
        return stats, targets

    targets = None
    for cid in plan.participant_ids:
        client = clients[cid]
        ref = client.last_received
        msg = encode_upstream(
            server.broadcast_quantized, ref, MessageMode.QUANTIZED_DELTA, round_no=t, sender_id=SERVER_ID
        )
        symbols = delta_encode(server.broadcast_quantized, ref).symbols
        decoded = decode_message(msg, ref)
        client.last_received = decoded
        targets = decoded.dequantize()
        stats.append(_stats_for_message("down", cid, msg, symbols))
    return stats, targets


def _shared_client_model(server, plan, distill_x, targets, cfg, settings) -> ModelParams:
    """The model every participant holds after the distillation step.

    ``distill_x`` are the pool rows the downloaded targets refer to (the
    previous round's selection when the pool is re-selected per round).
    """
    spec = server.model_spec
    t = plan.round_no
    if t == 1:
        # No broadcast exists yet: shared random init, no distillation.
        return init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_ROUND1)))
    if cfg.init_mode == "dual_distill":
        start = init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_INIT, t)))
        return train(
            start,
            spec,
            distill_x,
            targets,
            settings.distill_state(),
            epochs=cfg.distill_epochs,
            batch_size=settings.batch_size,
            shuffle_seed=derive_seed(cfg.seeds.init, _T_SYNC, t),
        )
    if server.sync_model is None:
        raise ProtocolError("missing synchronized model; rounds must run in order")
    return server.sync_model


def _update_sync_model(server, pool_x, cfg, settings, t) -> None:
    """Distill the fresh aggregate into the shared model for round t+1.

    Targets replicate what a participant will decode from the new
    broadcast, so the stored model equals the one clients would distill
    after downloading it.
    """
    spec = server.model_spec
    if cfg.b_down == 32:
        sync_targets = wire_round32(server.broadcast_raw)
    else:
        sync_targets = server.broadcast_quantized.dequantize()
    if cfg.init_mode == "previous":
        start = server.sync_model
        if start is None:
            start = init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_ROUND1)))
    else:
        start = init_model(replace(spec, init_seed=derive_seed(cfg.seeds.init, _T_INIT, t)))
    server.sync_model = train(
        start,
        spec,
        pool_x,
        sync_targets,
        settings.distill_state(),
        epochs=cfg.distill_epochs,
        batch_size=settings.batch_size,
        shuffle_seed=derive_seed(cfg.seeds.init, _T_SYNC, t),
    )


def _distill_round(server, clients, plan, pool_x, cfg, settings, prev_pool_x=None) -> RoundStats:
    _check_round_order(server, plan)
    _check_participants(clients, plan)
    if pool_x is None:
        raise ProtocolError("distillation rounds require a public pool")
    spec = server.model_spec
    t = plan.round_no
    num_classes = spec.num_classes

    if t > 1:
        down_stats, targets = _downstream_phase(server, clients, plan, cfg)
    else:
        down_stats, targets = [], None

    distill_x = pool_x if prev_pool_x is None else prev_pool_x
    theta_shared = _shared_client_model(server, plan, distill_x, targets, cfg, settings)

    up_stats = []
    uploads = []
    for cid in plan.participant_ids:
        client = clients[cid]
        theta = train(
            theta_shared,
            spec,
            client.x,
            one_hot(client.y, num_classes),
            settings.local_state(),
            epochs=cfg.local_epochs,
            batch_size=settings.batch_size,
            shuffle_seed=derive_seed(cfg.seeds.init, _T_LOCAL, t, cid),
        )
        client.params = theta
        y_i = forward(theta, spec, pool_x)

        if cfg.b_up == 32:
            msg = encode_upstream(None, None, MessageMode.RAW32, y_raw=y_i, round_no=t, sender_id=cid)
            decoded = decode_message(msg)
            uploads.append(decoded)
            up_stats.append(_stats_for_message("up", cid, msg, None))
        else:
            q = quantize_matrix(y_i, cfg.b_up, rng=derive_rng(cfg.seeds.tie_break, _T_TIE, t, cid))
            if cfg.delta_coding:
                ref = client.last_uploaded
                msg = encode_upstream(q, ref, MessageMode.QUANTIZED_DELTA, round_no=t, sender_id=cid)
                symbols = delta_encode(q, ref).symbols
                decoded_q = decode_message(msg, server.up_refs.get(cid))
                client.last_uploaded = q
                server.up_refs[cid] = decoded_q
            else:
                msg = encode_upstream(q, None, MessageMode.QUANTIZED, round_no=t, sender_id=cid)
                symbols = (q.class_ids - 1) if q.b == 1 else q.grid.ravel()
                decoded_q = decode_message(msg)
            uploads.append(decoded_q)
            up_stats.append(_stats_for_message("up", cid, msg, symbols))

    y_pub = aggregate_softlabels(uploads)
    if cfg.b_up == 32:
        # float32 transport leaves row sums ~C * 2^-24 away from 1; restore
        # the simplex so the broadcast passes framing validation for any C.
        # Quantized uploads decode to exact grids and need no repair.
        y_pub = y_pub / y_pub.sum(axis=1, keepdims=True)
    server.aggregate = y_pub

    if cfg.init_mode == "dual_distill":
        theta_s, y_pub_s = dual_distill_server(server, pool_x, y_pub, cfg, settings, t)
        server.params = theta_s
        content = y_pub_s
    else:
        content = y_pub

    if cfg.b_down == 32:
        server.broadcast_raw = content
        server.broadcast_quantized = None
    else:
        server.broadcast_raw = None
        server.broadcast_quantized = quantize_matrix(
            content, cfg.b_down, rng=derive_rng(cfg.seeds.tie_break, _T_TIE, t, SERVER_ID)
        )

    if cfg.init_mode != "dual_distill":
        _update_sync_model(server, pool_x, cfg, settings, t)

    server.round_no = t
    return RoundStats(round_no=t, participant_ids=plan.participant_ids, up=up_stats, down=down_stats)


def fd_round(server, clients, plan, pool_x, cfg, settings, prev_pool_x=None) -> RoundStats:
    """Distillation round over raw float32 soft labels."""
    if cfg.b_up != 32 or cfg.b_down != 32 or cfg.delta_coding:
        raise ValidationError("fd sends raw32 soft labels without delta coding")
    return _distill_round(server, clients, plan, pool_x, cfg, settings, prev_pool_x=prev_pool_x)


def cfd_round(server, clients, plan, pool_x, cfg, settings, prev_pool_x=None) -> RoundStats:
    """Distillation round with quantized, entropy-coded soft labels."""
    return _distill_round(server, clients, plan, pool_x, cfg, settings, prev_pool_x=prev_pool_x)


def server_eval_model(server: ServerState, cfg: ProtocolConfig) -> ModelParams:
    """The model a run reports accuracy on after each round."""
    if cfg.protocol == "fa" or cfg.init_mode == "dual_distill":
        model = server.params
    else:
        model = server.sync_model
    if model is None:
        raise ProtocolError("no evaluation model yet; run a round first")
    return model
