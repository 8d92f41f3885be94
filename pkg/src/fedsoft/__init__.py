"""Deterministic federated-learning simulation over compressed soft labels.

The package simulates three protocols with byte-exact communication
accounting: parameter averaging (fa), soft-label distillation (fd), and
compressed distillation (cfd) where uploads and downloads are quantized
onto a probability grid, optionally delta-coded against the previous
round, and entropy-coded with an adaptive range coder.
"""

from .codec import (
    DeltaMessage,
    EncodedMessage,
    MessageMode,
    QuantizedLabels,
    check_soft_labels,
    decode_message,
    delta_decode,
    delta_encode,
    dequantize,
    empirical_entropy,
    encode_upstream,
    entropy_code,
    entropy_decode,
    message_from_bytes,
    quantize,
    quantize_matrix,
)
from .config import DataConfig, ModelConfig, PoolConfig, RunConfig, parse_config
from .data import (
    Dataset,
    PartitionSpec,
    PublicPool,
    dirichlet_partition,
    load_csv,
    load_idx,
    make_blobs,
    select_active,
    select_random,
)
from .errors import (
    ConfigError,
    DecodeError,
    FormatError,
    PartitionError,
    ProtocolError,
    ShapeError,
    ValidationError,
)
from .harness import (
    BitsToTarget,
    RoundRecord,
    RunReport,
    bits_to_target,
    emit_results,
    run_experiment,
)
from .models import (
    ModelParams,
    ModelSpec,
    OptimizerState,
    accuracy,
    adam_state,
    forward,
    init_model,
    loss_and_grad,
    one_hot,
    sgd_state,
    train,
)
from .protocols import (
    ClientState,
    ProtocolConfig,
    RoundPlan,
    Seeds,
    ServerState,
    TrainSettings,
    aggregate_softlabels,
    cfd_round,
    dual_distill_server,
    fa_round,
    fd_round,
    make_round_plan,
    server_eval_model,
)

__version__ = "0.1.0"
