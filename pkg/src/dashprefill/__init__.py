"""Delta-attention guided single-shot token halting for transformer prefill."""

from .errors import CapacityError, ConfigError, ContractError, DashError, InputError
from .model import (
    BlockTrace,
    KvCache,
    ModelConfig,
    ModelWeights,
    block_forward,
    decode_greedy,
    init_weights,
    prefill_full,
)
from .policy import (
    ActiveSet,
    DeltaScores,
    HaltingConfig,
    PrefillResult,
    dash_prefill,
    delta_attn_scores,
    delta_block_scores,
    kept_length,
    multi_shot_prefill,
    select_active_set,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSet",
    "BlockTrace",
    "CapacityError",
    "ConfigError",
    "ContractError",
    "DashError",
    "DeltaScores",
    "HaltingConfig",
    "InputError",
    "KvCache",
    "ModelConfig",
    "ModelWeights",
    "PrefillResult",
    "block_forward",
    "dash_prefill",
    "decode_greedy",
    "delta_attn_scores",
    "delta_block_scores",
    "init_weights",
    "kept_length",
    "multi_shot_prefill",
    "prefill_full",
    "select_active_set",
]
