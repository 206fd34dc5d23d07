"""Token halting policy and the compacted prefill driver.

Direction names say what is *kept*. The default ``keep_high`` retains the
tokens with the largest update norm and halts the low ones (what the
directional ablation calls low-delta halting). ``keep_low`` is the reversed
ablation; ``random`` keeps a seeded uniform sample of the same size.

Two budget modes exist:

* ``pure_topk``: ``K = floor((1 - ratio) * T)`` over all tokens. The last
  prompt token is force-kept by the prefill driver so final logits exist.
* ``protected``: the first ``keep_first_n`` and last ``keep_last_n`` tokens
  are always kept and the ratio applies to the middle only, with
  ``drop = floor(round_half_up(ratio * (T - n_fix)))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .model import (
    BlockTrace,
    KvCache,
    LayerCache,
    ModelConfig,
    ModelWeights,
    _block,
    check_tokens,
    embed,
    final_logits,
)
from .tensor import l2_norm_rows

SIGNALS = ("delta_attn", "delta_block")
DIRECTIONS = ("keep_high", "keep_low", "random")
MODES = ("pure_topk", "protected")


@dataclass(frozen=True)
class HaltingConfig:
    """Halting knobs. ``shots == 1`` is the single-shot schedule."""

    start_layer: int = 1
    pruning_ratio: float = 0.0
    signal: str = "delta_attn"
    direction: str = "keep_high"
    mode: str = "pure_topk"
    shots: int = 1
    keep_first_n: int = 0
    keep_last_n: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pruning_ratio < 1.0:
            raise ConfigError(f"pruning_ratio must lie in [0, 1), got {self.pruning_ratio}")
        if self.signal not in SIGNALS:
            raise ConfigError(f"signal must be one of {SIGNALS}, got {self.signal!r}")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.start_layer < 0 or self.keep_first_n < 0 or self.keep_last_n < 0:
            raise ConfigError("start_layer, keep_first_n and keep_last_n must be >= 0")

    @property
    def schedule(self) -> str:
        return "single_shot" if self.shots == 1 else f"multi_shot({self.shots})"

    def replace(self, **changes) -> "HaltingConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class ActiveSet:
    kept_indices: tuple[int, ...]
    halted_indices: tuple[int, ...]
    decision_layer: int

    def __len__(self) -> int:
        return len(self.kept_indices)

    @classmethod
    def from_kept(cls, kept: Sequence[int], T: int, decision_layer: int) -> "ActiveSet":
        kept = tuple(sorted(int(i) for i in kept))
        kept_set = set(kept)
        halted = tuple(i for i in range(T) if i not in kept_set)
        return cls(kept, halted, decision_layer)


@dataclass
class DeltaScores:
    layer: int
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.scores.shape[0])


@dataclass
class PrefillResult:
    """Outcome of a halting prefill.

    ``per_layer_lengths[l]`` counts the tokens still active when block ``l``
    hands over to block ``l + 1`` (so the drop shows at the decision layer,
    even though that block itself ran on every token). ``hidden`` holds the
    final state of every prompt token; halted rows stay frozen at the output
    of the block where they were halted.
    """

    logits: np.ndarray
    active_set: ActiveSet
    kv: KvCache
    per_layer_lengths: list[int]
    scores_at_ls: DeltaScores
    hidden: np.ndarray
    stages: list[ActiveSet] = field(default_factory=list)
    stage_scores: list[DeltaScores] = field(default_factory=list)

    def kv_lengths(self) -> list[int]:
        return self.kv.lengths()


def delta_attn_scores(trace: BlockTrace) -> DeltaScores:
    """Per-token L2 norm of the pre-residual attention output."""
    return DeltaScores(trace.layer, l2_norm_rows(trace.U))


def delta_block_scores(trace: BlockTrace) -> DeltaScores:
    """Per-token L2 norm of the whole block's residual update."""
    diff = np.asarray(trace.H_out, dtype=np.float64) - np.asarray(trace.H_in, dtype=np.float64)
    return DeltaScores(trace.layer, l2_norm_rows(diff))


SIGNAL_FUNCS = {"delta_attn": delta_attn_scores, "delta_block": delta_block_scores}


def _exact(x: float) -> Fraction:
    # decimal reading of the float, so floor((1 - 0.9) * 10) is 1 and not 0
    return Fraction(str(float(x)))


def kept_length(T: int, ratio: float, keep_first_n: int = 0, keep_last_n: int = 0, mode: str = "pure_topk") -> int:
    """Number of tokens that survive selection for a prompt of length ``T``."""
    if T < 0:
        raise ContractError("T must be >= 0")
    r = _exact(ratio)
    if mode == "pure_topk":
        return math.floor((1 - r) * T)
    if mode == "protected":
        n_fix = keep_first_n + keep_last_n
        if n_fix > T:
            raise ContractError(f"keep_first_n + keep_last_n = {n_fix} exceeds T = {T}")
        # round half away from zero; the argument is never negative here
        drop = math.floor(r * (T - n_fix) + Fraction(1, 2))
        return T - drop
    raise ContractError(f"unknown mode {mode!r}")


def rank_order(scores: np.ndarray, direction: str, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Candidate positions in order of preference; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.arange(scores.shape[0])
    if direction == "keep_high":
        return np.lexsort((idx, -scores))
    if direction == "keep_low":
        return np.lexsort((idx, scores))
    if direction == "random":
        if rng is None:
            raise ContractError("random direction needs a generator")
        return rng.permutation(scores.shape[0])
    raise ContractError(f"unknown direction {direction!r}")


def _select(
    candidates: np.ndarray,
    scores: np.ndarray,
    target: int,
    T: int,
    cfg: HaltingConfig,
    rng: np.random.Generator,
    force_last: bool,
) -> np.ndarray:
    if target < 1:
        raise ContractError(f"kept length {target} < 1")
    if cfg.mode == "protected":
        protected = (candidates < cfg.keep_first_n) | (candidates >= T - cfg.keep_last_n)
    else:
        protected = np.zeros(candidates.shape[0], dtype=bool)
    middle = np.flatnonzero(~protected)
    k_mid = target - int(protected.sum())
    if not 0 <= k_mid <= middle.size:
        raise ContractError(f"cannot keep {target} of {candidates.size} tokens with {int(protected.sum())} protected")
    order = rank_order(scores[middle], cfg.direction, rng)
    chosen = middle[order[:k_mid]]
    kept = candidates[np.concatenate([np.flatnonzero(protected), chosen])]
    if force_last and (T - 1) not in set(kept.tolist()):
        if k_mid == 0:
            raise ConfigError("final token cannot be kept under this budget")
        # displace the lowest-ranked kept token
        last_pos = int(np.flatnonzero(candidates == T - 1)[0])
        chosen = np.concatenate([chosen[:-1], [last_pos]])
        kept = candidates[np.concatenate([np.flatnonzero(protected), chosen])]
    return np.sort(kept)


def select_active_set(scores: DeltaScores, T: int, cfg: HaltingConfig, force_last: bool = False) -> ActiveSet:
    """TopK selection over all ``T`` tokens under ``cfg``'s budget and direction."""
    values = np.asarray(scores.scores)
    if values.shape[0] != T:
        raise ContractError(f"{values.shape[0]} scores for T = {T}")
    target = kept_length(T, cfg.pruning_ratio, cfg.keep_first_n, cfg.keep_last_n, cfg.mode)
    rng = np.random.default_rng(cfg.rng_seed)
    kept = _select(np.arange(T), values, target, T, cfg, rng, force_last)
    return ActiveSet.from_kept(kept, T, scores.layer)


def selection_layers(num_layers: int, start_layer: int, shots: int) -> list[int]:
    """``shots`` evenly spaced decision layers starting at ``start_layer``."""
    if start_layer + shots - 1 >= num_layers:
        raise ConfigError(f"{shots} shots from layer {start_layer} do not fit in {num_layers} layers")
    step = (num_layers - start_layer) // shots
    return [start_layer + i * step for i in range(shots)]


def shot_targets(T: int, K: int, shots: int) -> list[int]:
    """Geometric kept counts per shot, ending at exactly ``K``."""
    frac = (K / T) ** (1.0 / shots)
    # small slack so e.g. 16 * 0.5 stays 8 after pow round-off
    targets = [max(K, math.floor(T * frac**i + 1e-9)) for i in range(1, shots)]
    return targets + [K]


def _validate(T: int, config: ModelConfig, cfg: HaltingConfig) -> None:
    if not 0 <= cfg.start_layer < config.num_layers:
        raise ConfigError(f"start_layer {cfg.start_layer} must lie in [0, {config.num_layers})")
    if cfg.mode == "protected":
        if cfg.keep_last_n < 1:
            raise ConfigError("protected mode needs keep_last_n >= 1 so the final token is kept")
        if cfg.keep_first_n + cfg.keep_last_n > T:
            raise ContractError(f"keep_first_n + keep_last_n exceeds prompt length {T}")


def _run_halting(tokens, weights: ModelWeights, config: ModelConfig, cfg: HaltingConfig) -> PrefillResult:
    ids = check_tokens(tokens, config)
    T = int(ids.size)
    _validate(T, config, cfg)
    K = kept_length(T, cfg.pruning_ratio, cfg.keep_first_n, cfg.keep_last_n, cfg.mode)
    if K < 1:
        raise ContractError(f"budget keeps {K} tokens of {T}")
    layers = selection_layers(config.num_layers, cfg.start_layer, cfg.shots)
    targets = dict(zip(layers, shot_targets(T, K, cfg.shots)))
    signal = SIGNAL_FUNCS[cfg.signal]
    rng = np.random.default_rng(cfg.rng_seed)
    force_last = cfg.mode == "pure_topk"

    state = embed(ids, weights)
    active = np.arange(T, dtype=np.int64)
    caches, lengths, stages, stage_scores = [], [], [], []
    for layer in range(config.num_layers):
        trace = _block(state[active], active, layer, weights, config)
        caches.append(LayerCache(trace.keys, trace.values, active.copy()))
        state[active] = trace.H_out
        if layer in targets:
            scores = signal(trace)
            active = _select(active, scores.scores, targets[layer], T, cfg, rng, force_last)
            stages.append(ActiveSet.from_kept(active, T, layer))
            stage_scores.append(scores)
        lengths.append(int(active.size))

    logits = final_logits(state[T - 1], weights, config)
    return PrefillResult(
        logits=logits,
        active_set=stages[-1],
        kv=KvCache(caches, T),
        per_layer_lengths=lengths,
        scores_at_ls=stage_scores[0],
        hidden=state,
        stages=stages,
        stage_scores=stage_scores,
    )


def dash_prefill(tokens, weights: ModelWeights, config: ModelConfig, cfg: HaltingConfig) -> PrefillResult:
    """Prefill with halting at ``cfg.start_layer``.

    Blocks up to and including the decision layer see every token. The
    decision is taken after that block finishes; later blocks run only on
    the kept tokens, which are also the only keys and values those blocks
    store. Returns logits for the last prompt token.
    """
    return _run_halting(tokens, weights, config, cfg)


def multi_shot_prefill(tokens, weights: ModelWeights, config: ModelConfig, cfg: HaltingConfig) -> PrefillResult:
    """Re-select at ``cfg.shots`` evenly spaced layers under the single-shot budget.

    Each shot re-ranks the currently active tokens with fresh scores and
    shrinks the set geometrically; the last shot lands exactly on the
    single-shot kept count.
    """
    return _run_halting(tokens, weights, config, cfg)
