"""Oracles, diagnostics and ablation harnesses.

``masked_reference_prefill`` is the definitional check for compaction: it
never removes a row, it only masks halted keys and refuses to update halted
rows, so any difference from ``dash_prefill`` points at the compaction code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError
from .model import ModelConfig, ModelWeights, _block, check_tokens, embed, final_logits, prefill_full
from .policy import (
    ActiveSet,
    DeltaScores,
    HaltingConfig,
    PrefillResult,
    dash_prefill,
    rank_order,
)
from .tensor import l2_norm_rows


def masked_reference_prefill(
    tokens,
    weights: ModelWeights,
    config: ModelConfig,
    active_set: Union[ActiveSet, Sequence[ActiveSet]],
    l_s: Optional[int] = None,
    return_hidden: bool = False,
):
    """Full-length prefill that emulates halting by masking.

    ``active_set`` may be a single set (decided at ``l_s``, defaulting to its
    own ``decision_layer``) or the ordered stages of a multi-shot run. In
    every layer after a decision, halted rows keep their state and are hidden
    from all other queries as keys. Returns final-token logits, plus the final
    hidden states when ``return_hidden`` is set.
    """
    ids = check_tokens(tokens, config)
    T = int(ids.size)
    if isinstance(active_set, ActiveSet):
        stages = [(active_set.decision_layer if l_s is None else l_s, active_set)]
    else:
        stages = [(s.decision_layer, s) for s in active_set]
    for _, stage in stages:
        if set(stage.kept_indices) | set(stage.halted_indices) != set(range(T)):
            raise ContractError("active set does not partition the prompt")

    positions = np.arange(T, dtype=np.int64)
    H = embed(ids, weights)
    active = np.ones(T, dtype=bool)
    for layer in range(config.num_layers):
        for decision, stage in stages:
            if decision == layer - 1:
                active = np.zeros(T, dtype=bool)
                active[list(stage.kept_indices)] = True
        if active.all():
            H = _block(H, positions, layer, weights, config).H_out
            continue
        key_mask = active[None, :] | np.eye(T, dtype=bool)
        out = _block(H, positions, layer, weights, config, key_mask=key_mask).H_out
        H = np.where(active[:, None], out, H)
    logits = final_logits(H[T - 1], weights, config)
    return (logits, H) if return_hidden else logits


def importance_scores_full_attention(attention: Union[Sequence[np.ndarray], Mapping[int, np.ndarray]], layer: int) -> np.ndarray:
    """Incoming attention mass per key token, averaged over heads.

    ``attention[layer]`` has shape (heads, queries, keys).
    """
    attn = np.asarray(attention[layer], dtype=np.float64)
    if attn.ndim != 3:
        raise ContractError(f"expected (heads, queries, keys), got {attn.shape}")
    return attn.sum(axis=1).mean(axis=0)


def spearman_rho(a, b) -> float:
    """``1 - 6 sum(d^2) / (n (n^2 - 1))`` on average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("spearman_rho needs two 1-D sequences of equal length")
    n = a.shape[0]
    if n < 2:
        raise ContractError("spearman_rho needs at least two values")
    d = rankdata(a) - rankdata(b)
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


def topk_indices(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores; ties go to the lower index."""
    return [int(i) for i in rank_order(np.asarray(scores), "keep_high")[:k]]


def topk_overlap_iou(a, b, fraction: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError("topk_overlap_iou needs equal lengths")
    if not 0 < fraction <= 1:
        raise ContractError("fraction must lie in (0, 1]")
    n = a.shape[0]
    k = max(1, math.floor(Fraction(str(float(fraction))) * n))
    sa, sb = set(topk_indices(a, k)), set(topk_indices(b, k))
    return len(sa & sb) / len(sa | sb)


def set_iou(a: Sequence[int], b: Sequence[int]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class RankFidelity:
    layer: int
    spearman_rho: float
    topk_iou: float
    k_fraction: float


def rank_fidelity(delta, importance, fraction: float, layer: int = -1) -> RankFidelity:
    """Agreement of two token rankings.

    The IoU compares the *halted* sets, i.e. the bottom ``fraction`` of
    tokens under each score.
    """
    delta = np.asarray(delta, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    return RankFidelity(
        layer=layer,
        spearman_rho=spearman_rho(delta, importance),
        topk_iou=topk_overlap_iou(-delta, -importance, fraction),
        k_fraction=fraction,
    )


def depth_fidelity(
    tokens,
    weights: ModelWeights,
    config: ModelConfig,
    layers: Sequence[int],
    fraction: float = 0.3,
    self_correlation: bool = False,
) -> list[RankFidelity]:
    """Delta-attn vs full-attention importance at each requested layer."""
    for layer in layers:
        if not 0 <= layer < config.num_layers:
            raise ContractError(f"layer {layer} out of range for {config.num_layers} layers")
    run = prefill_full(tokens, weights, config, return_attn=True)
    attention = [t.attn for t in run.traces]
    out = []
    for layer in layers:
        delta = l2_norm_rows(run.traces[layer].U)
        other = delta if self_correlation else importance_scores_full_attention(attention, layer)
        out.append(rank_fidelity(delta, other, fraction, layer))
    return out


@dataclass
class DeltaHistogram:
    layer: int
    bin_edges: list[float]
    counts: list[int]
    mean: float
    median: float
    p95: float


def delta_histogram(scores: DeltaScores, num_bins: int) -> DeltaHistogram:
    """Equal-width histogram over ``[0, max(scores)]`` plus summary stats."""
    values = np.asarray(scores.scores, dtype=np.float64)
    if values.size == 0:
        raise ContractError("delta_histogram needs at least one score")
    if num_bins < 1:
        raise ContractError("num_bins must be >= 1")
    hi = float(values.max())
    if hi <= 0:
        hi = 1.0
    counts, edges = np.histogram(values, bins=num_bins, range=(0.0, hi))
    return DeltaHistogram(
        layer=scores.layer,
        bin_edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        mean=float(values.mean()),
        median=float(np.median(values)),
        p95=float(np.percentile(values, 95)),
    )


def relative_delta_scores(trace) -> DeltaScores:
    """``||U_t|| / ||H_t||`` with ``H_t`` the state entering the block."""
    num = l2_norm_rows(trace.U)
    den = l2_norm_rows(trace.H_in)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(den > 0, num / den, 0.0)
    return DeltaScores(trace.layer, rel)


def layer_histograms(tokens, weights: ModelWeights, config: ModelConfig, num_bins: int = 20, relative: bool = False):
    run = prefill_full(tokens, weights, config)
    out = []
    for trace in run.traces:
        scores = relative_delta_scores(trace) if relative else DeltaScores(trace.layer, l2_norm_rows(trace.U))
        out.append(delta_histogram(scores, num_bins))
    return out


@dataclass
class AblationRow:
    variant: str
    kept_count: int
    kept_indices: tuple[int, ...]
    logit_l2_delta_vs_vanilla: float


def _row(variant: str, result: PrefillResult, vanilla_logits: np.ndarray) -> AblationRow:
    delta = float(np.linalg.norm(result.logits.astype(np.float64) - vanilla_logits.astype(np.float64)))
    return AblationRow(variant, len(result.active_set), result.active_set.kept_indices, delta)


def run_direction_ablation(tokens, weights: ModelWeights, config: ModelConfig, base: HaltingConfig):
    """Same budget, three directions. Returns ``(results, rows, pairwise_iou)``."""
    vanilla = prefill_full(tokens, weights, config).logits
    results = {d: dash_prefill(tokens, weights, config, base.replace(direction=d)) for d in ("keep_high", "keep_low", "random")}
    rows = [_row(d, r, vanilla) for d, r in results.items()]
    names = list(results)
    pairwise = {
        (x, y): set_iou(results[x].active_set.kept_indices, results[y].active_set.kept_indices)
        for i, x in enumerate(names)
        for y in names[i + 1:]
    }
    return results, rows, pairwise


def run_signal_ablation(tokens, weights: ModelWeights, config: ModelConfig, base: HaltingConfig):
    vanilla = prefill_full(tokens, weights, config).logits
    results = {s: dash_prefill(tokens, weights, config, base.replace(signal=s)) for s in ("delta_attn", "delta_block")}
    return results, [_row(s, r, vanilla) for s, r in results.items()]


def run_schedule_ablation(tokens, weights: ModelWeights, config: ModelConfig, base: HaltingConfig, shots: Sequence[int] = (1, 2, 3, 4)):
    vanilla = prefill_full(tokens, weights, config).logits
    results = {f"shots={k}": dash_prefill(tokens, weights, config, base.replace(shots=k)) for k in shots}
    return results, [_row(name, r, vanilla) for name, r in results.items()]
