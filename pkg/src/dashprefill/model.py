"""Toy decoder-only transformer with per-block traces and a KV cache.

Blocks are pre-norm: ``H~ = H + U`` with ``U = Attn(RMSNorm(H))`` and
``H_out = H~ + FFN(RMSNorm(H~))`` using a SiLU-gated FFN. Rotary embeddings
are applied from the *original* position id of each token, so a compacted
sequence keeps the positions it had before tokens were removed. Causality is
defined on those ids: query ``i`` may attend key ``j`` iff ``pos[j] <= pos[i]``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapacityError, ContractError, InputError
from .tensor import DTYPE, matmul, rms_norm, softmax_rows


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 6
    hidden_dim: int = 32
    num_heads: int = 4
    head_dim: int = 8
    ffn_dim: int = 64
    vocab_size: int = 97
    max_seq_len: int = 256
    norm_eps: float = 1e-6
    rope_base: float = 10000.0

    def __post_init__(self):
        counts = ("num_layers", "hidden_dim", "num_heads", "head_dim", "ffn_dim", "vocab_size", "max_seq_len")
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ContractError(f"{name} must be a positive integer, got {value!r}")
        if self.num_layers < 2:
            raise ContractError("num_layers must be >= 2")
        if self.hidden_dim != self.num_heads * self.head_dim:
            raise ContractError(
                f"hidden_dim ({self.hidden_dim}) != num_heads*head_dim ({self.num_heads}*{self.head_dim})"
            )
        if self.head_dim % 2:
            raise ContractError("head_dim must be even for rotary embeddings")
        if not self.norm_eps > 0:
            raise ContractError("norm_eps must be > 0")
        # stored as float32 in weight files; round now so reloads are exact
        object.__setattr__(self, "norm_eps", float(np.float32(self.norm_eps)))
        object.__setattr__(self, "rope_base", float(np.float32(self.rope_base)))

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {}
        for key, raw in values.items():
            kwargs[key] = float(raw) if key in ("norm_eps", "rope_base") else int(raw)
        if "head_dim" not in kwargs and "hidden_dim" in kwargs:
            heads = kwargs.get("num_heads", cls.num_heads)
            kwargs["head_dim"] = kwargs["hidden_dim"] // heads
        return cls(**kwargs)


@dataclass
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray
    w_gate: np.ndarray
    attn_norm_gain: np.ndarray
    ffn_norm_gain: np.ndarray


# serialization order of the per-layer tensors
LAYER_TENSORS = ("wq", "wk", "wv", "wo", "w_up", "w_down", "w_gate", "attn_norm_gain", "ffn_norm_gain")


@dataclass
class ModelWeights:
    config: ModelConfig
    token_embedding: np.ndarray
    layers: list[LayerWeights]
    final_norm_gain: np.ndarray
    lm_head: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """All tensors in file order, with dotted names."""
        out = [("token_embedding", self.token_embedding)]
        for i, layer in enumerate(self.layers):
            out.extend((f"layers.{i}.{name}", getattr(layer, name)) for name in LAYER_TENSORS)
        out.append(("final_norm_gain", self.final_norm_gain))
        out.append(("lm_head", self.lm_head))
        return out

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        d, m = c.hidden_dim, c.ffn_dim
        layer_shapes = {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w_up": (d, m), "w_down": (m, d), "w_gate": (d, m),
            "attn_norm_gain": (d,), "ffn_norm_gain": (d,),
        }
        shapes = {"token_embedding": (c.vocab_size, d)}
        for i in range(c.num_layers):
            shapes.update({f"layers.{i}.{k}": v for k, v in layer_shapes.items()})
        shapes["final_norm_gain"] = (d,)
        shapes["lm_head"] = (d, c.vocab_size)
        return shapes

    def validate(self) -> None:
        if len(self.layers) != self.config.num_layers:
            raise ContractError(f"expected {self.config.num_layers} layers, got {len(self.layers)}")
        expected = self.expected_shapes()
        for name, tensor in self.tensors():
            if tensor.shape != expected[name]:
                raise ContractError(f"{name}: shape {tensor.shape} != {expected[name]}")
            if tensor.dtype != DTYPE:
                raise ContractError(f"{name}: dtype {tensor.dtype} is not float32")
            if not np.isfinite(tensor).all():
                raise ContractError(f"{name}: non-finite entries")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, tensor in self.tensors():
            h.update(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
        return h.hexdigest()


def init_weights(config: ModelConfig, seed: int) -> ModelWeights:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) matrices from a seeded generator.

    Norm gains start at one, as in the usual RMSNorm initialisation.
    """
    rng = np.random.default_rng(seed)
    d, m, v = config.hidden_dim, config.ffn_dim, config.vocab_size
    bound = 1.0 / np.sqrt(d)

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape).astype(DTYPE)

    embedding = uniform(v, d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                wq=uniform(d, d),
                wk=uniform(d, d),
                wv=uniform(d, d),
                wo=uniform(d, d),
                w_up=uniform(d, m),
                w_down=uniform(m, d),
                w_gate=uniform(d, m),
                attn_norm_gain=np.ones(d, dtype=DTYPE),
                ffn_norm_gain=np.ones(d, dtype=DTYPE),
            )
        )
    return ModelWeights(
        config=config,
        token_embedding=embedding,
        layers=layers,
        final_norm_gain=np.ones(d, dtype=DTYPE),
        lm_head=uniform(d, v),
    )


@dataclass
class BlockTrace:
    """Everything one block computed for the current active sequence.

    ``U`` is the attention output before the residual add. ``keys`` carry
    rotary embedding already. ``attn`` (heads x queries x keys) is only
    filled when requested.
    """

    layer: int
    positions: np.ndarray
    H_in: np.ndarray
    U: np.ndarray
    H_out: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    attn: Optional[np.ndarray] = None


@dataclass
class LayerCache:
    keys: np.ndarray
    values: np.ndarray
    positions: np.ndarray

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def append(self, k: np.ndarray, v: np.ndarray, pos: int) -> None:
        self.keys = np.concatenate([self.keys, k], axis=0)
        self.values = np.concatenate([self.values, v], axis=0)
        self.positions = np.append(self.positions, np.int64(pos))


@dataclass
class KvCache:
    """Per-layer keys/values. Layer lengths may differ after halting.

    Owned by a single decode stream; ``decode_greedy`` appends in place.
    ``next_position`` is the original position id the next token will get.
    """

    layers: list[LayerCache]
    next_position: int

    def lengths(self) -> list[int]:
        return [len(layer) for layer in self.layers]


def rope_tables(positions: np.ndarray, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = np.float64(base) ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(DTYPE), np.sin(angles).astype(DTYPE)


def apply_rope(x: np.ndarray, positions: np.ndarray, base: float) -> np.ndarray:
    """Rotate-half RoPE on ``x`` of shape (heads, T, head_dim)."""
    head_dim = x.shape[-1]
    half = head_dim // 2
    cos, sin = rope_tables(positions, head_dim, base)
    x1, x2 = x[..., :half], x[..., half:]
    return np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1).astype(DTYPE)


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    t, d = x.shape
    return x.reshape(t, num_heads, d // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, hd = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * hd)


def _check_positions(positions: np.ndarray) -> None:
    if positions.ndim != 1:
        raise ContractError("positions must be a 1-D index list")
    if positions.size > 1 and not np.all(np.diff(positions) > 0):
        raise ContractError("positions must be strictly increasing")


def ffn(x: np.ndarray, layer: LayerWeights) -> np.ndarray:
    gate = matmul(x, layer.w_gate)
    up = matmul(x, layer.w_up)
    silu = gate / (1.0 + np.exp(-gate, dtype=DTYPE))
    return matmul((silu * up).astype(DTYPE), layer.w_down)


def _block(
    H: np.ndarray,
    positions: np.ndarray,
    layer_idx: int,
    weights: ModelWeights,
    config: ModelConfig,
    past: Optional[LayerCache] = None,
    key_mask: Optional[np.ndarray] = None,
    return_attn: bool = False,
) -> BlockTrace:
    layer = weights.layers[layer_idx]
    x = rms_norm(H, layer.attn_norm_gain, config.norm_eps)
    q = apply_rope(_split_heads(matmul(x, layer.wq), config.num_heads), positions, config.rope_base)
    k_new = apply_rope(_split_heads(matmul(x, layer.wk), config.num_heads), positions, config.rope_base)
    v_new = _split_heads(matmul(x, layer.wv), config.num_heads)
    keys_flat, values_flat = _merge_heads(k_new), _merge_heads(v_new)

    if past is not None and len(past):
        k_all = np.concatenate([_split_heads(past.keys, config.num_heads), k_new], axis=1)
        v_all = np.concatenate([_split_heads(past.values, config.num_heads), v_new], axis=1)
        key_pos = np.concatenate([past.positions, positions])
    else:
        k_all, v_all, key_pos = k_new, v_new, positions

    allowed = key_pos[None, :] <= positions[:, None]
    if key_mask is not None:
        allowed = allowed & key_mask
    scale = DTYPE(1.0 / np.sqrt(config.head_dim))
    scores = matmul(q, k_all.transpose(0, 2, 1)) * scale
    probs = softmax_rows(scores, allowed[None, :, :])
    ctx = matmul(probs, v_all)
    U = matmul(_merge_heads(ctx), layer.wo)

    H_mid = (H + U).astype(DTYPE)
    H_out = (H_mid + ffn(rms_norm(H_mid, layer.ffn_norm_gain, config.norm_eps), layer)).astype(DTYPE)
    return BlockTrace(
        layer=layer_idx,
        positions=positions,
        H_in=H,
        U=U,
        H_out=H_out,
        keys=keys_flat,
        values=values_flat,
        attn=probs if return_attn else None,
    )


def block_forward(
    H,
    layer: int,
    positions: Sequence[int],
    weights: ModelWeights,
    config: ModelConfig,
    return_attn: bool = False,
) -> BlockTrace:
    """Run block ``layer`` on the rows of ``H`` at the given original positions."""
    H = np.asarray(H, dtype=DTYPE)
    positions = np.asarray(positions, dtype=np.int64)
    _check_positions(positions)
    if positions.shape[0] != H.shape[0]:
        raise ContractError(f"{positions.shape[0]} positions for {H.shape[0]} rows")
    if not 0 <= layer < config.num_layers:
        raise ContractError(f"layer {layer} out of range")
    return _block(H, positions, layer, weights, config, return_attn=return_attn)


def check_tokens(tokens: Sequence[int], config: ModelConfig) -> np.ndarray:
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise InputError("prompt must be a non-empty list of token ids")
    if ids.size > config.max_seq_len:
        raise InputError(f"prompt length {ids.size} exceeds max_seq_len {config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise InputError(f"token ids must lie in [0, {config.vocab_size})")
    return ids


def embed(tokens: np.ndarray, weights: ModelWeights) -> np.ndarray:
    return weights.token_embedding[tokens].astype(DTYPE)


def final_logits(h_last: np.ndarray, weights: ModelWeights, config: ModelConfig) -> np.ndarray:
    """Logits (1 x vocab) for a single hidden row."""
    x = rms_norm(np.asarray(h_last, dtype=DTYPE).reshape(1, -1), weights.final_norm_gain, config.norm_eps)
    return matmul(x, weights.lm_head)


@dataclass
class FullPrefill:
    hidden: list[np.ndarray]  # hidden[l] enters block l; hidden[L] is the final state
    logits: np.ndarray
    traces: list[BlockTrace]
    kv: KvCache

    def __iter__(self):
        return iter((self.hidden, self.logits, self.traces, self.kv))


def prefill_full(
    tokens: Sequence[int],
    weights: ModelWeights,
    config: ModelConfig,
    return_attn: bool = False,
) -> FullPrefill:
    """Vanilla prefill of every block on every token."""
    ids = check_tokens(tokens, config)
    positions = np.arange(ids.size, dtype=np.int64)
    H = embed(ids, weights)
    hidden = [H]
    traces = []
    caches = []
    for layer in range(config.num_layers):
        trace = _block(H, positions, layer, weights, config, return_attn=return_attn)
        traces.append(trace)
        caches.append(LayerCache(trace.keys, trace.values, positions.copy()))
        H = trace.H_out
        hidden.append(H)
    logits = final_logits(H[-1], weights, config)
    return FullPrefill(hidden, logits, traces, KvCache(caches, int(ids.size)))


def decode_step(
    token: int,
    kv: KvCache,
    weights: ModelWeights,
    config: ModelConfig,
    on_attend: Optional[Callable[[int, int], None]] = None,
) -> np.ndarray:
    """Feed one token at ``kv.next_position``; append to every layer's cache."""
    pos = kv.next_position
    if pos >= config.max_seq_len:
        raise CapacityError(f"position {pos} exceeds max_seq_len {config.max_seq_len}")
    if not 0 <= token < config.vocab_size:
        raise InputError(f"token id {token} out of range")
    positions = np.array([pos], dtype=np.int64)
    H = embed(np.array([token]), weights)
    for layer in range(config.num_layers):
        cache = kv.layers[layer]
        trace = _block(H, positions, layer, weights, config, past=cache)
        cache.append(trace.keys, trace.values, pos)
        if on_attend is not None:
            on_attend(layer, len(cache))
        H = trace.H_out
    kv.next_position = pos + 1
    return final_logits(H[-1], weights, config)


def decode_greedy(
    kv: KvCache,
    last_logits,
    steps: int,
    weights: ModelWeights,
    config: ModelConfig,
    on_attend: Optional[Callable[[int, int, int], None]] = None,
) -> list[int]:
    """Greedy decoding from the prompt's final logits.

    Each step takes the argmax of the current logits (lowest id wins ties),
    then feeds that token through the model so the cache grows by one entry
    per layer. Every layer attends exactly to the keys in its own cache,
    whatever length halting left it at. ``on_attend(step, layer, n_keys)`` is
    an instrumentation hook.
    """
    if steps < 0:
        raise ContractError("steps must be >= 0")
    out = []
    logits = np.asarray(last_logits).reshape(-1)
    for step in range(steps):
        token = int(np.argmax(logits))
        out.append(token)
        hook = None if on_attend is None else (lambda layer, n, s=step: on_attend(s, layer, n))
        logits = decode_step(token, kv, weights, config, hook).reshape(-1)
    return out
