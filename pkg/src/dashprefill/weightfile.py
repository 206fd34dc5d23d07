"""DASHW1 binary weight files.

Layout (little-endian, no padding)::

    magic      8 bytes   b"DASHW1\\0\\0"
    counts     7 x u32   num_layers, hidden_dim, num_heads, head_dim,
                         ffn_dim, vocab_size, max_seq_len
    reals      2 x f32   norm_eps, rope_base
    tensors    f32 ...   token_embedding, then per layer
                         wq wk wv wo w_up w_down w_gate attn_norm_gain
                         ffn_norm_gain, then final_norm_gain, lm_head
                         (each raw row-major)
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .errors import ContractError, InputError
from .model import LAYER_TENSORS, LayerWeights, ModelConfig, ModelWeights

MAGIC = b"DASHW1\0\0"
HEADER = struct.Struct("<8s7I2f")


def to_bytes(weights: ModelWeights) -> bytes:
    c = weights.config
    parts = [
        HEADER.pack(
            MAGIC,
            c.num_layers, c.hidden_dim, c.num_heads, c.head_dim,
            c.ffn_dim, c.vocab_size, c.max_seq_len,
            c.norm_eps, c.rope_base,
        )
    ]
    for _, tensor in weights.tensors():
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(data: bytes) -> ModelWeights:
    if len(data) < HEADER.size:
        raise InputError("weight file truncated: header incomplete")
    magic, *counts, eps, base = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise InputError(f"bad magic {magic!r}, expected {MAGIC!r}")
    try:
        config = ModelConfig(*counts, norm_eps=eps, rope_base=base)
    except ContractError as exc:
        raise InputError(f"invalid header: {exc}") from exc

    d, m, v = config.hidden_dim, config.ffn_dim, config.vocab_size
    layer_shapes = {
        "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
        "w_up": (d, m), "w_down": (m, d), "w_gate": (d, m),
        "attn_norm_gain": (d,), "ffn_norm_gain": (d,),
    }
    offset = HEADER.size

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape))
        end = offset + 4 * n
        if end > len(data):
            raise InputError("weight file truncated: tensor data incomplete")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        offset = end
        return arr.astype(np.float32)

    embedding = take((v, d))
    layers = [LayerWeights(**{name: take(layer_shapes[name]) for name in LAYER_TENSORS}) for _ in range(config.num_layers)]
    final_gain = take((d,))
    lm_head = take((d, v))
    if offset != len(data):
        raise InputError(f"weight file has {len(data) - offset} trailing bytes")
    weights = ModelWeights(config, embedding, layers, final_gain, lm_head)
    try:
        weights.validate()
    except ContractError as exc:
        raise InputError(str(exc)) from exc
    return weights


def save(weights: ModelWeights, path: str | os.PathLike) -> str:
    """Write ``weights`` to ``path``; return the sha256 of the file bytes."""
    data = to_bytes(weights)
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load(path: str | os.PathLike) -> ModelWeights:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
