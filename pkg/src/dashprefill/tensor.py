"""Dense numeric kernels used by the toy transformer.

Matrices are plain 2-D ``numpy.ndarray`` objects in float32. Reductions that
feed a division (softmax denominators, norm accumulators) run in float64 and
are cast back, which keeps oracle comparisons tight at toy sizes.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

DTYPE = np.float32


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ContractError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` in float32.

    Raises ContractError when the inner dimensions disagree.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def softmax_rows(a, mask=None) -> np.ndarray:
    """Softmax over the last axis.

    ``mask`` is an optional boolean array broadcastable to ``a``; True marks
    entries that take part. Masked entries come out exactly zero. A row with
    no unmasked entry raises ContractError, since it means a query has an
    empty attention context.
    """
    x = np.asarray(a, dtype=np.float64)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=-1).all():
            raise ContractError("softmax row has no unmasked entries")
        x = np.where(mask, x, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=-1, keepdims=True)
    return out.astype(DTYPE)


def rms_norm(x, gain, eps: float) -> np.ndarray:
    """Scale-only RMS normalisation over the last axis.

    ``out = gain * x / sqrt(mean(x**2) + eps)``. Works on a single vector or
    on the rows of a matrix. A zero row maps to zero for any ``eps >= 0``.
    """
    x = np.asarray(x, dtype=DTYPE)
    gain = np.asarray(gain, dtype=DTYPE)
    if x.shape[-1] != gain.shape[-1]:
        raise ContractError(f"rms_norm length mismatch: {x.shape[-1]} vs {gain.shape[-1]}")
    ms = np.mean(np.square(x, dtype=np.float64), axis=-1, keepdims=True)
    denom = np.sqrt(ms + np.float64(np.float32(eps)))
    # all-zero rows with eps == 0 give 0/0; define them as zero
    with np.errstate(invalid="ignore", divide="ignore"):
        scaled = np.where(denom > 0, x / denom, 0.0)
    return (gain * scaled.astype(DTYPE)).astype(DTYPE)


def l2_norm_rows(a) -> np.ndarray:
    """Euclidean norm of every row, accumulated in float64."""
    a = np.asarray(a)
    if a.ndim == 1:
        a = a[None, :]
    return np.sqrt(np.sum(np.square(a, dtype=np.float64), axis=-1))
