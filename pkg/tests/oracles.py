"""Slow, independent reference implementations used only by the tests."""

import math
from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal

import numpy as np


def naive_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            out[i][j] = sum(a[i][k] * b[k][j] for k in range(inner))
    return out


def naive_rms_norm(row, gain, eps):
    ms = sum(x * x for x in row) / len(row)
    return [g * x / math.sqrt(ms + eps) for x, g in zip(row, gain)]


def naive_rope(vec, pos, base):
    """Rotate pairs (i, i + half) of one head vector by pos * base^(-2i/hd)."""
    hd = len(vec)
    half = hd // 2
    out = list(vec)
    for i in range(half):
        theta = pos * base ** (-2.0 * i / hd)
        c, s = math.cos(theta), math.sin(theta)
        out[i] = vec[i] * c - vec[i + half] * s
        out[i + half] = vec[i + half] * c + vec[i] * s
    return out


def naive_block(H, positions, layer, config, key_allowed=None):
    """Per-head loop with an explicit T x T score matrix, in float64.

    Returns (U, H_out). ``key_allowed[i][j]`` optionally restricts keys.
    """
    H = np.asarray(H, dtype=np.float64)
    T, d = H.shape
    h, hd = config.num_heads, config.head_dim
    w = {k: np.asarray(v, dtype=np.float64) for k, v in vars(layer).items()}
    x = np.array([naive_rms_norm(list(r), list(w["attn_norm_gain"]), config.norm_eps) for r in H])
    q, k, v = x @ w["wq"], x @ w["wk"], x @ w["wv"]
    ctx = np.zeros((T, d))
    for head in range(h):
        sl = slice(head * hd, (head + 1) * hd)
        qh = [naive_rope(list(q[t, sl]), positions[t], config.rope_base) for t in range(T)]
        kh = [naive_rope(list(k[t, sl]), positions[t], config.rope_base) for t in range(T)]
        for i in range(T):
            scores = []
            for j in range(T):
                ok = positions[j] <= positions[i] and (key_allowed is None or key_allowed[i][j])
                s = sum(a * b for a, b in zip(qh[i], kh[j])) / math.sqrt(hd)
                scores.append(s if ok else None)
            m = max(s for s in scores if s is not None)
            e = [0.0 if s is None else math.exp(s - m) for s in scores]
            z = sum(e)
            for j in range(T):
                ctx[i, sl] += (e[j] / z) * v[j, sl]
    U = ctx @ w["wo"]
    mid = H + U
    y = np.array([naive_rms_norm(list(r), list(w["ffn_norm_gain"]), config.norm_eps) for r in mid])
    gate = y @ w["w_gate"]
    up = y @ w["w_up"]
    act = gate / (1.0 + np.exp(-gate)) * up
    return U, mid + act @ w["w_down"]


def naive_prefill_logits(tokens, weights, config, stages=()):
    """Full prefill via naive_block; ``stages`` = [(decision_layer, kept_set)]."""
    T = len(tokens)
    H = np.asarray(weights.token_embedding, dtype=np.float64)[list(tokens)]
    active = [True] * T
    decisions = dict(stages)
    for layer in range(config.num_layers):
        if layer - 1 in decisions:
            kept = decisions[layer - 1]
            active = [i in kept for i in range(T)]
        allowed = [[active[j] or i == j for j in range(T)] for i in range(T)]
        _, out = naive_block(H, list(range(T)), weights.layers[layer], config, allowed)
        H = np.where(np.array(active)[:, None], out, H)
    x = naive_rms_norm(list(H[-1]), list(weights.final_norm_gain.astype(np.float64)), config.norm_eps)
    return np.asarray(x) @ weights.lm_head.astype(np.float64)


def brute_ranks(values):
    """Average rank (1-based) of each entry by counting."""
    out = []
    for v in values:
        less = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        out.append(less + (equal + 1) / 2.0)
    return out


def brute_spearman(a, b):
    ra, rb = brute_ranks(list(a)), brute_ranks(list(b))
    n = len(a)
    d2 = sum((x - y) ** 2 for x, y in zip(ra, rb))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def brute_topk(values, k):
    """Top-k by repeatedly scanning for the best remaining (lowest index on ties)."""
    remaining = list(range(len(values)))
    chosen = []
    for _ in range(k):
        best = remaining[0]
        for i in remaining[1:]:
            if values[i] > values[best]:
                best = i
        chosen.append(best)
        remaining.remove(best)
    return chosen


def brute_iou(a, b, fraction):
    n = len(a)
    k = max(1, int((Decimal(repr(float(fraction))) * n).to_integral_value(rounding=ROUND_FLOOR)))
    sa, sb = set(brute_topk(list(a), k)), set(brute_topk(list(b), k))
    return len(sa & sb) / len(sa | sb)


def closed_form_kept(T, ratio, keep_first=0, keep_last=0, mode="pure_topk"):
    r = Decimal(repr(float(ratio)))
    if mode == "pure_topk":
        return int(((1 - r) * T).to_integral_value(rounding=ROUND_FLOOR))
    n_fix = keep_first + keep_last
    drop = int((r * (T - n_fix)).to_integral_value(rounding=ROUND_HALF_UP))
    return T - drop


def brute_select(scores, K, keep_first=0, keep_last=0, direction="keep_high"):
    """Protected-region selection over explicit (score, index) sorting."""
    T = len(scores)
    protected = [i for i in range(T) if i < keep_first or i >= T - keep_last]
    middle = [i for i in range(T) if i not in protected]
    sign = -1.0 if direction == "keep_high" else 1.0
    ranked = sorted(middle, key=lambda i: (sign * scores[i], i))
    return sorted(protected + ranked[: K - len(protected)])
