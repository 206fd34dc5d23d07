"""Analytical prefill FLOPs for single-shot halting.

Per-layer cost of a block on ``n`` tokens is ``A(n) = 4nd^2 + 2n^2d + 2ndm``.
Without halting every layer pays ``A(n)``; with halting the first ``l_s``
layers pay ``A(n)`` and the rest pay ``A(n_kept)``. Costs are exact Python
integers; only the reduction and speedup are turned into floats, and only
table output rounds them.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .errors import CapacityError, ContractError
from .policy import kept_length

INT128_LIMIT = 1 << 128

PAPER_LENGTHS = (8192, 16384, 32768, 65536, 131072)


@dataclass(frozen=True)
class CostModel:
    num_layers: int
    hidden_dim: int
    ffn_dim: int


# Qwen2.5-7B-Instruct-1M text setting
PAPER_MODEL = CostModel(num_layers=28, hidden_dim=3584, ffn_dim=18944)
PAPER_START_LAYER = 11  # floor(0.4 * 28)
PAPER_RATIO = 0.667
PAPER_KEEP_FIRST = 64
PAPER_KEEP_LAST = 32


@dataclass(frozen=True)
class FlopsReport:
    n: int
    n_kept: int
    A_n: int
    A_kept: int
    C_full: int
    C_ours: int
    r_flops: float
    s_flops: float

    @property
    def r_flops_pct(self) -> float:
        return round(self.r_flops * 100.0, 2)

    @property
    def s_flops_rounded(self) -> float:
        return round(self.s_flops, 2)


def per_layer_flops(n: int, d: int, m: int) -> int:
    if min(n, d, m) < 1:
        raise ContractError(f"n, d, m must be >= 1, got {(n, d, m)}")
    value = 4 * n * d * d + 2 * n * n * d + 2 * n * d * m
    if value >= INT128_LIMIT:
        raise CapacityError(f"A({n}) exceeds the 128-bit range")
    return value


def speedup_report(
    n: int,
    model: CostModel,
    start_layer: int,
    ratio: float,
    keep_first_n: int = 0,
    keep_last_n: int = 0,
    n_kept: int | None = None,
) -> FlopsReport:
    """Cost breakdown for prompt length ``n``.

    ``n_kept`` defaults to the protected-mode kept length; pass it explicitly
    to cost a realised run.
    """
    L = model.num_layers
    if not 0 <= start_layer < L:
        raise ContractError(f"start_layer {start_layer} must lie in [0, {L})")
    if n_kept is None:
        n_kept = kept_length(n, ratio, keep_first_n, keep_last_n, mode="protected")
    a_n = per_layer_flops(n, model.hidden_dim, model.ffn_dim)
    a_kept = per_layer_flops(n_kept, model.hidden_dim, model.ffn_dim)
    c_full = L * a_n
    c_ours = start_layer * a_n + (L - start_layer) * a_kept
    if max(c_full, c_ours) >= INT128_LIMIT:
        raise CapacityError("total FLOPs exceed the 128-bit range")
    ratio_exact = Fraction(c_ours, c_full)
    return FlopsReport(
        n=n,
        n_kept=n_kept,
        A_n=a_n,
        A_kept=a_kept,
        C_full=c_full,
        C_ours=c_ours,
        r_flops=float(1 - ratio_exact),
        s_flops=float(1 / ratio_exact),
    )


def emit_table7(
    lengths: Iterable[int] = PAPER_LENGTHS,
    model: CostModel = PAPER_MODEL,
    start_layer: int = PAPER_START_LAYER,
    ratio: float = PAPER_RATIO,
    keep_first_n: int = PAPER_KEEP_FIRST,
    keep_last_n: int = PAPER_KEEP_LAST,
) -> list[FlopsReport]:
    return [speedup_report(n, model, start_layer, ratio, keep_first_n, keep_last_n) for n in lengths]


CSV_HEADER = ("n", "n_kept", "r_flops_pct", "s_flops")


def table_rows(reports: Iterable[FlopsReport]) -> list[tuple[int, int, str, str]]:
    return [(r.n, r.n_kept, f"{r.r_flops_pct:.2f}", f"{r.s_flops_rounded:.2f}") for r in reports]


def to_csv(reports: Iterable[FlopsReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(table_rows(reports))
    return buf.getvalue()


def to_text(reports: Iterable[FlopsReport]) -> str:
    lines = [f"{'n':>9}  {'n_kept':>9}  {'r_FLOPs':>8}  {'s_FLOPs':>8}"]
    for n, kept, r, s in table_rows(reports):
        lines.append(f"{n:>9,}  {kept:>9,}  {r + '%':>8}  {s + 'x':>8}")
    return "\n".join(lines) + "\n"
