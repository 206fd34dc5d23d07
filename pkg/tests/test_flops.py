import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dashprefill import CapacityError, ContractError
from dashprefill import flops
from dashprefill.flops import CostModel, emit_table7, per_layer_flops, speedup_report

TABLE7 = [
    (8192, 2792, 43.28, 1.76),
    (16384, 5520, 45.49, 1.83),
    (32768, 10976, 47.90, 1.92),
    (65536, 21888, 50.09, 2.00),
    (131072, 43711, 51.72, 2.07),
]


def test_per_layer_flops_examples():
    assert per_layer_flops(1, 1, 1) == 8
    assert per_layer_flops(2, 3, 5) == 156
    n, d, m = 16384, 3584, 18944
    assert per_layer_flops(n, d, m) == 4 * n * d * d + 2 * n * n * d + 2 * n * d * m


def test_per_layer_flops_big_integer_oracle():
    r = random.Random(0)
    for _ in range(1000):
        n, d, m = r.randint(1, 10**6), r.randint(1, 10**5), r.randint(1, 10**6)
        expected = sum([n * d * d] * 4) + sum([n * n * d] * 2) + sum([n * d * m] * 2)
        assert per_layer_flops(n, d, m) == expected


def test_per_layer_flops_errors():
    with pytest.raises(ContractError):
        per_layer_flops(0, 1, 1)
    with pytest.raises(CapacityError):
        per_layer_flops(2**60, 2**40, 1)


@pytest.mark.parametrize("n,kept,r,s", TABLE7)
def test_table7_rows(n, kept, r, s):
    rep = speedup_report(n, flops.PAPER_MODEL, 11, 0.667, 64, 32)
    assert rep.n_kept == kept
    assert rep.r_flops_pct == pytest.approx(r, abs=1e-9)
    assert rep.s_flops_rounded == pytest.approx(s, abs=1e-9)


def test_emit_table7():
    rows = flops.table_rows(emit_table7())
    assert rows == [(n, k, f"{r:.2f}", f"{s:.2f}") for n, k, r, s in TABLE7]
    assert flops.table_rows(emit_table7([8192])) == [(8192, 2792, "43.28", "1.76")]
    assert emit_table7([]) == []


def test_csv_and_text():
    text = flops.to_csv(emit_table7([8192]))
    assert text == "n,n_kept,r_flops_pct,s_flops\n8192,2792,43.28,1.76\n"
    assert "43.28%" in flops.to_text(emit_table7([8192]))


def test_no_pruning():
    rep = speedup_report(4096, flops.PAPER_MODEL, 11, 0.0, 64, 32)
    assert rep.n_kept == 4096
    assert rep.r_flops == 0.0
    assert rep.s_flops == 1.0
    assert rep.C_full == rep.C_ours


def test_tiny_config_hand_evaluation():
    # L=6, d=32, m=64, l_s=2, c=0.5, no protection, n=100 -> n_kept = 50
    model = CostModel(6, 32, 64)
    rep = speedup_report(100, model, 2, 0.5, 0, 0)
    a_n = 4 * 100 * 1024 + 2 * 10000 * 32 + 2 * 100 * 32 * 64  # 409600 + 640000 + 409600
    a_k = 4 * 50 * 1024 + 2 * 2500 * 32 + 2 * 50 * 32 * 64  # 204800 + 160000 + 204800
    assert (rep.A_n, rep.A_kept) == (1459200, 569600) == (a_n, a_k)
    assert rep.C_full == 6 * a_n
    assert rep.C_ours == 2 * a_n + 4 * a_k
    assert rep.s_flops == pytest.approx(8755200 / 5196800)


@settings(max_examples=200, deadline=None)
@given(st.integers(100, 200000), st.integers(1, 40), st.floats(0, 0.95), st.data())
def test_report_invariants(n, L, c, data):
    ls = data.draw(st.integers(0, L - 1))
    model = CostModel(L, 256, 1024)
    rep = speedup_report(n, model, ls, c, 8, 8)
    assert rep.C_full == L * rep.A_n
    assert rep.C_ours == ls * rep.A_n + (L - ls) * rep.A_kept
    assert math.isclose(rep.s_flops, 1 / (1 - rep.r_flops), rel_tol=1e-12)
    frac = rep.C_ours / rep.C_full
    assert ls / L - 1e-12 <= frac <= 1 + 1e-12
    assert (rep.C_ours == rep.C_full) == (rep.n_kept == n)


def test_speedup_monotone_in_length():
    grid = sorted(set(list(flops.PAPER_LENGTHS) + list(range(1024, 140000, 997))))
    speedups = [r.s_flops for r in emit_table7(grid)]
    assert all(b >= a - 1e-12 for a, b in zip(speedups, speedups[1:]))


def test_start_layer_bounds():
    with pytest.raises(ContractError):
        speedup_report(1000, CostModel(4, 8, 8), 4, 0.5)
