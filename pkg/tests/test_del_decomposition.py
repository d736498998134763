from fractions import Fraction

import pytest

from del_decomposition import (
    DEL_CSV_HEADER,
    N_to_R,
    abs_table,
    del_decompose,
    del_series,
    e_block_smallness,
    pair_frequencies,
    set_U1,
    set_U1_union,
    set_V1,
)
from dyadic_digits import digit
from measure import mu_hat
from param_schedule import indices_tT
from utils import BudgetExceededError

TOL = 1e-9


@pytest.mark.parametrize("N, R", [(1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (16, 4), (17, 5), (4096, 12)])
def test_N_to_R(N, R):
    assert N_to_R(N) == R
    if N > 1:
        assert 2 ** (R - 1) < N <= 2 ** R


def test_set_V1_examples():
    v1 = set_V1(3, 16)
    assert (v1.R, v1.R0, v1.order) == (4, 2, 2)
    assert v1.members == list(range(2, 17, 2))
    edge = set_V1(3, 1)
    assert (edge.R, edge.R0, edge.members) == (1, 1, [1])
    assert v1.c0_hat == Fraction(1, 4)
    assert v1.C0 == 8


@pytest.mark.parametrize("r", [3, 5, 7, 9])
@pytest.mark.parametrize("N", [2, 16, 100, 600])
def test_set_V1_matches_divisibility(r, N):
    v1 = set_V1(r, N)
    modulus = 2 ** v1.R0
    assert v1.members == [v for v in range(1, N + 1) if (r ** v - 1) % modulus == 0]
    assert len(v1.members) == N // v1.order


def test_set_V1_rejects_even_base():
    with pytest.raises(ValueError):
        set_V1(4, 16)


def test_pair_frequencies_small():
    assert pair_frequencies(1, 3, 2) == [6, 18, 24, 72]
    assert pair_frequencies(-2, 3, 1) == [-12]


def _brute_u1(v, ell, h, r, N, sched, alpha):
    R = N_to_R(N)
    K_prev, K_cur = sched.endpoint(ell - 1), sched.endpoint(ell)
    members = []
    for u in range(1, N + 1):
        xi = h * r ** u * (r ** v - 1) % 2 ** R
        changes = sum(digit(xi, k - 1) != digit(xi, k) for k in range(max(1, K_prev), K_cur))
        if changes < alpha * (K_cur - K_prev + 1):
            members.append(u)
    return members


def test_set_U1_matches_brute_scan(desk_del_spec):
    N = 256
    pair = indices_tT(desk_del_spec.sched, N_to_R(N))
    alpha = Fraction(1, 10)
    for v in (1, 3, 7, 100, 255):
        union = set()
        for ell in range(pair.t + 1, pair.T):
            members = set_U1(v, ell, 1, 3, N, desk_del_spec, alpha)
            assert members == _brute_u1(v, ell, 1, 3, N, desk_del_spec.sched, alpha)
            assert all(1 <= u <= N for u in members)
            union.update(members)
        assert set_U1_union(v, 1, 3, N, desk_del_spec, alpha) == sorted(union)


def test_abs_table_layout(desk_del_spec):
    table, max_err = abs_table(1, 3, 3, desk_del_spec, TOL, backend="mpmath")
    assert len(table) == 3 and all(len(row) == 3 for row in table)
    # row v, column u
    assert table[1][0] == mu_hat(desk_del_spec, 3 * (9 - 1), TOL).abs
    assert 0 <= max_err <= TOL


def test_decomposition_for_two(desk_del_spec):
    result = del_decompose(1, 3, 2, desk_del_spec, TOL, backend="mpmath")
    expected = sum(Fraction(mu_hat(desk_del_spec, eta, TOL).abs) for eta in (6, 24, 18, 72))
    assert result.I == expected
    assert result.I <= 4 * (1 + TOL)
    assert result.V1 == [1, 2] and result.V2 == []
    assert result.identity_ok


def test_decomposition_for_sixteen(desk_del_spec):
    result = del_decompose(1, 3, 16, desk_del_spec, TOL)
    assert (result.R, result.R0, result.t, result.T) == (4, 2, 2, 4)
    assert len(result.V1) == 8
    assert sorted(result.V1 + result.V2) == list(range(1, 17))
    assert result.identity_ok
    assert result.i22_ok
    assert result.I <= 256 * (1 + TOL)
    assert result.gamma_size + sum(result.u1_sizes.values()) == 8 * 16
    assert result.J0 == result.gamma_size * Fraction(1, 3)
    assert result.e_block_violations == 0
    assert result.u1_xi_ok


def test_decomposition_accepts_precomputed_table(desk_del_spec):
    table, err = abs_table(1, 3, 16, desk_del_spec, TOL)
    direct = del_decompose(1, 3, 8, desk_del_spec, TOL)
    reused = del_decompose(1, 3, 8, desk_del_spec, TOL, table=table, table_err=err)
    assert (reused.I, reused.I1, reused.I21, reused.I22) == (direct.I, direct.I1, direct.I21, direct.I22)


def test_decomposition_csv_row(desk_del_spec):
    result = del_decompose(1, 3, 16, desk_del_spec, TOL)
    row = result.csv_row()
    assert len(row) == len(DEL_CSV_HEADER)
    assert row[0] == "16" and row[-2] == "1"
    assert float(row[DEL_CSV_HEADER.index("aggregate_err")]) == pytest.approx(256 * TOL)
    assert set(result.fitted_constants()) == {"I1", "I21", "J1", "U1_vl"}


def test_wstar_rows_are_brute_checked(desk_del_spec):
    result = del_decompose(1, 3, 64, desk_del_spec, TOL)
    assert [row.ell for row in result.wstar] == [4, 5]
    for row in result.wstar:
        assert row.brute_checked
        # one-digit blocks: the pair (d_{l-2}, d_{l-1}) must not change
        assert row.count == 2 ** (result.R - 1)


def test_e_block_smallness(desk_del_spec):
    check = e_block_smallness(1, 3, 64, desk_del_spec, tol=TOL)
    assert check.checked > 0
    assert check.violations == 0
    assert check.max_ratio <= 1


def test_decomposition_argument_errors(desk_del_spec):
    with pytest.raises(ValueError):
        del_decompose(0, 3, 4, desk_del_spec, TOL)
    with pytest.raises(ValueError):
        del_decompose(1, 4, 4, desk_del_spec, TOL)
    with pytest.raises(BudgetExceededError):
        del_decompose(1, 3, 4097, desk_del_spec, TOL)
    with pytest.raises(BudgetExceededError):
        del_series(1, 3, 4097, desk_del_spec, TOL)


def test_del_series(desk_del_spec):
    series = del_series(1, 3, 12, desk_del_spec, TOL)
    assert [row.N for row in series.rows] == [1, 2, 4, 8, 12]
    assert series.monotone
    assert all(row.increment >= 0 for row in series.rows)
    harmonic_cap = sum(Fraction(1, n) for n in range(1, 13)) * (1 + Fraction(TOL))
    assert series.rows[-1].partial_sum <= harmonic_cap
    assert sum(row.increment for row in series.rows) == series.rows[-1].partial_sum
    assert len(list(series.csv_rows())) == 5


def test_del_series_agrees_with_decomposition(desk_del_spec):
    table, _ = abs_table(1, 3, 8, desk_del_spec, TOL)
    series = del_series(1, 3, 8, desk_del_spec, TOL, table=table)
    for row in series.rows:
        assert row.I == del_decompose(1, 3, row.N, desk_del_spec, TOL, table=table).I


@pytest.mark.slow
def test_del_series_full_size(desk_del_spec):
    series = del_series(1, 3, 256, desk_del_spec, TOL)
    assert series.monotone
    assert series.increments_decreasing()
    assert [row.N for row in series.rows][-1] == 256
