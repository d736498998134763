from fractions import Fraction

import mpmath
import pytest

from param_schedule import (
    ParamSchedule,
    big_omega,
    check_admissible,
    indices_tT,
    k_ratio_trace,
    make_schedule,
    omega,
    omega_from_log,
    ratio_tends_to_zero,
    slow_growth_check,
)
from utils import ScheduleError, ScheduleSaturationError
from conftest import harmonic


def test_geometric_endpoints():
    sched = make_schedule("geometric", {"K_base": 10})
    assert sched.endpoint(3) == 1000
    assert sched.endpoints() == [0, 10, 100, 1000]


def test_canonical_regularization_is_monotone():
    sched = make_schedule("canonical", {"K_base": 10})
    assert [sched.endpoint(ell) for ell in range(1, 5)] == [10, 100, 1000, 10000]
    assert sched.epsilon(5) == Fraction(1, 5)
    for ell in range(2, 7):
        assert sched.endpoint(ell) >= 10 * sched.endpoint(ell - 1)


def test_explicit_schedule_accepted():
    sched = make_schedule("explicit", {"K": [0, 4, 16, 64], "eps": ["1", "1/2", "1/3"]})
    assert sched.num_blocks == 3
    assert sched.epsilon(2) == Fraction(1, 2)


@pytest.mark.parametrize("K, eps", [
    ([0, 4, 4], [1, 1]),
    ([1, 4, 16], [1, 1]),
    ([0, 4, 16], [1, Fraction(3, 2)]),
    ([0, 4, 16], [1]),
])
def test_explicit_schedule_rejected(K, eps):
    with pytest.raises(ScheduleError):
        ParamSchedule("explicit", K=K, eps=eps)


@pytest.mark.parametrize("kind, base", [("geometric", 9), ("canonical", None), ("fractal", 10)])
def test_bad_kind_or_base(kind, base):
    with pytest.raises(ScheduleError):
        ParamSchedule(kind, K_base=base)


def test_blocks_and_shifted_blocks():
    sched = harmonic([0, 4, 16])
    assert sched.block(1) == (1, 4)
    assert sched.block(2) == (5, 16)
    assert sched.shifted_block(2) == (3, 15)
    assert sched.block_width(2) == 12
    with pytest.raises(ScheduleError):
        sched.block(3)
    with pytest.raises(ScheduleError):
        sched.block(0)


def test_blocks_partition_prefix():
    sched = harmonic([0, 3, 7, 20, 41])
    covered = []
    for ell in range(1, 5):
        lo, hi = sched.block(ell)
        covered.extend(range(lo, hi + 1))
    assert covered == list(range(1, 42))


@pytest.mark.parametrize("K, R, t, T", [
    ([0, 4, 16, 64, 256, 1024], 100, 2, 4),
    ([0, 4, 16, 64], 16, 1, 2),
    ([0, 4, 16, 64], 1, 1, 1),
    ([0, 4, 16, 64], 17, 2, 3),
])
def test_indices_tT(K, R, t, T):
    pair = indices_tT(harmonic(K), R)
    assert (pair.t, pair.T, pair.R) == (t, T, R)


def test_indices_tT_brute_scan_and_monotone():
    K = [0, 4, 16, 64, 256, 1024]
    sched = harmonic(K)
    previous = (1, 1)
    for R in range(1, 1025):
        pair = indices_tT(sched, R)
        assert K[pair.T - 1] < R <= K[pair.T]
        assert K[pair.t - 1] ** 2 < R <= K[pair.t] ** 2
        assert pair.t <= pair.T
        assert pair.t >= previous[0] and pair.T >= previous[1]
        previous = (pair.t, pair.T)


def test_indices_tT_schedule_too_short():
    with pytest.raises(ScheduleError):
        indices_tT(harmonic([0, 4, 16]), 17)
    with pytest.raises(ScheduleError):
        indices_tT(harmonic([0, 4, 16]), 0)


def test_saturation_is_reported():
    sched = make_schedule("geometric", {"K_base": 10, "max_K": 10 ** 4})
    assert sched.endpoint(4) == 10 ** 4
    with pytest.raises(ScheduleSaturationError):
        sched.endpoint(5)
    assert sched.saturated


def test_admissibility_fails_at_desk_scale():
    sched = make_schedule("geometric", {"K_base": 10})
    report = check_admissible(sched, 2, [10 ** 6])
    row = report.rows[0]
    assert (row.t, row.T, row.K_T) == (3, 6, 10 ** 6)
    assert row.product == Fraction(1, 20)
    assert not row.passed and row.exact
    assert row.gap_ok
    assert report.growth_ok
    assert report.partial_sums_increasing


def test_admissibility_vacuous_product_fails():
    report = check_admissible(harmonic([0, 4, 16, 64]), 1, [5])
    assert report.rows[0].product == 1
    assert not report.rows[0].passed


def test_admissibility_with_unit_weights_fails_everywhere():
    sched = ParamSchedule("explicit", K=[0, 2, 4, 8, 16, 32, 64], eps=[1] * 6)
    report = check_admissible(sched, Fraction(1, 10), range(2, 65, 7))
    assert not any(row.passed for row in report.rows)
    assert report.eps_partial_sums[-1] == 6


def test_admissibility_passes_with_zero_weight():
    sched = ParamSchedule("explicit", K=[0, 2, 4, 8, 16, 32, 64], eps=[1, 1, 1, 0, 1, 1])
    report = check_admissible(sched, 3, [64])
    assert report.rows[0].product == 0
    assert report.rows[0].passed


def test_admissibility_records_short_schedule():
    report = check_admissible(harmonic([0, 4, 16]), 2, [10, 100])
    assert report.rows[1].error is not None
    assert not report.all_passed


def test_admissibility_rejects_nonpositive_gamma():
    with pytest.raises(ScheduleError):
        check_admissible(harmonic([0, 4, 16]), 0, [2])


def test_omega_values():
    with mpmath.workdps(50):
        assert omega(mpmath.e ** 16) == 4
    assert omega(1) == 0
    assert omega(2) == 0
    assert omega(3) == 1
    assert omega_from_log(16) == 4
    assert omega_from_log(Fraction(15, 1)) == 3
    assert big_omega(10) == 10 * omega(10)
    with pytest.raises(ValueError):
        omega(0.5)


def test_slow_growth_monotone_and_threshold():
    xs = [10 ** j for j in range(1, 13)]
    report = slow_growth_check(2, Fraction(1, 2), xs)
    assert report.monotone
    assert all(row.omega_x <= row.omega_Mx for row in report.rows)
    assert report.holds_from is not None


def test_slow_growth_threshold_for_m4():
    xs = [10 ** j for j in range(1, 13)]
    report = slow_growth_check(4, Fraction(1, 2), xs)
    threshold = report.holds_from
    assert threshold is not None
    for row in report.rows:
        if row.x >= threshold:
            assert row.omega_Mx <= Fraction(3, 2) * row.omega_x


def test_slow_growth_rejects_bad_parameters():
    with pytest.raises(ValueError):
        slow_growth_check(1, Fraction(1, 2), [10])
    with pytest.raises(ValueError):
        slow_growth_check(2, 0, [10])


def test_k_ratio_trace_geometric():
    trace = k_ratio_trace(make_schedule("geometric", {"K_base": 10}), 6)
    assert trace == [(ell, Fraction(1, 10)) for ell in range(1, 6)]
    assert ratio_tends_to_zero(trace)


def test_k_ratio_trace_stops_at_finite_end():
    trace = k_ratio_trace(harmonic([0, 4, 16, 64]), 10)
    assert [ell for ell, _ in trace] == [1, 2]


def test_serialization_round_trip():
    sched = harmonic([0, 4, 16, 64])
    data = sched.to_dict()
    assert data["K"] == ["0", "4", "16", "64"]
    assert data["eps"] == ["1", "1/2", "1/3"]
    assert ParamSchedule.from_dict(data).id == sched.id
    data["id"] = "0" * 64
    with pytest.raises(ScheduleError):
        ParamSchedule.from_dict(data)


def test_identity_distinguishes_schedules():
    assert harmonic([0, 4, 16]).id != harmonic([0, 4, 17]).id
    assert make_schedule("geometric", {"K_base": 10}).id != make_schedule("canonical", {"K_base": 10}).id
