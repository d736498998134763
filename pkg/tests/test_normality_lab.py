import math
import random
from fractions import Fraction

import numpy as np
import pytest

from measure import MeasureSpec, sample
from normality_lab import (
    DyadicApprox,
    base_digits,
    block_freq,
    block_freq_digits,
    certified_lower_bound,
    certify_nonnormal,
    frac_window_violations,
    fractional_parts,
    nonnormal_schedule,
    validate_certificate,
    weyl_scan,
    weyl_sum,
)
from param_schedule import ParamSchedule
from utils import HypothesisViolationError, PrecisionStarvationError, ScheduleError


def exact(value, P=64):
    return DyadicApprox.from_fraction(Fraction(value), P)


def test_dyadic_approx_digits():
    x = exact(Fraction(5, 8), 3)
    assert x.exact
    assert [x.digit(k) for k in (1, 2, 3, 4)] == [1, 0, 1, 0]
    truncated = DyadicApprox(X=5, P=3)
    with pytest.raises(PrecisionStarvationError) as info:
        truncated.digit(4)
    assert info.value.required_precision == 4
    assert not DyadicApprox.from_fraction(Fraction(1, 3), 10).exact
    with pytest.raises(ValueError):
        DyadicApprox(X=8, P=3)
    with pytest.raises(ValueError):
        DyadicApprox.from_fraction(Fraction(1), 3)


@pytest.mark.parametrize("b, h, N", [(3, 1, 10), (2, 5, 7), (7, -2, 30)])
def test_weyl_sum_of_zero(b, h, N):
    report = weyl_sum(DyadicApprox(X=0, P=0, exact=True), b, h, N)
    assert report.re == pytest.approx(1.0, abs=1e-15)
    assert report.arith_err == 0


def test_weyl_sum_near_one_third():
    P = 4096
    x = DyadicApprox.from_fraction(Fraction(1, 3), P)
    report = weyl_sum(x, 3, 1, 100)
    assert 0 < report.arith_err < 1e-300
    assert abs(complex(report.re, report.im) - 1) <= report.arith_err + 1e-12


def test_weyl_sum_one_half_exact():
    report = weyl_sum(exact(Fraction(1, 2), 1), 3, 1, 25)
    assert report.re == pytest.approx(-1.0, abs=1e-12)
    assert report.abs == pytest.approx(1.0, abs=1e-12)


def test_weyl_sum_precision_starvation():
    with pytest.raises(PrecisionStarvationError) as info:
        weyl_sum(DyadicApprox(X=12345, P=100), 3, 1, 100)
    assert info.value.required_precision == 100 * 2 + 40


@pytest.mark.parametrize("b, h, N", [(1, 1, 5), (3, 0, 5), (3, 1, 0)])
def test_weyl_sum_rejects_arguments(b, h, N):
    with pytest.raises(ValueError):
        weyl_sum(exact(Fraction(1, 4)), b, h, N)


def test_fractional_parts_are_exact():
    rng = random.Random(9)
    for _ in range(10):
        P = rng.randint(200, 400)
        x = DyadicApprox(X=rng.getrandbits(P), P=P)
        b, h = rng.choice([3, 5, 6, 10]), rng.choice([1, 2, -3])
        parts = fractional_parts(x, b, h, 50)
        for n, part in enumerate(parts, start=1):
            value = h * x.value * b ** n
            assert part == value - math.floor(value)


def test_weyl_scan_and_trace():
    x = DyadicApprox(X=random.Random(1).getrandbits(600), P=600)
    reports = weyl_scan(x, 3, 4, 200, trace=True)
    assert [r.h for r in reports] == [1, 2, 3, 4]
    last = reports[0].trace[-1]
    assert last[0] == 200
    assert last[1] == pytest.approx(reports[0].re, abs=1e-12)
    assert all(r.abs <= 1 + r.arith_err + 1e-12 for r in reports)
    assert len(list(reports[0].csv_rows())) == 200


def test_base_digits_examples():
    assert base_digits(exact(Fraction(1, 2), 1), 3, 70).digits.tolist() == [1] * 70
    assert not base_digits(DyadicApprox(X=0, P=0, exact=True), 5, 10).digits.any()
    assert base_digits(exact(Fraction(1, 4), 2), 4, 5).digits.tolist() == [1, 0, 0, 0, 0]


def test_base_digits_match_rational_expansion():
    rng = random.Random(12)
    x = DyadicApprox(X=rng.getrandbits(400), P=400)
    result = base_digits(x, 7, 130)
    frac = x.value
    for d in result.digits:
        frac *= 7
        assert d == math.floor(frac)
        frac -= math.floor(frac)
    assert result.valid_horizon == 136


def test_base_digits_horizon():
    x = DyadicApprox(X=1, P=40)
    assert base_digits(x, 3, 15).valid_horizon == 15
    with pytest.raises(PrecisionStarvationError):
        base_digits(x, 3, 16)


def test_block_freq_one_half_base_three():
    result = block_freq(exact(Fraction(1, 2), 1), 3, 1, 1000)
    assert result.counts.tolist() == [0, 1000, 0]
    assert result.max_deviation == pytest.approx(2 / 3)


def test_block_freq_uniform_digits():
    digits = np.random.default_rng(7).integers(0, 3, size=100000)
    assert block_freq_digits(digits, 3, 1).max_deviation <= 0.02
    pairs = block_freq_digits(digits, 3, 2)
    assert pairs.counts.sum() == pairs.windows
    assert len(list(pairs.csv_rows())) == 9


def test_block_freq_sees_forced_zero_block():
    spec = MeasureSpec(ParamSchedule("explicit", K=[0, 4, 16, 64], eps=[0, 0, 0]))
    stream = sample(spec, 11, 64, forced_zero_blocks={3})
    x = DyadicApprox.from_sample(stream, exact=True)
    result = block_freq(x, 2, 1, 64)
    assert result.counts[0] >= 48


def test_block_freq_rejects_long_blocks():
    with pytest.raises(ValueError):
        block_freq_digits(np.zeros(3, dtype=np.int64), 2, 4)


def test_nonnormal_schedule_base_two(acceptance_spec):
    ns = nonnormal_schedule(2, acceptance_spec.sched, 3)
    assert (ns.M_b, ns.B, ns.K_prev, ns.K_ell, ns.N, ns.N_prime) == (1, 1, 16, 64, 33, 17)
    assert ns.alpha == pytest.approx(0.5)
    assert ns.c == pytest.approx(2 ** -0.5)
    assert ns.bcK_log2 == -31
    assert ns.quarter_ok


def test_nonnormal_schedule_base_twelve(acceptance_spec):
    ns = nonnormal_schedule(12, acceptance_spec.sched, 4)
    assert (ns.M_b, ns.B) == (2, 3)
    assert (ns.N, ns.N_prime) == (36, 33)
    assert 0 < ns.c < 1
    assert ns.c == pytest.approx(2 ** -0.5)


def test_nonnormal_schedule_errors(acceptance_spec):
    with pytest.raises(ValueError):
        nonnormal_schedule(3, acceptance_spec.sched, 3)
    with pytest.raises(ScheduleError):
        nonnormal_schedule(2, acceptance_spec.sched, 1)


def test_certified_lower_bound_value():
    assert certified_lower_bound(33, 17, -31) == pytest.approx(-1 / 33, abs=1e-15)


@pytest.mark.parametrize("residue, is_exact, expected", [
    (64, True, (0, 64)),
    (64, False, (1, 68)),
    (60, False, (0, 64)),
    (65, True, (1, 65)),
])
def test_frac_window_counts_truncation_slack(residue, is_exact, expected):
    # P = 8, b = 2, K = 4, N = 2: the window is {x 2^n} <= 2^-2, i.e. residue <= 64 at n = 2
    assert frac_window_violations([residue], 2, 2, 4, 2, 8, is_exact) == expected


def test_frac_window_slack_grows_with_n():
    # slack at n = 1 is 2, at n = 2 it is 4
    assert frac_window_violations([62, 62], 1, 2, 4, 2, 8, False) == (1, 66)


def test_certificate_with_forced_zero_block(acceptance_spec):
    stream = sample(acceptance_spec, 42, 256, forced_zero_blocks={3})
    cert = certify_nonnormal(stream, 2, acceptance_spec.sched, 3)
    assert cert.passed
    assert cert.frac_violations == 0
    assert cert.lower_bound == pytest.approx(-1 / 33, abs=1e-12)
    assert cert.re_avg >= cert.lower_bound
    assert validate_certificate(cert.to_dict()) == []


def test_certificate_acceptance_case(powers_of_four_spec):
    sched = powers_of_four_spec.sched
    stream = sample(powers_of_four_spec, 42, sched.endpoint(7), forced_zero_blocks={6})
    cert = certify_nonnormal(stream, 2, sched, 6)
    assert (cert.schedule.N, cert.schedule.N_prime) == (2049, 1025)
    assert cert.passed
    assert cert.frac_violations == 0
    assert cert.frac_bound_log2 == 2049 - 4096


def test_certificate_for_zero():
    sched = ParamSchedule("explicit", K=[0, 4, 16, 64, 256], eps=[1, Fraction(1, 2), Fraction(1, 3), Fraction(1, 4)])
    cert = certify_nonnormal(DyadicApprox(X=0, P=0, exact=True), 2, sched, 3)
    assert cert.passed
    assert cert.re_avg == pytest.approx(1.0)


def test_certificate_hypothesis_violation(acceptance_spec):
    x = DyadicApprox(X=1 << (256 - 20), P=256)
    with pytest.raises(HypothesisViolationError) as info:
        certify_nonnormal(x, 2, acceptance_spec.sched, 3)
    assert info.value.digit_index == 20


def test_certificate_precision_starvation(acceptance_spec):
    with pytest.raises(PrecisionStarvationError) as info:
        certify_nonnormal(DyadicApprox(X=0, P=100), 2, acceptance_spec.sched, 3)
    assert info.value.required_precision == 256


def test_validate_certificate_finds_problems(acceptance_spec):
    stream = sample(acceptance_spec, 42, 256, forced_zero_blocks={3})
    record = certify_nonnormal(stream, 2, acceptance_spec.sched, 3).to_dict()
    record["passed"] = False
    record["lower_bound"] = -5.0
    problems = validate_certificate(record)
    assert len(problems) == 2
    del record["N"]
    assert validate_certificate(record)[0].startswith("missing fields")
