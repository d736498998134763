#!/usr/bin/env python3
"""
Rajchman Lab - Normality Diagnostics
Exact Weyl sums, base-b digit statistics and the even-base non-normality
certificate for samples that carry a zero block.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple, Union

import mpmath
import numpy as np

from dyadic_digits import v2
from measure import SampleStream
from param_schedule import ParamSchedule
from utils import (
    HypothesisViolationError,
    PrecisionStarvationError,
    ScheduleError,
    fraction_to_float_upper,
)

logger = logging.getLogger(__name__)

WEYL_GUARD_BITS = 40
DIGIT_GUARD_BITS = 16
DIGIT_CHUNK = 64
# float64 slack on an average of unit-modulus terms
AVERAGE_ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class DyadicApprox:
    """x = X / 2^P; `exact` marks x as the real itself rather than a truncation."""
    X: int
    P: int
    exact: bool = False

    def __post_init__(self):
        if self.P < 0 or not 0 <= self.X < (1 << self.P):
            raise ValueError(f"need 0 <= X < 2^P, got X={self.X}, P={self.P}")

    @property
    def value(self) -> Fraction:
        return Fraction(self.X, 1 << self.P)

    @classmethod
    def from_fraction(cls, value: Fraction, P: int) -> "DyadicApprox":
        """floor(value 2^P) / 2^P, exact when value has a dyadic denominator dividing 2^P."""
        value = Fraction(value)
        if not 0 <= value < 1:
            raise ValueError(f"x must lie in [0, 1), got {value}")
        scaled = value * (1 << P)
        return cls(X=math.floor(scaled), P=P, exact=scaled.denominator == 1)

    @classmethod
    def from_sample(cls, stream: SampleStream, exact: bool = False) -> "DyadicApprox":
        return cls(X=stream.numerator(), P=stream.depth, exact=exact)

    def digit(self, k: int) -> int:
        """Binary digit d_k(x), k >= 1."""
        if k < 1:
            raise ValueError("digits are indexed from 1")
        if k > self.P:
            if self.exact:
                return 0
            raise PrecisionStarvationError(f"d_{k} lies beyond precision {self.P}", required_precision=k)
        return (self.X >> (self.P - k)) & 1


def _as_dyadic(x: Union[DyadicApprox, SampleStream]) -> DyadicApprox:
    if isinstance(x, SampleStream):
        return DyadicApprox.from_sample(x)
    return x


# Weyl sums
@dataclass
class WeylReport:
    b: int
    h: int
    N: int
    re: float
    im: float
    arith_err: float
    trace: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def abs(self) -> float:
        return math.hypot(self.re, self.im)

    def csv_rows(self):
        for n, re, im in self.trace:
            yield [n, repr(re), repr(im)]


def _residues(x: DyadicApprox, b: int, h: int, N: int) -> List[int]:
    """h X b^n mod 2^P for n = 1..N."""
    modulus = 1 << x.P
    value = h * x.X % modulus
    residues = []
    for _ in range(N):
        value = value * b % modulus
        residues.append(value)
    return residues


def frac_window_violations(residues: List[int], first_n: int, b: int, K: int, N: int, P: int,
                           exact: bool) -> Tuple[int, int]:
    """Count n = first_n, first_n + 1, ... with {x b^n} possibly above b^N 2^-K.

    residues[i] is X b^n mod 2^P for n = first_n + i. An inexact x adds the
    truncation slack b^n to each residue. Returns (violations, max upper residue).
    """
    limit = b ** N << P
    power = b ** first_n
    violations = top = 0
    for res in residues:
        upper = res if exact else res + power
        if upper << K > limit:
            violations += 1
        top = max(top, upper)
        power *= b
    return violations, top


def fractional_parts(x: DyadicApprox, b: int, h: int, N: int) -> List[Fraction]:
    """{h x b^n} for n = 1..N, exact for the truncated x."""
    return [Fraction(res, 1 << x.P) for res in _residues(x, b, h, N)]


def required_weyl_precision(b: int, N: int) -> int:
    return N * math.ceil(math.log2(b)) + WEYL_GUARD_BITS


def weyl_sum(x: DyadicApprox, b: int, h: int, N: int, trace: bool = False) -> WeylReport:
    """(1/N) sum_{n=1}^N e(h x b^n) from exact residues; float only in the final e(.)."""
    if b < 2 or h == 0 or N < 1:
        raise ValueError(f"need b >= 2, h != 0, N >= 1 (got b={b}, h={h}, N={N})")
    x = _as_dyadic(x)
    required = required_weyl_precision(b, N)
    if not x.exact and x.P < required:
        raise PrecisionStarvationError(
            f"Weyl sum with b={b}, N={N} needs {required} bits, x has {x.P}", required_precision=required)

    modulus = 1 << x.P
    angles = np.array([res / modulus for res in _residues(x, b, h, N)], dtype=np.float64)
    terms = np.exp(2j * np.pi * angles)
    mean = terms.mean()
    if x.exact:
        arith_err = 0.0
    else:
        arith_err = math.nextafter(2 * math.pi * fraction_to_float_upper(Fraction(abs(h) * b ** N, modulus)),
                                   math.inf)
    report = WeylReport(b=b, h=h, N=N, re=float(mean.real), im=float(mean.imag), arith_err=arith_err)
    if trace:
        running = np.cumsum(terms) / np.arange(1, N + 1)
        report.trace = [(n + 1, float(v.real), float(v.imag)) for n, v in enumerate(running)]
    return report


def weyl_scan(x: DyadicApprox, b: int, H: int, N: int, trace: bool = False) -> List[WeylReport]:
    """weyl_sum for h = 1..H."""
    return [weyl_sum(x, b, h, N, trace=trace) for h in range(1, H + 1)]


# Base-b digits
@dataclass
class BaseDigits:
    b: int
    digits: np.ndarray
    valid_horizon: Optional[int]


def valid_horizon(x: DyadicApprox, b: int) -> Optional[int]:
    """Largest n with b^n <= 2^(P - 16); None (unlimited) for exact x."""
    if x.exact:
        return None
    return _max_exponent_below(b, max(0, x.P - DIGIT_GUARD_BITS))


def base_digits(x: DyadicApprox, b: int, count: int) -> BaseDigits:
    """First `count` base-b digits of X / 2^P by chunked multiply-extract."""
    if b < 2:
        raise ValueError(f"base must be >= 2, got {b}")
    x = _as_dyadic(x)
    horizon = valid_horizon(x, b)
    if horizon is not None and count > horizon:
        required = math.ceil(count * math.log2(b)) + DIGIT_GUARD_BITS
        raise PrecisionStarvationError(
            f"{count} base-{b} digits exceed the valid horizon {horizon}", required_precision=required)

    digits = np.zeros(count, dtype=np.int64)
    mask = (1 << x.P) - 1
    num = x.X
    pos = 0
    while pos < count:
        width = min(DIGIT_CHUNK, count - pos)
        num *= b ** width
        chunk = num >> x.P
        num &= mask
        for j in range(width - 1, -1, -1):
            chunk, digits[pos + j] = divmod(chunk, b)
        pos += width
    return BaseDigits(b=b, digits=digits, valid_horizon=horizon)


@dataclass
class BlockFrequency:
    b: int
    k: int
    depth: int
    counts: np.ndarray
    max_deviation: float

    @property
    def windows(self) -> int:
        return self.depth - self.k + 1

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.windows

    def csv_rows(self):
        for code, count in enumerate(self.counts):
            block = np.base_repr(code, base=self.b).rjust(self.k, "0") if self.b <= 36 else str(code)
            yield [block, int(count), repr(float(count) / self.windows)]


def block_freq_digits(digits: np.ndarray, b: int, k: int) -> BlockFrequency:
    """Sliding-window counts of all b^k blocks in a digit sequence."""
    depth = int(digits.size)
    if k < 1 or depth < k:
        raise ValueError(f"need 1 <= k <= depth, got k={k}, depth={depth}")
    windows = depth - k + 1
    codes = np.zeros(windows, dtype=np.int64)
    for j in range(k):
        codes = codes * b + digits[j:j + windows]
    counts = np.bincount(codes, minlength=b ** k)
    deviation = float(np.max(np.abs(counts / windows - b ** -k)))
    return BlockFrequency(b=b, k=k, depth=depth, counts=counts, max_deviation=deviation)


def block_freq(x: DyadicApprox, b: int, k: int, depth: int) -> BlockFrequency:
    """Block frequencies over the first `depth` base-b digits of x, with max |freq - b^-k|."""
    return block_freq_digits(base_digits(x, b, depth).digits, b, k)


# Even-base non-normality
@dataclass
class NonNormalSchedule:
    """Quantities behind the zero-block argument for even b = 2^M_b B.

    With alpha = M_b / (2 log2 b), c = b^(alpha/M_b) / 2 = 2^(-1/2) for every even b.
    """
    b: int
    M_b: int
    B: int
    alpha: float
    ell: int
    K_prev: int
    K_ell: int
    N: int
    N_prime: int
    c: float
    bcK_log2: float
    quarter_ok: bool

    @property
    def bcK(self) -> float:
        return 2.0 ** self.bcK_log2


def _max_exponent_below(base: int, bits: int) -> int:
    """Largest n >= 0 with base^n <= 2^bits."""
    if bits < 0:
        raise ValueError("bits must be nonnegative")
    limit = 1 << bits
    n = int(bits / math.log2(base))
    while base ** (n + 1) <= limit:
        n += 1
    while n > 0 and base ** n > limit:
        n -= 1
    return n


def nonnormal_schedule(b: int, sched: ParamSchedule, ell: int) -> NonNormalSchedule:
    """N = 1 + floor(alpha K_ell / M_b), N' = 1 + floor(K_{ell-1} / M_b), c and b c^K_ell."""
    if b < 2 or b % 2:
        raise ValueError(f"non-normality certificates need an even base, got {b}")
    split = v2(b)
    M_b, B = split.e, split.odd_part
    K_prev, K_ell = sched.endpoint(ell - 1), sched.endpoint(ell)

    # alpha K + 2M < K  <=>  2^(M K) < b^(2 (K - 2M))
    if K_ell <= 2 * M_b or (1 << (M_b * K_ell)) >= b ** (2 * (K_ell - 2 * M_b)):
        raise ScheduleError(f"l={ell} too small: alpha K_l + 2M_b >= K_l for b={b}")

    # floor(alpha K / M_b) = floor(K / (2 log2 b)) = max n with b^(2n) <= 2^K
    N = 1 + _max_exponent_below(b * b, K_ell)
    N_prime = 1 + K_prev // M_b
    if N_prime >= N:
        raise ScheduleError(f"l={ell} too small: N'={N_prime} >= N={N}")

    with mpmath.workdps(30):
        log2b = mpmath.log(b, 2)
        alpha = M_b / (2 * log2b)
        c = b ** (alpha / M_b) / 2
    bcK_log2 = math.log2(b) - K_ell / 2
    # b c^K < 1/4  <=>  16 b^2 < 2^K
    quarter_ok = 16 * b * b < (1 << K_ell)
    return NonNormalSchedule(b=b, M_b=M_b, B=B, alpha=float(alpha), ell=ell, K_prev=K_prev,
                             K_ell=K_ell, N=N, N_prime=N_prime, c=float(c),
                             bcK_log2=bcK_log2, quarter_ok=quarter_ok)


@dataclass
class NonNormalCertificate:
    schedule: NonNormalSchedule
    precision: int
    exact: bool
    frac_bound_log2: float
    max_frac: float
    frac_violations: int
    re_avg: float
    im_avg: float
    arith_err: float
    lower_bound: float
    passed: bool

    def to_dict(self) -> Dict[str, Any]:
        s = self.schedule
        return {
            "b": s.b, "M_b": s.M_b, "B": s.B, "alpha": s.alpha, "c": s.c, "ell": s.ell,
            "K_prev": str(s.K_prev), "K_ell": str(s.K_ell), "N": s.N, "N_prime": s.N_prime,
            "bcK_log2": s.bcK_log2, "quarter_ok": s.quarter_ok,
            "precision": self.precision, "exact": self.exact,
            "frac_bound_log2": self.frac_bound_log2, "max_frac": self.max_frac,
            "frac_violations": self.frac_violations,
            "re_S_over_N": self.re_avg, "im_S_over_N": self.im_avg,
            "arith_err": self.arith_err, "lower_bound": self.lower_bound,
            "passed": self.passed,
        }


CERTIFICATE_FIELDS = (
    "b", "M_b", "B", "alpha", "c", "ell", "K_prev", "K_ell", "N", "N_prime", "bcK_log2",
    "quarter_ok", "precision", "exact", "frac_bound_log2", "max_frac", "frac_violations",
    "re_S_over_N", "im_S_over_N", "arith_err", "lower_bound", "passed",
)


def certified_lower_bound(N: int, N_prime: int, bcK_log2: float) -> float:
    """(1 - N'/N) cos(2 pi b c^K) - N'/N."""
    with mpmath.workdps(30):
        ratio = mpmath.mpf(N_prime) / N
        bound = (1 - ratio) * mpmath.cos(2 * mpmath.pi * mpmath.power(2, bcK_log2)) - ratio
        return float(bound)


def _check_zero_block(x: DyadicApprox, K_prev: int, K_ell: int, ell: int):
    hi = min(x.P, K_ell)
    if hi <= K_prev:
        return
    width = hi - K_prev
    window = (x.X >> (x.P - hi)) & ((1 << width) - 1)
    if window:
        k = K_prev + width - window.bit_length() + 1
        raise HypothesisViolationError(f"d_{k}(x) = 1 inside block B_{ell}", digit_index=k)


def certify_nonnormal(x: Union[DyadicApprox, SampleStream], b: int, sched: ParamSchedule,
                      ell: int) -> NonNormalCertificate:
    """Check {x b^n} <= b^N 2^-K_l < 1/4 on (N', N] and Re S/N against the certified bound."""
    x = _as_dyadic(x)
    ns = nonnormal_schedule(b, sched, ell)

    if sched.is_finite and ell == sched.num_blocks:
        required = ns.K_ell
    else:
        required = sched.endpoint(ell + 1)
    if not x.exact and x.P < required:
        raise PrecisionStarvationError(f"certificate at l={ell} needs P >= {required}, got {x.P}",
                                       required_precision=required)
    _check_zero_block(x, ns.K_prev, ns.K_ell, ell)

    # {x b^n} <= b^N 2^-K  <=>  residue 2^K <= b^N 2^P
    residues = _residues(x, b, 1, ns.N)
    violations, top = frac_window_violations(residues[ns.N_prime:], ns.N_prime + 1, b, ns.K_ell, ns.N,
                                             x.P, x.exact)
    max_frac = top / (1 << x.P) if x.P else 0.0

    weyl = weyl_sum(x, b, 1, ns.N)
    lower = certified_lower_bound(ns.N, ns.N_prime, ns.bcK_log2)
    passed = (violations == 0 and ns.quarter_ok
              and weyl.re - weyl.arith_err - AVERAGE_ROUNDING_SLACK >= lower)
    cert = NonNormalCertificate(
        schedule=ns, precision=x.P, exact=x.exact,
        frac_bound_log2=ns.N * math.log2(b) - ns.K_ell,
        max_frac=max_frac, frac_violations=violations,
        re_avg=weyl.re, im_avg=weyl.im, arith_err=weyl.arith_err,
        lower_bound=lower, passed=passed,
    )
    logger.info(f"Non-normality certificate b={b}, l={ell}: Re S/N={weyl.re:.6f} "
                f"vs bound {lower:.6f} -> {'pass' if passed else 'FAIL'}")
    return cert


def validate_certificate(record: Dict[str, Any]) -> List[str]:
    """Problems found in a certificate record; empty when it is self-consistent."""
    problems = []
    missing = [name for name in CERTIFICATE_FIELDS if name not in record]
    if missing:
        return [f"missing fields: {', '.join(missing)}"]
    N, N_prime = int(record["N"]), int(record["N_prime"])
    if not 1 <= N_prime < N:
        problems.append(f"N'={N_prime} not in [1, N)")
    expected = certified_lower_bound(N, N_prime, float(record["bcK_log2"]))
    if not math.isclose(expected, float(record["lower_bound"]), rel_tol=0, abs_tol=1e-12):
        problems.append(f"lower_bound {record['lower_bound']} != recomputed {expected}")
    holds = (int(record["frac_violations"]) == 0 and bool(record["quarter_ok"])
             and float(record["re_S_over_N"]) - float(record["arith_err"]) - AVERAGE_ROUNDING_SLACK
             >= float(record["lower_bound"]))
    if holds != bool(record["passed"]):
        problems.append(f"passed={record['passed']} disagrees with the recorded quantities")
    return problems
