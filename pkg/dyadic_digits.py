#!/usr/bin/env python3
"""
Rajchman Lab - Dyadic Digit Machinery
Bit extraction, exact fractional parts, digit-change statistics and
low-change string counts on big naturals.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, NamedTuple

import numpy as np

from utils import as_fraction

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = Fraction(1, 10)
MAX_ENUMERATION_LENGTH = 24

_POPCOUNT_BYTE = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def digit(eta: int, k: int) -> int:
    """k-th binary digit of eta (k = 0 is least significant)."""
    if eta < 0 or k < 0:
        raise ValueError("digit needs eta >= 0 and k >= 0")
    return (eta >> k) & 1


def frac_part_scaled(eta: int, k: int) -> Fraction:
    """{eta / 2^k} as an exact rational."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    return Fraction(eta % (1 << k), 1 << k)


def reduce_mod_pow2(eta: int, R: int) -> int:
    """xi = eta mod 2^R in [0, 2^R)."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    return eta & ((1 << R) - 1)


def digit_change_count(xi: int, a: int, b: int) -> int:
    """#{k in [a, b] : d_{k-1}(xi) != d_k(xi)}."""
    if not 1 <= a <= b:
        raise ValueError(f"window needs 1 <= a <= b, got [{a}, {b}]")
    # bit k-1 of xi ^ (xi >> 1) is d_{k-1} xor d_k
    changes = (xi ^ (xi >> 1)) >> (a - 1)
    return bin(changes & ((1 << (b - a + 1)) - 1)).count("1")


def block_change_window(K_prev: int, K_cur: int):
    """Window [K_{l-1}, K_l - 1] of pairs (d_{k-1}, d_k), clamped to k >= 1."""
    return max(1, K_prev), K_cur - 1


def change_threshold(alpha: Fraction, K_prev: int, K_cur: int) -> Fraction:
    """alpha * #Bbar_l with #Bbar_l = K_l - K_{l-1} + 1."""
    return alpha * (K_cur - K_prev + 1)


@dataclass
class BlockChange:
    ell: int
    count: int
    threshold: Fraction
    below: bool


@dataclass
class DigitChangeProfile:
    xi: int
    per_block: List[BlockChange] = field(default_factory=list)

    def csv_rows(self):
        for entry in self.per_block:
            yield [entry.ell, entry.count, entry.threshold.numerator,
                   entry.threshold.denominator, int(entry.below)]


def profile(xi: int, sched, ell_range: Iterable[int], alpha=DEFAULT_ALPHA) -> DigitChangeProfile:
    """Per-block digit-change counts of xi with the below-threshold flag."""
    alpha = as_fraction(alpha)
    if not 0 < alpha < Fraction(1, 4):
        raise ValueError(f"alpha must lie in (0, 1/4), got {alpha}")
    result = DigitChangeProfile(xi=xi)
    for ell in ell_range:
        K_prev, K_cur = sched.endpoint(ell - 1), sched.endpoint(ell)
        lo, hi = block_change_window(K_prev, K_cur)
        count = digit_change_count(xi, lo, hi) if lo <= hi else 0
        threshold = change_threshold(alpha, K_prev, K_cur)
        result.per_block.append(BlockChange(ell=ell, count=count, threshold=threshold,
                                            below=count < threshold))
    return result


# Low-change strings
def count_low_change_strings(k: int, m: int) -> int:
    """Binary strings of length k with at most m adjacent changes: 2 * sum_{j<=m} C(k-1, j)."""
    if k < 1 or not 0 <= m:
        raise ValueError(f"need k >= 1 and m >= 0, got k={k}, m={m}")
    m = min(m, k - 1)
    return 2 * sum(math.comb(k - 1, j) for j in range(m + 1))


def enumerate_low_change_strings(k: int, m: int) -> int:
    """Brute-force count over all 2^k strings (k <= 24)."""
    if not 1 <= k <= MAX_ENUMERATION_LENGTH:
        raise ValueError(f"enumeration is limited to 1 <= k <= {MAX_ENUMERATION_LENGTH}")
    values = np.arange(1 << k, dtype=np.uint32)
    changes = (values ^ (values >> 1)) & np.uint32((1 << (k - 1)) - 1)
    as_bytes = changes.view(np.uint8).reshape(-1, 4)
    counts = _POPCOUNT_BYTE[as_bytes].sum(axis=1)
    return int(np.count_nonzero(counts <= m))


def schmidt_alpha_ok(alpha) -> bool:
    """alpha in (0, 1/4) and 2^(1/8) > (2 alpha)^alpha (1 - 2 alpha)^(1/2 - alpha)."""
    alpha = as_fraction(alpha)
    if not 0 < alpha < Fraction(1, 4):
        return False
    a = float(alpha)
    lhs = math.log(2) / 8
    rhs = a * math.log(2 * a) + (0.5 - a) * math.log(1 - 2 * a)
    return lhs > rhs


def schmidt_bound(k: int) -> int:
    """2^ceil(3k/4)."""
    return 1 << -(-3 * k // 4)


# 2-adic valuation
class TwoAdicSplit(NamedTuple):
    e: int
    two_part: int
    odd_part: int


def v2(n: int) -> TwoAdicSplit:
    """Largest e with 2^e | n, with n = 2^e * odd_part (odd_part carries the sign)."""
    if n == 0:
        raise ValueError("v2(0) is undefined")
    e = (n & -n).bit_length() - 1
    return TwoAdicSplit(e=e, two_part=1 << e, odd_part=n >> e)


def bits_little_endian(xi: int, length: int) -> np.ndarray:
    """d_0 .. d_{length-1} of xi as a uint8 array."""
    if length <= 0:
        return np.zeros(0, dtype=np.uint8)
    raw = (xi & ((1 << length) - 1)).to_bytes((length + 7) // 8, "little")
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:length]
