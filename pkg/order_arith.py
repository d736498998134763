#!/usr/bin/env python3
"""
Rajchman Lab - Order Arithmetic
Modular powers, multiplicative order modulo 2^k and the residue-orbit
counts behind the digit lemmas.
"""

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Tuple

from dyadic_digits import v2
from utils import BudgetExceededError, VerificationError

try:
    import gmpy2
except ImportError:  # pragma: no cover - optional accelerator
    gmpy2 = None

logger = logging.getLogger(__name__)

MAX_SCAN_K = 40
GMPY_THRESHOLD_BITS = 256


def pow_mod(a: int, e: int, m: int) -> int:
    """a^e mod m by left-to-right square-and-multiply."""
    if m < 1 or e < 0:
        raise ValueError("pow_mod needs m >= 1 and e >= 0")
    if m == 1:
        return 0
    if gmpy2 is not None and m.bit_length() > GMPY_THRESHOLD_BITS:
        return int(gmpy2.powmod(a, e, m))
    base = a % m
    result = 1
    for i in range(e.bit_length() - 1, -1, -1):
        result = result * result % m
        if (e >> i) & 1:
            result = result * base % m
    return result


@dataclass(frozen=True)
class OrderRecord:
    r: int
    k: int
    ord: int
    ratio: Fraction


def _check_base(r: int):
    if r < 3 or r % 2 == 0:
        raise ValueError(f"r must be odd and >= 3, got {r}")


class OrderTable:
    """Memo table of OrderRecord keyed by (r, k); safe for concurrent use."""

    def __init__(self):
        self._records: Dict[Tuple[int, int], OrderRecord] = {}
        self._lock = threading.Lock()

    def get(self, r: int, k: int) -> OrderRecord:
        key = (r, k)
        record = self._records.get(key)
        if record is None:
            record = _compute_order(r, k)
            with self._lock:
                self._records.setdefault(key, record)
        return record

    def __len__(self) -> int:
        return len(self._records)


def _compute_order(r: int, k: int) -> OrderRecord:
    modulus = 1 << k
    if k == 1:
        return OrderRecord(r=r, k=k, ord=1, ratio=Fraction(1, 2))
    # the order is a power of two dividing 2^(k-2) for k >= 3 (2^(k-1) covers k = 2)
    hi = k - 2 if k >= 3 else k - 1
    lo = 0
    while lo < hi:
        mid = (lo + hi) // 2
        if pow_mod(r, 1 << mid, modulus) == 1:
            hi = mid
        else:
            lo = mid + 1
    order = 1 << lo
    # minimality: 2 is the only prime dividing the order
    if pow_mod(r, order, modulus) != 1 or (order > 1 and pow_mod(r, order // 2, modulus) == 1):
        raise VerificationError(f"order search failed for r={r}, k={k}")
    return OrderRecord(r=r, k=k, ord=order, ratio=Fraction(order, modulus))


_default_table = OrderTable()


def ord_pow2(r: int, k: int) -> OrderRecord:
    """Multiplicative order of r modulo 2^k."""
    _check_base(r)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return _default_table.get(r, k)


@dataclass
class OrderRatioReport:
    r: int
    records: List[OrderRecord] = field(default_factory=list)

    @property
    def min_ratio(self) -> Fraction:
        return min(rec.ratio for rec in self.records)

    def csv_rows(self):
        for rec in self.records:
            yield [rec.r, rec.k, rec.ord, rec.ratio.numerator, rec.ratio.denominator]


def order_ratio_scan(r: int, k_max: int) -> OrderRatioReport:
    """ord_{2^k}(r) / 2^k for 1 <= k <= k_max with the minimum as empirical c0(r)."""
    if k_max > MAX_SCAN_K:
        raise BudgetExceededError(f"k_max={k_max} exceeds desk cap {MAX_SCAN_K}")
    report = OrderRatioReport(r=r, records=[ord_pow2(r, k) for k in range(1, k_max + 1)])
    logger.debug(f"Order ratios for r={r} up to k={k_max}: min {report.min_ratio}")
    return report


def _check_rho(rho: int):
    if abs(rho) <= 1:
        raise ValueError(f"|rho| must be >= 2, got {rho}")


def residue_orbit_counts(rho: int, r: int, k: int) -> Counter:
    """Counts #{m in [0, 2^k) : rho r^m = sigma mod 2^k} for every hit sigma.

    One period of the orbit is walked; each value found there repeats
    2^k / ord_{2^k}(r) times over the full m-range.
    """
    _check_rho(rho)
    _check_base(r)
    modulus = 1 << k
    period = ord_pow2(r, k).ord
    value = rho % modulus
    step = r % modulus
    orbit = Counter()
    for _ in range(period):
        orbit[value] += 1
        value = value * step % modulus
    repeat = modulus // period
    return Counter({sigma: count * repeat for sigma, count in orbit.items()})


def residue_hit_count(rho: int, r: int, k: int, sigma: int) -> int:
    """#{m in [0, 2^k) : rho r^m = sigma mod 2^k}."""
    if not 0 <= sigma < (1 << k):
        raise ValueError(f"sigma must lie in [0, 2^{k})")
    return residue_orbit_counts(rho, r, k).get(sigma, 0)


def expected_hit_count(rho: int, r: int, k: int) -> int:
    """Nonzero hit count 2^k / ord_{2^{k-e}}(r) with e = v2(rho); 2^k when e >= k."""
    e = v2(rho).e
    if e >= k:
        return 1 << k
    return (1 << k) // ord_pow2(r, k - e).ord
