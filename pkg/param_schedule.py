#!/usr/bin/env python3
"""
Rajchman Lab - Parameter Schedules
The pair (K, eps) defining the measure, its blocks, the R-dependent
indices (t, T) and admissibility checks.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import mpmath

from utils import (
    ScheduleError,
    ScheduleSaturationError,
    as_fraction,
    content_hash,
    fraction_str,
)

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ("canonical", "geometric", "explicit")
DEFAULT_MAX_K = 1 << 24
# Exact comparison P^q * K^p < 1 is used when gamma = p/q has a small denominator.
EXACT_GAMMA_MAX_DENOMINATOR = 64
_OMEGA_SNAP = mpmath.mpf(2) ** -40


# Slow-growth functions
def omega_from_log(log_x: Union[int, Fraction]) -> int:
    """floor(sqrt(log_x)) for an exact rational log_x >= 0."""
    log_x = as_fraction(log_x)
    if log_x < 0:
        raise ValueError("log x must be nonnegative")
    p, q = log_x.numerator, log_x.denominator
    return math.isqrt(p * q) // q


def _to_mpf(x: Any) -> mpmath.mpf:
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    return mpmath.mpf(x)


def omega(x: Any) -> int:
    """omega(x) = floor(sqrt(ln x)) for x >= 1.

    Values of sqrt(ln x) within 2^-40 of an integer snap to it, so that
    x = e^(m^2) given at working precision reports m.
    """
    with mpmath.workdps(50):
        value = _to_mpf(x)
        if value < 1:
            raise ValueError(f"omega is defined for x >= 1, got {x}")
        root = mpmath.sqrt(mpmath.log(value))
        nearest = int(mpmath.nint(root))
        if abs(root - nearest) < _OMEGA_SNAP:
            return nearest
        return int(mpmath.floor(root))


def big_omega(x: Any) -> Any:
    """Omega(x) = x * omega(x)."""
    return x * omega(x)


@dataclass(frozen=True)
class IndexPair:
    """sqrt(R) in (K_{t-1}, K_t] and R in (K_{T-1}, K_T]."""
    t: int
    T: int
    R: int


class ParamSchedule:
    """
    Block endpoints K_0 = 0 < K_1 < ... and weights eps_l in [0, 1].

    Canonical and geometric kinds materialize K lazily up to `max_K` and use
    eps_l = 1/l. Explicit kinds are finite: digits past the last endpoint are zero.
    """

    def __init__(self, kind: str, K_base: Optional[int] = None,
                 K: Optional[Sequence[int]] = None,
                 eps: Optional[Sequence[Any]] = None,
                 max_K: int = DEFAULT_MAX_K):
        if kind not in SCHEDULE_KINDS:
            raise ScheduleError(f"Unknown schedule kind: {kind}")
        self.kind = kind
        self.max_K = int(max_K)
        self._lock = threading.Lock()
        self._saturated = False

        if kind == "explicit":
            if K is None or eps is None:
                raise ScheduleError("explicit schedules need both K and eps")
            self.K_base = None
            self._K = [int(k) for k in K]
            self._eps = [None] + [as_fraction(e) for e in eps]
            self._validate_explicit()
        else:
            if K_base is None or int(K_base) < 10:
                raise ScheduleError(f"{kind} schedules need K_base >= 10, got {K_base}")
            self.K_base = int(K_base)
            self._K = [0]
            self._eps = [None]

        self.id = content_hash(self._identity())
        logger.debug(f"Created {kind} schedule {self.id[:12]}")

    def _validate_explicit(self):
        errors = []
        if len(self._K) < 2:
            errors.append("K needs at least K_0 and K_1")
        elif self._K[0] != 0:
            errors.append(f"K_0 must be 0, got {self._K[0]}")
        for ell in range(1, len(self._K)):
            if self._K[ell] <= self._K[ell - 1]:
                errors.append(f"K not strictly increasing at l={ell}: {self._K[ell - 1]} >= {self._K[ell]}")
        if len(self._eps) != len(self._K):
            errors.append(f"expected {len(self._K) - 1} eps values, got {len(self._eps) - 1}")
        for ell, e in enumerate(self._eps[1:], start=1):
            if not 0 <= e <= 1:
                errors.append(f"eps_{ell} = {e} outside [0, 1]")
        if errors:
            raise ScheduleError("Invalid explicit schedule:\n" + "\n".join(f"- {e}" for e in errors))

    # Materialization
    @property
    def is_finite(self) -> bool:
        return self.kind == "explicit"

    @property
    def num_blocks(self) -> Optional[int]:
        """Number of blocks of a finite schedule, None for unbounded kinds."""
        return len(self._K) - 1 if self.is_finite else None

    @property
    def saturated(self) -> bool:
        return self._saturated

    def _next_endpoint(self, ell: int) -> int:
        prev = self._K[ell - 1]
        K = self.K_base
        log2_cap = self.max_K.bit_length() + 1

        def capped_power(exponent: int) -> int:
            if exponent * math.log2(K) > log2_cap:
                return self.max_K + 1
            return K ** exponent

        if self.kind == "geometric":
            return capped_power(ell)
        candidates = [capped_power(ell * omega(ell)), 10 * prev]
        if ell <= 3:
            candidates.append(capped_power(ell))
        return max(candidates)

    def _materialize(self, ell: int):
        """Ensure K_ell is available."""
        if ell < len(self._K):
            return
        if self.is_finite:
            raise ScheduleError(f"Block index {ell} beyond explicit schedule of {self.num_blocks} blocks")
        with self._lock:
            while len(self._K) <= ell:
                nxt = len(self._K)
                value = self._next_endpoint(nxt)
                if value > self.max_K:
                    self._saturated = True
                    raise ScheduleSaturationError(
                        f"K_{nxt} exceeds materialization cap {self.max_K}", cap=self.max_K)
                self._K.append(value)
                self._eps.append(Fraction(1, nxt))

    def endpoint(self, ell: int) -> int:
        """K_ell."""
        if ell < 0:
            raise ScheduleError(f"Negative block index {ell}")
        self._materialize(ell)
        return self._K[ell]

    def epsilon(self, ell: int) -> Fraction:
        """eps_ell."""
        if ell < 1:
            raise ScheduleError(f"eps is indexed from 1, got {ell}")
        self._materialize(ell)
        return self._eps[ell]

    def endpoints(self) -> List[int]:
        """Materialized endpoints so far."""
        return list(self._K)

    def first_index_reaching(self, value: int) -> int:
        """Least ell with K_ell >= value (ell >= 1)."""
        ell = 1
        while self.endpoint(ell) < value:
            ell += 1
        return ell

    def first_index_reaching_or_last(self, value: int) -> int:
        """As first_index_reaching, but finite schedules stop at their last block."""
        ell = 1
        while True:
            if self.is_finite and ell == self.num_blocks:
                return ell
            if self.endpoint(ell) >= value:
                return ell
            ell += 1

    # Blocks
    def block(self, ell: int) -> Tuple[int, int]:
        """B_ell = [K_{ell-1} + 1, K_ell]."""
        if ell < 1:
            raise ScheduleError(f"Blocks are indexed from 1, got {ell}")
        return self.endpoint(ell - 1) + 1, self.endpoint(ell)

    def shifted_block(self, ell: int) -> Tuple[int, int]:
        """Bbar_ell = [K_{ell-1} - 1, K_ell - 1]."""
        lo, hi = self.block(ell)
        return lo - 2, hi - 1

    def block_width(self, ell: int) -> int:
        lo, hi = self.block(ell)
        return hi - lo + 1

    # Serialization
    def _identity(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"kind": self.kind, "max_K": str(self.max_K)}
        if self.is_finite:
            data["K"] = [str(k) for k in self._K]
            data["eps"] = [fraction_str(e) for e in self._eps[1:]]
        else:
            data["K_base"] = str(self.K_base)
            data["eps"] = "1/l"
        return data

    def to_dict(self) -> Dict[str, Any]:
        data = self._identity()
        data["id"] = self.id
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ParamSchedule":
        kind = data.get("kind")
        max_K = int(data.get("max_K", DEFAULT_MAX_K))
        if kind == "explicit":
            sched = cls("explicit", K=[int(k) for k in data["K"]],
                        eps=[as_fraction(e) for e in data["eps"]], max_K=max_K)
        else:
            sched = cls(kind, K_base=int(data["K_base"]), max_K=max_K)
        if "id" in data and data["id"] != sched.id:
            raise ScheduleError(f"Schedule id mismatch: {data['id']} != {sched.id}")
        return sched

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        if self.is_finite:
            return f"ParamSchedule(explicit, K={self._K})"
        return f"ParamSchedule({self.kind}, K_base={self.K_base})"


def make_schedule(kind: str, params: Optional[Dict[str, Any]] = None) -> ParamSchedule:
    """Build a schedule from a kind and a parameter dict (K_base | K, eps; max_K)."""
    params = dict(params or {})
    max_K = int(params.get("max_K", DEFAULT_MAX_K))
    if kind == "explicit":
        return ParamSchedule("explicit", K=params.get("K"), eps=params.get("eps"), max_K=max_K)
    return ParamSchedule(kind, K_base=params.get("K_base"), max_K=max_K)


def indices_tT(sched: ParamSchedule, R: int) -> IndexPair:
    """Locate t and T for R using exact integer comparisons."""
    if R < 1:
        raise ScheduleError(f"R must be >= 1, got {R}")
    T = sched.first_index_reaching(R)
    t = 1
    while sched.endpoint(t) ** 2 < R:
        t += 1
    return IndexPair(t=t, T=T, R=R)


# Admissibility
@dataclass
class AdmissibilityRow:
    R: int
    t: Optional[int] = None
    T: Optional[int] = None
    K_T: Optional[int] = None
    product: Optional[Fraction] = None
    passed: bool = False
    exact: bool = True
    gap_ok: bool = False
    error: Optional[str] = None


@dataclass
class AdmissibilityReport:
    gamma: Fraction
    rows: List[AdmissibilityRow]
    eps_partial_sums: List[Fraction]
    partial_sums_increasing: bool
    growth_ok: bool
    gap_threshold: Optional[int]

    @property
    def all_passed(self) -> bool:
        return all(row.passed for row in self.rows)


def _product_below_power(product: Fraction, K_T: int, gamma: Fraction) -> Tuple[bool, bool]:
    """Decide product < K_T^-gamma. Returns (verdict, exact)."""
    if product == 0:
        return True, True
    p, q = gamma.numerator, gamma.denominator
    if q <= EXACT_GAMMA_MAX_DENOMINATOR:
        a, b = product.numerator, product.denominator
        return a ** q * K_T ** p < b ** q, True
    with mpmath.workdps(60):
        lhs = mpmath.log(product.numerator) - mpmath.log(product.denominator)
        rhs = -(mpmath.mpf(p) / q) * mpmath.log(K_T)
        return bool(lhs < rhs), False


def check_admissible(sched: ParamSchedule, gamma: Any, R_values: Iterable[int]) -> AdmissibilityReport:
    """Exact per-R check of prod_{t<l<T} eps_l < K_T^-gamma plus growth diagnostics."""
    gamma = as_fraction(gamma)
    if gamma <= 0:
        raise ScheduleError(f"gamma must be positive, got {gamma}")

    rows = []
    for R in sorted(set(int(r) for r in R_values)):
        row = AdmissibilityRow(R=R)
        try:
            pair = indices_tT(sched, R)
            product = Fraction(1)
            for ell in range(pair.t + 1, pair.T):
                product *= sched.epsilon(ell)
            K_T = sched.endpoint(pair.T)
            row.t, row.T, row.K_T, row.product = pair.t, pair.T, K_T, product
            row.passed, row.exact = _product_below_power(product, K_T, gamma)
            row.gap_ok = pair.t < pair.T - 2
        except ScheduleError as e:
            row.error = str(e)
            logger.warning(f"Admissibility at R={R} not evaluated: {e}")
        rows.append(row)

    materialized = len(sched.endpoints()) - 1
    partial, total = [], Fraction(0)
    for ell in range(1, materialized + 1):
        total += sched.epsilon(ell)
        partial.append(total)
    increasing = all(b > a for a, b in zip(partial, partial[1:]))
    growth_ok = all(sched.endpoint(ell) >= 10 * sched.endpoint(ell - 1)
                    for ell in range(2, materialized + 1))

    gap_threshold = None
    for row in reversed(rows):
        if row.error is not None or not row.gap_ok:
            break
        gap_threshold = row.R

    report = AdmissibilityReport(gamma=gamma, rows=rows, eps_partial_sums=partial,
                                 partial_sums_increasing=increasing, growth_ok=growth_ok,
                                 gap_threshold=gap_threshold)
    logger.info(f"Admissibility gamma={gamma}: {sum(r.passed for r in rows)}/{len(rows)} R values pass")
    return report


# Slow growth
@dataclass
class SlowGrowthRow:
    x: Any
    omega_x: int
    omega_Mx: int
    holds: bool
    omega_corollary: Optional[bool] = None


@dataclass
class SlowGrowthReport:
    M: Any
    tau: Any
    rows: List[SlowGrowthRow] = field(default_factory=list)
    monotone: bool = True
    holds_from: Any = None


def slow_growth_check(M: Any, tau: Any, xs: Iterable[Any],
                      N: Optional[int] = None, kappa: Any = None) -> SlowGrowthReport:
    """Scan omega(x) <= omega(Mx) <= (1+tau) omega(x) over a grid of x >= 1.

    With N and kappa given, also checks Omega(N(1-kappa)x) < N Omega(x),
    which for x > 0 reads (1-kappa) omega(N(1-kappa)x) < omega(x).
    """
    if M <= 1 or tau <= 0:
        raise ValueError("slow growth needs M > 1 and tau > 0")
    report = SlowGrowthReport(M=M, tau=tau)
    for x in sorted(xs):
        w = omega(x)
        wM = omega(_to_mpf(M) * _to_mpf(x))
        holds = w <= wM <= (1 + tau) * w
        row = SlowGrowthRow(x=x, omega_x=w, omega_Mx=wM, holds=holds)
        if N is not None and kappa is not None:
            scaled = mpmath.mpf(N) * (1 - _to_mpf(kappa)) * _to_mpf(x)
            row.omega_corollary = bool(scaled >= 1 and (1 - _to_mpf(kappa)) * omega(scaled) < w)
        report.rows.append(row)

    report.monotone = all(a.omega_x <= b.omega_x for a, b in zip(report.rows, report.rows[1:]))
    for row in reversed(report.rows):
        ok = row.holds and (row.omega_corollary is not False)
        if not ok:
            break
        report.holds_from = row.x
    return report


def k_ratio_trace(sched: ParamSchedule, L: int) -> List[Tuple[int, Fraction]]:
    """K_l / K_{l+1} for 1 <= l < L, stopping early at saturation or a finite end."""
    trace = []
    for ell in range(1, L):
        try:
            trace.append((ell, Fraction(sched.endpoint(ell), sched.endpoint(ell + 1))))
        except ScheduleError:
            break
    return trace


def ratio_tends_to_zero(trace: Sequence[Tuple[int, Fraction]], tail: int = 3) -> bool:
    """Non-increasing ratios over the last `tail` entries."""
    values = [ratio for _, ratio in trace[-tail:]]
    return len(values) >= 2 and all(b <= a for a, b in zip(values, values[1:]))
