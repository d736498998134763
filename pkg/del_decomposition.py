#!/usr/bin/env python3
"""
Rajchman Lab - DEL Sum Decomposition
The double sums I(h; r, N) = sum_{u,v <= N} |mu_hat(h r^u (r^v - 1))|, their
split into I1 + I21 + I22 along V1/V2 and U1/U2, and the J0/J1 surrogates.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from dyadic_digits import (
    DEFAULT_ALPHA,
    block_change_window,
    change_threshold,
    count_low_change_strings,
    digit_change_count,
)
from fourier_cache import FourierCache
from fourier_grid import mu_hat_abs_grid
from measure import E_block, MeasureSpec
from order_arith import expected_hit_count, order_ratio_scan, ord_pow2, pow_mod
from param_schedule import indices_tT
from utils import BudgetExceededError, VerificationError, as_fraction

logger = logging.getLogger(__name__)

DEL_MAX_N = 1 << 12
V1_CROSS_CHECK_MAX = 1 << 12
C0_SCAN_K = 20
WSTAR_BRUTE_MAX_R = 12
# c = 5/4 in the U1(v, l) cardinality estimate
U1_DECAY_RATE = 1.25
DEFAULT_GAMMA = 2


def N_to_R(N: int) -> int:
    """R with 2^(R-1) < N <= 2^R; R = 1 for N = 1."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return 1 if N == 1 else (N - 1).bit_length()


def _check_r(r: int):
    if r < 3 or r % 2 == 0:
        raise ValueError(f"r must be odd and >= 3, got {r}")


# V1
@dataclass
class V1Set:
    r: int
    N: int
    R: int
    R0: int
    order: int
    members: List[int]
    c0_hat: Fraction
    bound: float

    @property
    def C0(self) -> Fraction:
        return 2 / self.c0_hat


def set_V1(r: int, N: int) -> V1Set:
    """{v <= N : 2^R0 | r^v - 1} as the multiples of ord_{2^R0}(r), cross-checked by divisibility."""
    _check_r(r)
    R = N_to_R(N)
    R0 = math.isqrt(R)
    order = ord_pow2(r, R0).ord
    members = list(range(order, N + 1, order))

    modulus = 1 << R0
    member_set = set(members)
    for v in range(1, min(N, V1_CROSS_CHECK_MAX) + 1):
        if (pow_mod(r, v, modulus) == 1) != (v in member_set):
            raise VerificationError(f"V1 mismatch at v={v} for r={r}, N={N}")

    c0_hat = order_ratio_scan(r, C0_SCAN_K).min_ratio
    bound = float(2 / c0_hat) * N * 2.0 ** -math.sqrt(R)
    return V1Set(r=r, N=N, R=R, R0=R0, order=order, members=members, c0_hat=c0_hat, bound=bound)


# U1
def _xi_sequence(h: int, r: int, v: int, N: int, R: int) -> List[int]:
    """xi_u = h r^u (r^v - 1) mod 2^R for u = 1..N."""
    modulus = 1 << R
    xi = h * r * (r ** v - 1) % modulus
    seq = []
    for _ in range(N):
        seq.append(xi)
        xi = xi * r % modulus
    return seq


def _below_threshold(xi: int, K_prev: int, K_cur: int, alpha: Fraction) -> bool:
    lo, hi = block_change_window(K_prev, K_cur)
    count = digit_change_count(xi, lo, hi) if lo <= hi else 0
    return count < change_threshold(alpha, K_prev, K_cur)


def set_U1(v: int, ell: int, h: int, r: int, N: int, spec: MeasureSpec,
           alpha=DEFAULT_ALPHA) -> List[int]:
    """U1(v, l): u in [1, N] whose xi has fewer than alpha #Bbar_l digit changes on Bbar_l."""
    alpha = as_fraction(alpha)
    R = N_to_R(N)
    sched = spec.sched
    K_prev, K_cur = sched.endpoint(ell - 1), sched.endpoint(ell)
    return [u for u, xi in enumerate(_xi_sequence(h, r, v, N, R), start=1)
            if _below_threshold(xi, K_prev, K_cur, alpha)]


def set_U1_union(v: int, h: int, r: int, N: int, spec: MeasureSpec, alpha=DEFAULT_ALPHA) -> List[int]:
    """U1(v): the union of U1(v, l) over t < l < T."""
    pair = indices_tT(spec.sched, N_to_R(N))
    members = set()
    for ell in range(pair.t + 1, pair.T):
        members.update(set_U1(v, ell, h, r, N, spec, alpha))
    return sorted(members)


# Frequency table
def pair_frequencies(h: int, r: int, N: int) -> List[int]:
    """eta = h r^u (r^v - 1) in v-major order (v = 1..N, then u = 1..N)."""
    powers = [r ** u for u in range(1, N + 1)]
    return [h * ru * (rv - 1) for rv in powers for ru in powers]


def abs_table(h: int, r: int, N: int, spec: MeasureSpec, tol: float, backend: str = "auto",
              threads: int = 1, cache: Optional[FourierCache] = None) -> Tuple[List[List[float]], float]:
    """A[v-1][u-1] = |mu_hat(h r^u (r^v - 1))| and the largest error bound."""
    values = mu_hat_abs_grid(spec, pair_frequencies(h, r, N), tol, backend=backend,
                             threads=threads, cache=cache)
    table = [[values[(v - 1) * N + (u - 1)].abs for u in range(1, N + 1)] for v in range(1, N + 1)]
    return table, max((val.err for val in values), default=0.0)


# Decomposition
@dataclass
class WStarRow:
    ell: int
    width: int
    count: int
    log2_bound: Fraction
    below_bound: bool
    brute_checked: bool


@dataclass
class DelDecomposition:
    h: int
    r: int
    N: int
    R: int
    R0: int
    t: int
    T: int
    tol: float
    V1: List[int]
    V2: List[int]
    u1_sizes: Dict[int, int]
    I: Fraction
    I1: Fraction
    I21: Fraction
    I22: Fraction
    gamma_size: int
    J0: Fraction
    J1: float
    gamma: Fraction
    max_err: float
    v1_bound: float
    e_block_violations: int = 0
    max_u1_vl: int = 0
    max_u1_xi: int = 0
    u1_xi_ok: bool = True
    wstar: List[WStarRow] = field(default_factory=list)

    @property
    def identity_ok(self) -> bool:
        return self.I == self.I1 + self.I21 + self.I22

    @property
    def aggregate_err(self) -> float:
        return self.N * self.N * self.tol

    @property
    def j0_bound(self) -> float:
        """N^2 R^-gamma."""
        return self.N * self.N * float(self.R) ** -float(self.gamma)

    @property
    def i22_ok(self) -> bool:
        return float(self.I22) <= float(self.J0) + self.J1 + self.gamma_size * self.tol

    def fitted_constants(self) -> Dict[str, float]:
        """Each sum divided by its N-shape with unit constants."""
        N2 = float(self.N * self.N)
        root_R = math.sqrt(self.R)
        shape_I1 = N2 * float(self.N) ** (-1 / math.sqrt(math.log2(self.N))) if self.N > 1 else N2
        return {
            "I1": float(self.I1) / shape_I1,
            "I21": float(self.I21) / (N2 * 2.0 ** -root_R),
            "J1": self.J1 / (N2 * 2.0 ** -root_R),
            "U1_vl": self.max_u1_vl / (self.N * 2.0 ** (-U1_DECAY_RATE * root_R)),
        }

    def csv_row(self) -> List[str]:
        fits = self.fitted_constants()
        return [str(self.N), str(self.R), repr(float(self.I)), repr(float(self.I1)),
                repr(float(self.I21)), repr(float(self.I22)), repr(float(self.J0)), repr(self.J1),
                repr(float(self.j0_bound)), repr(self.aggregate_err), repr(fits["I1"]),
                repr(fits["I21"]), repr(fits["J1"]),
                str(int(self.identity_ok)), str(int(self.i22_ok))]


DEL_CSV_HEADER = ["N", "R", "I", "I1", "I21", "I22", "J0", "J1", "J0_bound", "aggregate_err",
                  "C_I1", "C_I21", "C_J1", "identity_ok", "i22_ok"]


def _exact_sum(values) -> Fraction:
    total = Fraction(0)
    for value in values:
        total += Fraction(value)
    return total


def _wstar_rows(spec: MeasureSpec, R: int, t: int, T: int, alpha: Fraction) -> List[WStarRow]:
    """#W*(l) = 2^(R - #Bbar) * #(low-change strings of length #Bbar) against 2^(R - (K_l - K_{l-1})/4)."""
    sched = spec.sched
    rows = []
    for ell in range(t + 1, T):
        K_prev, K_cur = sched.endpoint(ell - 1), sched.endpoint(ell)
        width = K_cur - K_prev + 1
        m = math.ceil(alpha * width) - 1
        count = (1 << (R - width)) * count_low_change_strings(width, m)
        brute = R <= WSTAR_BRUTE_MAX_R
        if brute:
            direct = sum(1 for xi in range(1 << R) if _below_threshold(xi, K_prev, K_cur, alpha))
            if direct != count:
                raise VerificationError(f"#W*({ell}) closed form {count} != scan {direct}")
        log2_bound = R - Fraction(K_cur - K_prev, 4)
        # count < 2^(R - d/4)  <=>  count^4 < 2^(4R - d)
        below = count ** 4 < 1 << (4 * R - (K_cur - K_prev))
        rows.append(WStarRow(ell=ell, width=width, count=count, log2_bound=log2_bound,
                             below_bound=below, brute_checked=brute))
    return rows


def _inner_blocks(spec: MeasureSpec, t: int, T: int) -> List[Tuple[int, int, int]]:
    """(l, K_{l-1}, K_l) for t < l < T."""
    sched = spec.sched
    return [(ell, sched.endpoint(ell - 1), sched.endpoint(ell)) for ell in range(t + 1, T)]


def _e_caps(blocks, alpha: Fraction, tol: float) -> Dict[int, float]:
    """(sqrt(2)/2)^(alpha (K_l - K_{l-1})) + tol per block."""
    return {ell: (math.sqrt(2) / 2) ** float(alpha * (K_cur - K_prev)) + tol for ell, K_prev, K_cur in blocks}


def _is_u1(xi: int, blocks, alpha: Fraction) -> bool:
    return any(_below_threshold(xi, K_prev, K_cur, alpha) for _, K_prev, K_cur in blocks)


def _block_magnitudes(spec: MeasureSpec, blocks, xi: int) -> List[float]:
    return [E_block(spec, ell, xi).abs for ell, _, _ in blocks]


@dataclass
class EBlockCheck:
    N: int
    checked: int = 0
    violations: int = 0
    max_ratio: float = 0.0


def e_block_smallness(h: int, r: int, N: int, spec: MeasureSpec, alpha=DEFAULT_ALPHA,
                      tol: float = 0.0) -> EBlockCheck:
    """|E_l(xi)| <= (sqrt(2)/2)^(alpha (K_l - K_{l-1})) + tol over (u, v) in Gamma, t < l < T."""
    _check_r(r)
    alpha = as_fraction(alpha)
    R = N_to_R(N)
    pair = indices_tT(spec.sched, R)
    blocks = _inner_blocks(spec, pair.t, pair.T)
    caps = _e_caps(blocks, alpha, tol)
    v1_members = set(set_V1(r, N).members)
    check = EBlockCheck(N=N)
    for v in range(1, N + 1):
        if v in v1_members:
            continue
        for xi in _xi_sequence(h, r, v, N, R):
            if _is_u1(xi, blocks, alpha):
                continue
            for (ell, _, _), magnitude in zip(blocks, _block_magnitudes(spec, blocks, xi)):
                check.checked += 1
                check.max_ratio = max(check.max_ratio, magnitude / caps[ell])
                if magnitude > caps[ell]:
                    check.violations += 1
    return check


def del_decompose(h: int, r: int, N: int, spec: MeasureSpec, tol: float, alpha=DEFAULT_ALPHA,
                  gamma=DEFAULT_GAMMA, backend: str = "auto", threads: int = 1,
                  cache: Optional[FourierCache] = None,
                  table: Optional[List[List[float]]] = None, table_err: float = 0.0) -> DelDecomposition:
    """Evaluate I(h; r, N) and regroup it as I1 + I21 + I22 with the J0/J1 diagnostics."""
    _check_r(r)
    if h == 0:
        raise ValueError("h must be nonzero")
    if N > DEL_MAX_N:
        raise BudgetExceededError(f"N={N} exceeds the desk cap {DEL_MAX_N}")
    alpha, gamma = as_fraction(alpha), as_fraction(gamma)
    sched = spec.sched
    R = N_to_R(N)
    pair = indices_tT(sched, R)
    t, T = pair.t, pair.T
    v1 = set_V1(r, N)
    v1_members = set(v1.members)
    V2 = [v for v in range(1, N + 1) if v not in v1_members]

    if table is None:
        table, max_err = abs_table(h, r, N, spec, tol, backend, threads, cache)
    else:
        table, max_err = [row[:N] for row in table[:N]], table_err

    blocks = _inner_blocks(spec, t, T)
    eps_product = Fraction(1)
    for ell, _, _ in blocks:
        eps_product *= sched.epsilon(ell)

    u1_sizes: Dict[int, int] = {}
    i21_terms, i22_terms = [], []
    gamma_size = 0
    j1_terms = []
    e_violations = 0
    max_u1_vl = 0
    max_u1_xi = 0
    u1_xi_ok = True
    e_caps = _e_caps(blocks, alpha, tol)

    for v in V2:
        xis = _xi_sequence(h, r, v, N, R)
        below = {ell: [_below_threshold(xi, K_prev, K_cur, alpha) for xi in xis]
                 for ell, K_prev, K_cur in blocks}
        rho = h * (r ** v - 1)
        hit_cap = expected_hit_count(rho, r, R)
        for ell, flags in below.items():
            members = [xi for xi, flag in zip(xis, flags) if flag]
            max_u1_vl = max(max_u1_vl, len(members))
            if members:
                multiplicity = max(Counter(members).values())
                max_u1_xi = max(max_u1_xi, multiplicity)
                u1_xi_ok = u1_xi_ok and multiplicity <= hit_cap
        in_u1 = [any(flags[u] for flags in below.values()) for u in range(N)]
        u1_sizes[v] = sum(in_u1)
        row = table[v - 1]
        for u in range(N):
            if in_u1[u]:
                i21_terms.append(row[u])
                continue
            i22_terms.append(row[u])
            gamma_size += 1
            product = 1.0
            for (ell, _, _), magnitude in zip(blocks, _block_magnitudes(spec, blocks, xis[u])):
                if magnitude > e_caps[ell]:
                    e_violations += 1
                product *= 1.0 + magnitude
            j1_terms.append(product - 1.0)

    I1 = _exact_sum(table[v - 1][u] for v in v1.members for u in range(N))
    I21 = _exact_sum(i21_terms)
    I22 = _exact_sum(i22_terms)
    I = _exact_sum(value for row in table for value in row)

    result = DelDecomposition(
        h=h, r=r, N=N, R=R, R0=v1.R0, t=t, T=T, tol=tol, V1=v1.members, V2=V2, u1_sizes=u1_sizes,
        I=I, I1=I1, I21=I21, I22=I22, gamma_size=gamma_size, J0=gamma_size * eps_product,
        J1=math.fsum(j1_terms), gamma=gamma, max_err=max_err, v1_bound=v1.bound,
        e_block_violations=e_violations, max_u1_vl=max_u1_vl, max_u1_xi=max_u1_xi,
        u1_xi_ok=u1_xi_ok, wstar=_wstar_rows(spec, R, t, T, alpha),
    )
    logger.info(f"DEL N={N} (R={R}, t={t}, T={T}): I={float(I):.6g}, I1={float(I1):.6g}, "
                f"I21={float(I21):.6g}, I22={float(I22):.6g}, #Gamma={gamma_size}")
    if not result.identity_ok:
        raise VerificationError(f"I != I1 + I21 + I22 at N={N}")
    return result


# Series
@dataclass
class DelSeriesRow:
    N: int
    I: Fraction
    partial_sum: Fraction
    increment: Fraction


@dataclass
class DelSeries:
    h: int
    r: int
    N_max: int
    tol: float
    rows: List[DelSeriesRow] = field(default_factory=list)
    monotone: bool = True

    def increments_decreasing(self, last: int = 3) -> bool:
        tail = [row.increment for row in self.rows[-last:]]
        return len(tail) >= 2 and all(b < a for a, b in zip(tail, tail[1:]))

    def csv_rows(self):
        for row in self.rows:
            yield [row.N, repr(float(row.I)), repr(float(row.partial_sum)), repr(float(row.increment))]


def _prefix_I(table: List[List[float]]) -> List[Fraction]:
    """I(N) for N = 1..len(table) by growing the square one row and column at a time."""
    size = len(table)
    totals = []
    running = Fraction(0)
    for n in range(size):
        # row v = n over u <= n, then column u = n over v < n
        running += _exact_sum(table[n][u] for u in range(n + 1))
        running += _exact_sum(table[v][n] for v in range(n))
        totals.append(running)
    return totals


def del_series(h: int, r: int, N_max: int, spec: MeasureSpec, tol: float, backend: str = "auto",
               threads: int = 1, cache: Optional[FourierCache] = None,
               table: Optional[List[List[float]]] = None) -> DelSeries:
    """Partial sums of sum_N N^-3 I(h; r, N) at N = 1, 2, 4, ..., N_max with dyadic increments."""
    _check_r(r)
    if N_max > DEL_MAX_N:
        raise BudgetExceededError(f"N_max={N_max} exceeds the desk cap {DEL_MAX_N}")
    cap = N_max
    if table is None:
        table, _ = abs_table(h, r, cap, spec, tol, backend, threads, cache)
    totals = _prefix_I(table)

    series = DelSeries(h=h, r=r, N_max=cap, tol=tol)
    series.monotone = all(b >= a for a, b in zip(totals, totals[1:]))
    checkpoints = [1 << j for j in range(cap.bit_length()) if 1 << j <= cap]
    if checkpoints[-1] != cap:
        checkpoints.append(cap)

    partial = Fraction(0)
    previous = Fraction(0)
    N = 0
    for point in checkpoints:
        while N < point:
            N += 1
            partial += totals[N - 1] / N ** 3
        series.rows.append(DelSeriesRow(N=point, I=totals[point - 1], partial_sum=partial,
                                        increment=partial - previous))
        previous = partial

    return series
