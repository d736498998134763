#!/usr/bin/env python3
"""
Rajchman Lab - The Measure mu[K, eps]
Exact cylinder and interval masses, seeded digit sampling, and the
error-bounded Fourier coefficient evaluator with its Monte Carlo oracle.
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from param_schedule import ParamSchedule
from utils import (
    ScheduleSaturationError,
    pow2_fraction_upper,
)

logger = logging.getLogger(__name__)

MC_EXTRA_DEPTH = 40
MC_MAX_DEPTH = 64
MIN_WORKING_PRECISION = 64
# float rounding slack folded into Monte Carlo radii
MC_ROUNDING_SLACK = 1e-12


@dataclass(frozen=True)
class MeasureSpec:
    """mu is fully determined by its schedule."""
    sched: ParamSchedule

    @property
    def id(self) -> str:
        return self.sched.id


# Masses
def _block_prefix_mass(eps: Fraction, length: int, all_zero: bool) -> Fraction:
    """P(first `length` digits of a block equal a given string)."""
    share = (1 - eps) / (1 << length)
    return eps + share if all_zero else share


def _blocks_covering(sched: ParamSchedule, n: int):
    """Yield (ell, K_{ell-1}, K_ell) for blocks meeting digit positions 1..n."""
    ell = 1
    while True:
        if sched.is_finite and ell > sched.num_blocks:
            return
        K_prev = sched.endpoint(ell - 1)
        if K_prev >= n:
            return
        yield ell, K_prev, sched.endpoint(ell)
        ell += 1


def cylinder_mass(spec: MeasureSpec, prefix: Sequence[int]) -> Fraction:
    """mu{x : d_k(x) = a_k for k <= n} as an exact rational."""
    sched = spec.sched
    if any(bit not in (0, 1) for bit in prefix):
        raise ValueError("prefix bits must be 0 or 1")
    n = len(prefix)
    mass = Fraction(1)
    covered = 0
    for ell, K_prev, K_cur in _blocks_covering(sched, n):
        segment = prefix[K_prev:min(K_cur, n)]
        mass *= _block_prefix_mass(sched.epsilon(ell), len(segment), not any(segment))
        covered = min(K_cur, n)
    if covered < n and any(prefix[covered:]):
        # digits past a finite schedule are zero
        return Fraction(0)
    return mass


def interval_mass(spec: MeasureSpec, ell: int, index: Sequence[int]) -> Fraction:
    """m_i for i = (i_1, ..., i_ell), i_j in [0, 2^(K_j - K_{j-1}))."""
    sched = spec.sched
    if len(index) != ell:
        raise ValueError(f"index vector must have length {ell}, got {len(index)}")
    mass = Fraction(1)
    for j, i_j in enumerate(index, start=1):
        width = sched.block_width(j)
        if not 0 <= i_j < (1 << width):
            raise ValueError(f"i_{j} = {i_j} outside [0, 2^{width})")
        mass *= _block_prefix_mass(sched.epsilon(j), width, i_j == 0)
    return mass


def interval_prefix(spec: MeasureSpec, index: Sequence[int]) -> List[int]:
    """Dyadic prefix of the interval I_i: each i_j written in K_j - K_{j-1} bits, MSB first."""
    bits: List[int] = []
    for j, i_j in enumerate(index, start=1):
        width = spec.sched.block_width(j)
        bits.extend((i_j >> (width - 1 - s)) & 1 for s in range(width))
    return bits


def zero_block_probability(spec: MeasureSpec, ell: int) -> Fraction:
    """mu(A_ell) = P(X_ell = 0) = eps_ell + (1 - eps_ell) 2^(K_{ell-1} - K_ell)."""
    return _block_prefix_mass(spec.sched.epsilon(ell), spec.sched.block_width(ell), True)


def zero_block_partial_sums(spec: MeasureSpec, L: int) -> List[Fraction]:
    """Partial sums of mu(A_ell) for ell <= L."""
    sums, total = [], Fraction(0)
    for ell in range(1, L + 1):
        total += zero_block_probability(spec, ell)
        sums.append(total)
    return sums


# Sampling
def block_bit_generator(seed: int, ell: int, *extra: int) -> np.random.PCG64:
    """Per-block substream derived from (seed, ell)."""
    return np.random.PCG64(np.random.SeedSequence([int(seed), int(ell), *extra]))


def draw_below(bitgen: np.random.PCG64, q: int) -> int:
    """Uniform integer in [0, q) by rejection on raw 64-bit words."""
    nbits = q.bit_length()
    words = -(-nbits // 64)
    mask = (1 << nbits) - 1
    while True:
        raw = 0
        for word in bitgen.random_raw(words):
            raw = (raw << 64) | int(word)
        value = raw & mask
        if value < q:
            return value


def _draw_bits(bitgen: np.random.PCG64, count: int) -> np.ndarray:
    """`count` fair bits; the first bits do not depend on `count`."""
    words = bitgen.random_raw(-(-count // 64)).astype("<u8")
    return np.unpackbits(words.view(np.uint8), bitorder="little")[:count]


def _zero_branch(bitgen: np.random.PCG64, eps: Fraction) -> bool:
    if eps == 0:
        return False
    if eps == 1:
        return True
    return draw_below(bitgen, eps.denominator) < eps.numerator


@dataclass
class SampleStream:
    """Digits d_1 .. d_depth of one draw from mu (digits[k-1] = d_k)."""
    seed: int
    digits: np.ndarray
    forced_zero_blocks: FrozenSet[int] = frozenset()

    @property
    def depth(self) -> int:
        return int(self.digits.size)

    def numerator(self) -> int:
        """X with x = X / 2^depth."""
        if self.depth == 0:
            return 0
        packed = np.packbits(self.digits, bitorder="big").tobytes()
        return int.from_bytes(packed, "big") >> (8 * len(packed) - self.depth)


def sample(spec: MeasureSpec, seed: int, depth: int,
           forced_zero_blocks: Iterable[int] = ()) -> SampleStream:
    """Blockwise two-stage draw: the zero block with probability eps_ell, else fair bits."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    sched = spec.sched
    forced = frozenset(int(ell) for ell in forced_zero_blocks)
    digits = np.zeros(depth, dtype=np.uint8)
    for ell, K_prev, K_cur in _blocks_covering(sched, depth):
        if ell in forced:
            continue
        bitgen = block_bit_generator(seed, ell)
        if _zero_branch(bitgen, sched.epsilon(ell)):
            continue
        stop = min(K_cur, depth)
        digits[K_prev:stop] = _draw_bits(bitgen, stop - K_prev)
    return SampleStream(seed=int(seed), digits=digits, forced_zero_blocks=forced)


@dataclass
class SampleBatch:
    """n independent draws truncated to `depth` <= 64 bits, stored as X in [0, 2^depth)."""
    seed: int
    depth: int
    values: np.ndarray

    @property
    def size(self) -> int:
        return int(self.values.size)

    def prefix_values(self, length: int) -> np.ndarray:
        """Integer value of d_1 .. d_length for every draw."""
        if not 0 < length <= self.depth:
            raise ValueError(f"prefix length must lie in (0, {self.depth}]")
        return self.values >> np.uint64(self.depth - length)

    def digit_range_is_zero(self, lo: int, hi: int) -> np.ndarray:
        """Whether d_lo .. d_hi are all zero, per draw (1 <= lo <= hi <= depth)."""
        width = hi - lo + 1
        window = self.values >> np.uint64(self.depth - hi)
        if width < 64:
            window = window & np.uint64((1 << width) - 1)
        return window == 0


def sample_batch(spec: MeasureSpec, seed: int, n: int, depth: int,
                 forced_zero_blocks: Iterable[int] = ()) -> SampleBatch:
    """Vectorised sampling of n draws; substreams are derived from (seed, ell, n)."""
    if not 0 < depth <= MC_MAX_DEPTH:
        raise ScheduleSaturationError(f"batch depth {depth} outside (0, {MC_MAX_DEPTH}]", cap=MC_MAX_DEPTH)
    sched = spec.sched
    forced = {int(ell) for ell in forced_zero_blocks}
    values = np.zeros(n, dtype=np.uint64)
    for ell, K_prev, K_cur in _blocks_covering(sched, depth):
        if ell in forced:
            continue
        eps = sched.epsilon(ell)
        if eps == 1:
            continue
        rng = np.random.Generator(block_bit_generator(seed, ell, n))
        if eps == 0:
            zero = np.zeros(n, dtype=bool)
        elif eps.denominator < (1 << 62):
            zero = rng.integers(0, eps.denominator, size=n) < eps.numerator
        else:
            zero = rng.random(n) < float(eps)
        stop = min(K_cur, depth)
        width = stop - K_prev
        if width == 64:
            bits = rng.bit_generator.random_raw(n)
        else:
            bits = rng.integers(0, 1 << width, size=n, dtype=np.uint64)
        bits[zero] = 0
        values |= bits << np.uint64(depth - stop)
    return SampleBatch(seed=int(seed), depth=depth, values=values)


def empirical_cylinder_table(batch: SampleBatch, length: int) -> Dict[Tuple[int, ...], int]:
    """Counts of every length-bit prefix across the batch."""
    counts = np.bincount(batch.prefix_values(length).astype(np.int64), minlength=1 << length)
    table = {}
    for value, count in enumerate(counts):
        prefix = tuple((value >> (length - 1 - s)) & 1 for s in range(length))
        table[prefix] = int(count)
    return table


# Fourier coefficients
@dataclass
class BlockValue:
    """E_ell(eta) with a rounding bound."""
    ell: int
    re: mpmath.mpf
    im: mpmath.mpf
    magnitude: mpmath.mpf
    err: float
    factors: int
    exact_zero: bool = False

    @property
    def abs(self) -> float:
        return abs(float(self.magnitude))


def _block_mp(xi: int, lo: int, hi: int, prec: int, ell: int) -> BlockValue:
    """prod_{k=lo}^{hi} cos(pi theta_k) e(theta_k / 2) with theta_k = {xi / 2^k}, at `prec` bits."""
    with mpmath.workprec(prec):
        magnitude = mpmath.mpf(1)
        phase_num = 0
        factors = 0
        exact_zero = False
        for k in range(lo, hi + 1):
            low = xi & ((1 << k) - 1)
            if low == 0:
                continue
            phase_num += low << (hi - k)
            if low == 1 << (k - 1):
                exact_zero = True
                continue
            factors += 1
            magnitude *= mpmath.cospi(mpmath.ldexp(mpmath.mpf(low), -k))
        if exact_zero:
            return BlockValue(ell, mpmath.mpf(0), mpmath.mpf(0), mpmath.mpf(0), 0.0, factors, True)
        # e(sum theta_k / 2) = e(phase_num / 2^(hi+1))
        angle = mpmath.ldexp(mpmath.mpf(phase_num % (1 << (hi + 1))), -hi)
        re = magnitude * mpmath.cospi(angle)
        im = magnitude * mpmath.sinpi(angle)
        err = math.ldexp(8 * factors + 16, -prec)
        return BlockValue(ell, +re, +im, +magnitude, err, factors)


def working_precision(tol: float, factors: int, blocks: int) -> int:
    """max(64, bits so that accumulated rounding stays below tol / 2)."""
    budget = 16 * (factors + 2 * blocks) + 16
    return max(MIN_WORKING_PRECISION, math.ceil(math.log2(budget / tol)) + 2)


def E_block(spec: MeasureSpec, ell: int, eta: int, precision: Optional[int] = None) -> BlockValue:
    """E_ell(eta) = prod_{k in B_ell} 1/2 (1 + e(eta 2^-k)), using E_ell(eta) = E_ell(eta mod 2^K_ell)."""
    lo, hi = spec.sched.block(ell)
    prec = precision or max(MIN_WORKING_PRECISION, hi.bit_length() + 64)
    xi = eta % (1 << hi)
    if xi == 0:
        return BlockValue(ell, mpmath.mpf(1), mpmath.mpf(0), mpmath.mpf(1), 0.0, 0)
    return _block_mp(xi, lo, hi, prec, ell)


@dataclass
class FourierValue:
    """mu_hat(eta) with a rigorous bound on truncation plus rounding."""
    eta: int
    re: mpmath.mpf
    im: mpmath.mpf
    err: float
    blocks_used: int

    @property
    def abs(self) -> float:
        return float(mpmath.hypot(self.re, self.im))

    def conjugate(self) -> "FourierValue":
        return FourierValue(eta=-self.eta, re=self.re, im=-self.im, err=self.err,
                            blocks_used=self.blocks_used)


def truncation_digits(tol: float) -> int:
    """g(tol) with 4 * 2^-g <= tol / 2."""
    return math.ceil(math.log2(8.0 / tol)) + 1


def truncation_plan(sched: ParamSchedule, magnitude: int, tol: float) -> Tuple[int, float]:
    """Blocks to multiply and the tail bound pi |eta| 2^-K_L (0 past a finite schedule)."""
    target = magnitude.bit_length() + truncation_digits(tol)
    L = sched.first_index_reaching_or_last(target)
    if sched.is_finite and L == sched.num_blocks:
        return L, 0.0
    K_L = sched.endpoint(L)
    tail = math.pi * (magnitude / (1 << K_L)) * (1 + 2.0 ** -50)
    return L, tail


def mu_hat(spec: MeasureSpec, eta: int, tol: float) -> FourierValue:
    """mu_hat(eta) = prod_ell [eps_ell + (1 - eps_ell) E_ell(eta)], truncated with err <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if eta == 0:
        return FourierValue(eta=0, re=mpmath.mpf(1), im=mpmath.mpf(0), err=0.0, blocks_used=0)
    if eta < 0:
        return mu_hat(spec, -eta, tol).conjugate()

    sched = spec.sched
    L, tail = truncation_plan(sched, eta, tol)
    K_L = sched.endpoint(L)
    prec = working_precision(tol, K_L, L)
    rounding = 0.0
    with mpmath.workprec(prec):
        product = mpmath.mpc(1)
        for ell in range(1, L + 1):
            eps = sched.epsilon(ell)
            lo, hi = sched.block(ell)
            xi = eta % (1 << hi)
            if xi == 0:
                continue
            block = _block_mp(xi, lo, hi, prec, ell)
            if block.exact_zero and eps == 0:
                return FourierValue(eta=eta, re=mpmath.mpf(0), im=mpmath.mpf(0), err=0.0, blocks_used=ell)
            e = mpmath.mpf(eps.numerator) / eps.denominator
            factor = e + (1 - e) * mpmath.mpc(block.re, block.im)
            product *= factor
            rounding += block.err + math.ldexp(16, -prec)
        re, im = +product.real, +product.imag
    return FourierValue(eta=eta, re=re, im=im, err=tail + rounding, blocks_used=L)


@dataclass
class MonteCarloEstimate:
    eta: int
    re: float
    im: float
    sigma_re: float
    sigma_im: float
    truncation: float
    n_samples: int
    depth: int

    @property
    def radius_re(self) -> float:
        return 4 * self.sigma_re + self.truncation + MC_ROUNDING_SLACK

    @property
    def radius_im(self) -> float:
        return 4 * self.sigma_im + self.truncation + MC_ROUNDING_SLACK

    def conjugate(self) -> "MonteCarloEstimate":
        return MonteCarloEstimate(-self.eta, self.re, -self.im, self.sigma_re, self.sigma_im,
                                  self.truncation, self.n_samples, self.depth)


def mu_hat_mc(spec: MeasureSpec, eta: int, n_samples: int, seed: int) -> MonteCarloEstimate:
    """Empirical mean of e(x eta) over draws truncated at bitlength(eta) + 40 digits."""
    if n_samples < 1000:
        raise ValueError("Monte Carlo needs at least 1000 samples")
    if eta == 0:
        return MonteCarloEstimate(0, 1.0, 0.0, 0.0, 0.0, 0.0, n_samples, 0)
    if eta < 0:
        return mu_hat_mc(spec, -eta, n_samples, seed).conjugate()

    sched = spec.sched
    depth = eta.bit_length() + MC_EXTRA_DEPTH
    truncation = 2 * math.pi * (eta / (1 << depth))
    if sched.is_finite and sched.endpoint(sched.num_blocks) <= depth:
        depth = sched.endpoint(sched.num_blocks)
        truncation = 0.0
    if depth > MC_MAX_DEPTH:
        raise ScheduleSaturationError(f"Monte Carlo depth {depth} exceeds {MC_MAX_DEPTH} bits", cap=MC_MAX_DEPTH)

    batch = sample_batch(spec, seed, n_samples, depth)
    mask = np.uint64((1 << depth) - 1)
    phase = (np.uint64(eta % (1 << 64)) * batch.values) & mask
    angle = 2 * np.pi * (phase.astype(np.float64) / float(1 << depth))
    cos_v, sin_v = np.cos(angle), np.sin(angle)
    root_n = math.sqrt(n_samples)
    estimate = MonteCarloEstimate(
        eta=eta,
        re=float(cos_v.mean()), im=float(sin_v.mean()),
        sigma_re=float(cos_v.std(ddof=1)) / root_n, sigma_im=float(sin_v.std(ddof=1)) / root_n,
        truncation=truncation, n_samples=n_samples, depth=depth,
    )
    logger.debug(f"MC mu_hat({eta}) = {estimate.re:+.6f}{estimate.im:+.6f}i over {n_samples} samples")
    return estimate


# Decay bounds
def bound_block_index(spec: MeasureSpec, n: int) -> int:
    """ell with |n| in [2^(K_{ell-1} - 1), 2^(K_ell - 1))."""
    magnitude = abs(n)
    sched = spec.sched
    if magnitude < (1 << (sched.endpoint(1) - 1)):
        raise ValueError(f"|n| = {magnitude} is below the range of the decay bound")
    ell = sched.first_index_reaching(magnitude.bit_length() + 1)
    return ell


def lyons_bound(spec: MeasureSpec, n: int) -> Fraction:
    """eps_l eps_{l-1} + eps_l + eps_{l-1} + 2^-(K_{l-1} - K_{l-2}), capped at 1."""
    sched = spec.sched
    ell = bound_block_index(spec, n)
    e_cur, e_prev = sched.epsilon(ell), sched.epsilon(ell - 1)
    gap = sched.endpoint(ell - 1) - sched.endpoint(max(ell - 2, 0))
    bound = e_cur * e_prev + e_cur + e_prev + pow2_fraction_upper(gap)
    return min(Fraction(1), bound)


def harmonic_decay_bound(spec: MeasureSpec, n: int) -> Fraction:
    """4 / (ell - 1), capped at 1, for eps_l = 1/l schedules."""
    ell = bound_block_index(spec, n)
    if ell <= 5:
        return Fraction(1)
    return Fraction(4, ell - 1)


def decay_envelope(n, kappa) -> float:
    """(ln ln |n|)^(-1 + kappa)."""
    if not 0 < kappa < 1:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    with mpmath.workdps(30):
        magnitude = abs(mpmath.mpf(n))
        if magnitude < 16:
            raise ValueError(f"|n| = {n} too small for the log log envelope")
        exponent = mpmath.mpf(kappa.numerator) / kappa.denominator if isinstance(kappa, Fraction) else mpmath.mpf(kappa)
        return float(mpmath.log(mpmath.log(magnitude)) ** (exponent - 1))
