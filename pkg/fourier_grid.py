#!/usr/bin/env python3
"""
Rajchman Lab - Frequency Grid Evaluation
Memoised, parallel mu_hat over frequency lists, with a vectorised float64
evaluator used where its rounding model fits inside the tolerance.
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import mpmath
import numpy as np
from joblib import Parallel, delayed

from dyadic_digits import bits_little_endian
from fourier_cache import FourierCache
from measure import FourierValue, MeasureSpec, mu_hat, truncation_plan

logger = logging.getLogger(__name__)

BACKENDS = ("auto", "mpmath", "float64")
CHUNK_SIZE = 64
FRACTION_BITS = 52
# per cos(pi theta_k) factor, theta_k carrying 52 exact digits
FACTOR_ERROR = 2.0 ** -46
# per block: rounding of the exact phase to float plus the eps mixing step
BLOCK_ERROR = 2.0 ** -48

_WINDOW = 2.0 ** -np.arange(1, FRACTION_BITS + 1)


def _block_spans(spec: MeasureSpec, L: int) -> List[Tuple[int, int, float]]:
    sched = spec.sched
    spans = []
    for ell in range(1, L + 1):
        lo, hi = sched.block(ell)
        spans.append((lo, hi, float(sched.epsilon(ell))))
    return spans


def block_phase_numerator(xi: int, lo: int, hi: int) -> int:
    """sum_{k=lo}^{hi} (xi mod 2^k) 2^(hi-k), reduced mod 2^(hi+1).

    Digits below lo - 1 appear in every term; digit i >= lo - 1 appears
    for k > i, which collapses the sum to three big-integer operations.
    """
    low = xi & ((1 << (lo - 1)) - 1)
    mid = (xi & ((1 << hi) - 1)) - low
    total = low * ((1 << (hi - lo + 1)) - 1) + bin(mid).count("1") * (1 << hi) - mid
    return total % (1 << (hi + 1))


def float64_rounding_bound(spans: Sequence[Tuple[int, int, float]]) -> float:
    """Rounding model of the float64 evaluator over the given blocks."""
    return sum((hi - lo + 1) * FACTOR_ERROR + BLOCK_ERROR for lo, hi, _ in spans)


def float64_admissible(spec: MeasureSpec, eta: int, tol: float) -> bool:
    if eta == 0:
        return True
    L, _ = truncation_plan(spec.sched, abs(eta), tol)
    return float64_rounding_bound(_block_spans(spec, L)) <= tol / 4


def mu_hat_float64(spec: MeasureSpec, eta: int, tol: float) -> FourierValue:
    """mu_hat(eta) in float64; magnitudes from 52-digit theta_k, phases from exact integers."""
    if eta == 0:
        return FourierValue(eta=0, re=mpmath.mpf(1), im=mpmath.mpf(0), err=0.0, blocks_used=0)
    if eta < 0:
        return mu_hat_float64(spec, -eta, tol).conjugate()
    L, tail = truncation_plan(spec.sched, eta, tol)
    spans = _block_spans(spec, L)
    K_L = spans[-1][1]
    digits = bits_little_endian(eta, K_L).astype(np.float64)
    # theta[k-1] = sum_{i < 52} d_{k-1-i} 2^-(i+1)
    theta = np.convolve(digits, _WINDOW)[:K_L]
    product = 1.0 + 0.0j
    for lo, hi, eps in spans:
        xi = eta & ((1 << hi) - 1)
        if xi == 0:
            continue
        magnitude = float(np.prod(np.cos(np.pi * theta[lo - 1:hi])))
        # e(phase / 2^(hi+1)) = exp(i pi phase / 2^hi)
        angle = block_phase_numerator(xi, lo, hi) / (1 << hi)
        product *= eps + (1.0 - eps) * magnitude * complex(math.cos(math.pi * angle),
                                                           math.sin(math.pi * angle))
    err = tail + float64_rounding_bound(spans)
    return FourierValue(eta=eta, re=mpmath.mpf(product.real), im=mpmath.mpf(product.imag),
                        err=err, blocks_used=L)


def resolve_backend(spec: MeasureSpec, eta: int, tol: float, backend: str) -> str:
    if backend not in BACKENDS:
        raise ValueError(f"Unknown backend {backend}")
    if backend == "auto":
        return "float64" if float64_admissible(spec, eta, tol) else "mpmath"
    return backend


def evaluate(spec: MeasureSpec, eta: int, tol: float, backend: str = "mpmath") -> Tuple[str, FourierValue]:
    method = resolve_backend(spec, eta, tol, backend)
    if method == "float64":
        return method, mu_hat_float64(spec, eta, tol)
    return method, mu_hat(spec, eta, tol)


def _evaluate_chunk(spec: MeasureSpec, etas: Sequence[int], tol: float, backend: str):
    return [evaluate(spec, eta, tol, backend) for eta in etas]


def mu_hat_abs_grid(spec: MeasureSpec, etas: Iterable[int], tol: float, backend: str = "auto",
                    threads: int = 1, cache: Optional[FourierCache] = None) -> List[FourierValue]:
    """mu_hat for every eta, in input order; distinct uncached values are computed in parallel."""
    etas = [int(eta) for eta in etas]
    found = {}
    missing = []
    for eta in dict.fromkeys(etas):
        method = resolve_backend(spec, eta, tol, backend)
        cached = cache.get(spec.id, eta, tol, method) if cache is not None else None
        if cached is not None:
            found[eta] = cached
        else:
            missing.append(eta)

    if missing:
        chunks = [missing[i:i + CHUNK_SIZE] for i in range(0, len(missing), CHUNK_SIZE)]
        results = Parallel(n_jobs=threads)(
            delayed(_evaluate_chunk)(spec, chunk, tol, backend) for chunk in chunks)
        for chunk_result in results:
            for method, value in chunk_result:
                found[value.eta] = value
                if cache is not None:
                    cache.put(spec.id, tol, method, value)

    logger.info(f"Grid of {len(etas)} frequencies ({len(found)} distinct): "
                f"{len(found) - len(missing)} from cache, {len(missing)} evaluated")
    return [found[eta] for eta in etas]
