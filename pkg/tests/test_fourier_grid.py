import random

import pytest

from fourier_cache import FourierCache
from fourier_grid import (
    block_phase_numerator,
    evaluate,
    float64_admissible,
    mu_hat_abs_grid,
    mu_hat_float64,
    resolve_backend,
)
from measure import mu_hat


def test_block_phase_numerator_matches_direct_sum():
    rng = random.Random(4)
    for _ in range(200):
        lo = rng.randint(1, 40)
        hi = rng.randint(lo, 90)
        xi = rng.getrandbits(hi + 5)
        direct = sum((xi % (1 << k)) << (hi - k) for k in range(lo, hi + 1)) % (1 << (hi + 1))
        assert block_phase_numerator(xi, lo, hi) == direct


def test_float64_agrees_with_mpmath(acceptance_spec):
    rng = random.Random(21)
    etas = [1, 3, 7, 100, 12345, 2 ** 40 - 1] + [rng.getrandbits(120) for _ in range(10)]
    for eta in etas:
        fast = mu_hat_float64(acceptance_spec, eta, 1e-9)
        slow = mu_hat(acceptance_spec, eta, 1e-9)
        assert abs(complex(fast.re, fast.im) - complex(slow.re, slow.im)) <= fast.err + slow.err
        assert fast.err <= 1e-9


def test_float64_conjugation(acceptance_spec):
    plus = mu_hat_float64(acceptance_spec, 999, 1e-9)
    minus = mu_hat_float64(acceptance_spec, -999, 1e-9)
    assert (minus.re, minus.im) == (plus.re, -plus.im)


def test_backend_resolution(acceptance_spec):
    assert float64_admissible(acceptance_spec, 12345, 1e-9)
    assert resolve_backend(acceptance_spec, 12345, 1e-9, "auto") == "float64"
    assert resolve_backend(acceptance_spec, 3, 1e-15, "auto") == "mpmath"
    assert resolve_backend(acceptance_spec, 3, 1e-15, "float64") == "float64"
    with pytest.raises(ValueError):
        resolve_backend(acceptance_spec, 3, 1e-9, "gpu")


def test_evaluate_reports_method(acceptance_spec):
    method, value = evaluate(acceptance_spec, 0, 1e-9, "auto")
    assert method == "float64"
    assert value.re == 1


def test_grid_keeps_input_order_and_duplicates(acceptance_spec):
    etas = [100, 3, 100, -3, 0]
    values = mu_hat_abs_grid(acceptance_spec, etas, 1e-9, backend="mpmath")
    assert [v.eta for v in values] == etas
    assert values[0] is values[2]
    assert values[3].im == -values[1].im


def test_grid_is_independent_of_thread_count(acceptance_spec):
    etas = list(range(1, 150))
    one = mu_hat_abs_grid(acceptance_spec, etas, 1e-9, threads=1)
    two = mu_hat_abs_grid(acceptance_spec, etas, 1e-9, threads=2)
    assert [(v.re, v.im, v.err) for v in one] == [(v.re, v.im, v.err) for v in two]


def test_grid_uses_cache(acceptance_spec):
    cache = FourierCache()
    first = mu_hat_abs_grid(acceptance_spec, [3, 7, 11], 1e-9, cache=cache)
    assert cache.misses == 3 and len(cache) == 3
    second = mu_hat_abs_grid(acceptance_spec, [7, 11, 13], 1e-9, cache=cache)
    assert cache.hits == 2
    assert second[0] is first[1]
    assert len(cache) == 4
