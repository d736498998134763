from fractions import Fraction

import pytest

from lemma_suites import (
    SUITES,
    SuiteContext,
    SuiteResult,
    lyons_frequencies,
    run_all,
    suite_cosine,
    suite_e_block,
    suite_low_change_strings,
    suite_order_divisibility,
    suite_order_ratio,
    suite_residue_hits,
)
from utils import ConfigurationError


def make_context(spec, **overrides):
    values = dict(
        spec=spec, seed=42, tol=1e-9, alpha=Fraction(1, 10), k_max=30,
        r_values=[3, 5, 7, 9], rho_values=[2, -2, 3, -3, 6, 12],
        cosine_samples=2000, lyons_ells=[10, 11], lyons_samples=60,
        e_block_h=1, e_block_N=64,
    )
    values.update(overrides)
    return SuiteContext(**values)


def test_status_labels():
    assert SuiteResult("x", True).status == "PASS"
    assert SuiteResult("x", True, low_coverage=True).status == "PASS (low coverage)"
    assert SuiteResult("x", False, low_coverage=True).status == "FAIL"


def test_all_suites_pass_on_desk_schedule(desk_del_spec):
    results = run_all(make_context(desk_del_spec))
    assert [r.name for r in results] == list(SUITES)
    assert all(r.status == "PASS" for r in results), [(r.name, r.status, r.details) for r in results]


def test_order_ratio_constants(desk_del_spec):
    result = suite_order_ratio(make_context(desk_del_spec))
    assert result.constants == {"c0_hat[3]": "1/4", "c0_hat[5]": "1/4", "c0_hat[7]": "1/8", "c0_hat[9]": "1/8"}


def test_residue_hit_constants(desk_del_spec):
    result = suite_residue_hits(make_context(desk_del_spec))
    assert result.passed
    for r, c in ((3, "4"), (5, "4"), (7, "8"), (9, "8")):
        assert result.constants[f"c[{r}]"] == c
        assert result.constants[f"c_hat[{r}]"] == c


def test_cosine_suite_reports_maximum(desk_del_spec):
    result = suite_cosine(make_context(desk_del_spec))
    assert result.passed
    assert 0.5 < result.constants["max_abs_cos"] <= 2 ** 0.5 / 2 + 2 ** -40
    assert result.details[0]["checked"] + result.details[0]["skipped"] == 2000


def test_small_k_is_low_coverage(desk_del_spec):
    ctx = make_context(desk_del_spec, k_max=4)
    for suite in (suite_order_divisibility, suite_order_ratio, suite_low_change_strings, suite_residue_hits):
        result = suite(ctx)
        assert result.status == "PASS (low coverage)"


def test_low_change_suite_rejects_alpha(desk_del_spec):
    with pytest.raises(ConfigurationError):
        suite_low_change_strings(make_context(desk_del_spec, alpha=Fraction(2, 5)))


def test_e_block_without_inner_blocks_fails(acceptance_spec):
    result = suite_e_block(make_context(acceptance_spec))
    assert result.constants["checked"] == 0
    assert result.status == "FAIL"


def test_e_block_uses_its_own_schedule(acceptance_spec, desk_del_spec):
    result = suite_e_block(make_context(acceptance_spec, e_block_spec=desk_del_spec, r_values=[3]))
    assert result.status == "PASS"
    assert result.constants["checked"] > 0


def test_e_block_on_desk_schedule(desk_del_spec):
    result = suite_e_block(make_context(desk_del_spec, r_values=[3, 7]))
    assert result.status == "PASS"
    assert all(detail["checked"] > 0 for detail in result.details)


def test_lyons_frequencies_stay_in_range(desk_del_spec):
    etas = lyons_frequencies(desk_del_spec, 42, 10, 50)
    assert all(2 ** 15 <= eta < 2 ** 31 for eta in etas)
    assert etas == lyons_frequencies(desk_del_spec, 42, 10, 50)


def test_run_selected_and_unknown(desk_del_spec):
    ctx = make_context(desk_del_spec)
    assert [r.name for r in run_all(ctx, ["cosine", "order_ratio"])] == ["cosine", "order_ratio"]
    with pytest.raises(ConfigurationError):
        run_all(ctx, ["cosine", "riemann"])
