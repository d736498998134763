import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

from config import Config
from del_decomposition import DEL_CSV_HEADER, abs_table, del_decompose, del_series
from fourier_cache import FourierCache
from fourier_grid import mu_hat_abs_grid
from handlers.report_handlers import ReportWriter
from lemma_suites import SuiteContext, lyons_frequencies, run_all
from measure import (
    MeasureSpec,
    cylinder_mass,
    decay_envelope,
    empirical_cylinder_table,
    harmonic_decay_bound,
    lyons_bound,
    mu_hat_mc,
    sample,
    sample_batch,
    zero_block_partial_sums,
    zero_block_probability,
)
from normality_lab import (
    DyadicApprox,
    block_freq,
    certify_nonnormal,
    valid_horizon,
    validate_certificate,
    weyl_scan,
)
from param_schedule import check_admissible, k_ratio_trace, ratio_tends_to_zero, slow_growth_check
from utils import ScheduleError, ScheduleSaturationError, as_fraction, fraction_to_float_upper

logger = logging.getLogger(__name__)

SEED_MODULUS = 1 << 64


@dataclass
class CommandOutcome:
    command: str
    files: List[Path] = field(default_factory=list)
    passed: bool = True
    summary: Dict[str, Any] = field(default_factory=dict)


def _writer(config: Config, command: str) -> ReportWriter:
    return ReportWriter(config.output.out_dir, config.output.format, config.config_hash(), command)


def _finish(writer: ReportWriter, outcome: CommandOutcome) -> CommandOutcome:
    outcome.files = list(writer.written)
    logger.info(f"{outcome.command}: wrote {len(outcome.files)} files to {writer.out_dir}"
                f" ({'passed' if outcome.passed else 'FAILED'})")
    return outcome


def _binomial_z(count: int, n: int, p: Fraction) -> Optional[float]:
    if p <= 0 or p >= 1:
        return None
    mean = n * float(p)
    return (count - mean) / math.sqrt(mean * (1 - float(p)))


def cmd_sample(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """Digit streams, the empirical cylinder table and zero-block frequencies."""
    spec = config.measure_spec()
    cfg = config.sampling
    writer = _writer(config, "sample")
    outcome = CommandOutcome(command="sample")

    stream_rows = []
    for i in range(cfg.streams):
        seed = (config.seed + i) % SEED_MODULUS
        stream = sample(spec, seed, cfg.depth, cfg.forced_zero_blocks)
        stream_rows.append([i, seed, "".join(str(int(d)) for d in stream.digits)])
    writer.table("sample_streams", ["stream", "seed", "digits"], stream_rows)

    batch = sample_batch(spec, config.seed, cfg.samples, cfg.batch_depth, cfg.forced_zero_blocks)
    table = empirical_cylinder_table(batch, cfg.cylinder_length)
    cylinder_rows = []
    max_z = 0.0
    for prefix, count in sorted(table.items()):
        mass = cylinder_mass(spec, prefix)
        z = _binomial_z(count, batch.size, mass)
        if z is not None:
            max_z = max(max_z, abs(z))
        cylinder_rows.append(["".join(map(str, prefix)), count, count / batch.size, mass,
                              float(mass), z])
    writer.table("sample_cylinders", ["prefix", "count", "frequency", "mass", "mass_float", "z"],
                 cylinder_rows)

    sched = spec.sched
    lo, hi = cfg.ell_range
    zero_rows = []
    top = min(hi, sched.num_blocks) if sched.is_finite else hi
    partial_sums = zero_block_partial_sums(spec, top) if top >= lo else []
    for ell in range(lo, hi + 1):
        try:
            K_prev, K_cur = sched.endpoint(ell - 1), sched.endpoint(ell)
        except ScheduleError:
            break
        if K_cur > batch.depth:
            break
        empirical = float(batch.digit_range_is_zero(K_prev + 1, K_cur).mean())
        exact = zero_block_probability(spec, ell)
        zero_rows.append([ell, K_prev, K_cur, empirical, exact, float(exact), partial_sums[ell - 1]])
    writer.table("sample_zero_blocks",
                 ["ell", "K_prev", "K_ell", "empirical", "probability", "probability_float", "partial_sum"],
                 zero_rows)

    # z-scores assume the unforced law
    within = max_z <= 4 and not cfg.forced_zero_blocks
    if not cfg.forced_zero_blocks:
        outcome.passed = within
    outcome.summary = {"samples": batch.size, "max_abs_z": max_z, "within_4_sigma": within}
    return _finish(writer, outcome)


def _optional_bound(fn, spec: MeasureSpec, eta: int) -> Optional[Fraction]:
    try:
        return fn(spec, eta)
    except ValueError:
        return None


def cmd_fourier(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """|mu_hat| table with the decay bounds, plus optional Monte Carlo comparison."""
    spec = config.measure_spec()
    cfg = config.fourier
    tol = config.tol
    kappa = as_fraction(cfg.kappa)
    writer = _writer(config, "fourier")
    outcome = CommandOutcome(command="fourier")

    etas = [int(eta) for eta in cfg.etas]
    for ell in cfg.eta_ranges:
        etas.extend(lyons_frequencies(spec, config.seed, ell, cfg.random_per_range))
    values = mu_hat_abs_grid(spec, etas, tol, backend=cfg.backend, threads=config.threads, cache=cache)

    rows = []
    violations = 0
    for value in values:
        eta = value.eta
        bound = _optional_bound(lyons_bound, spec, eta) if eta else None
        harmonic = _optional_bound(harmonic_decay_bound, spec, eta) if eta else None
        envelope = decay_envelope(eta, kappa) if abs(eta) >= 16 else None
        within = None
        if bound is not None:
            within = value.abs <= fraction_to_float_upper(bound) + tol
            if not within:
                violations += 1
        rows.append([eta, value.abs, value.err,
                     None if bound is None else fraction_to_float_upper(bound),
                     None if harmonic is None else float(harmonic), envelope, within])
    writer.table("fourier", ["eta", "abs", "err", "lyons_bound", "harmonic_bound", "envelope", "within_bound"],
                 rows)

    if cfg.mc_samples:
        exact = {value.eta: value for value in values}
        mc_rows = []
        for eta in dict.fromkeys(int(e) for e in cfg.etas):
            try:
                est = mu_hat_mc(spec, eta, cfg.mc_samples, config.seed)
            except ScheduleSaturationError as e:
                logger.warning(f"Skipping Monte Carlo for eta={eta}: {e}")
                continue
            value = exact[eta]
            agree = (abs(float(value.re) - est.re) <= est.radius_re + value.err
                     and abs(float(value.im) - est.im) <= est.radius_im + value.err)
            mc_rows.append([eta, float(value.re), float(value.im), value.err, est.re, est.im,
                            est.radius_re, est.radius_im, agree])
            outcome.passed = outcome.passed and agree
        writer.table("fourier_mc", ["eta", "re", "im", "err", "mc_re", "mc_im", "radius_re", "radius_im",
                                    "agree"], mc_rows)

    outcome.passed = outcome.passed and violations == 0
    outcome.summary = {"frequencies": len(values), "bound_violations": violations}
    return _finish(writer, outcome)


def cmd_weyl(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """Weyl sums and digit-block frequencies of a sample (or a configured rational) per base."""
    cfg = config.weyl
    writer = _writer(config, "weyl")
    outcome = CommandOutcome(command="weyl")

    if cfg.x_num is not None:
        x = DyadicApprox.from_fraction(Fraction(cfg.x_num, cfg.x_den), cfg.precision)
        source = f"{cfg.x_num}/{cfg.x_den}"
    else:
        x = DyadicApprox.from_sample(sample(config.measure_spec(), config.seed, cfg.precision))
        source = f"sample seed={config.seed}"
    logger.info(f"Weyl sums for x = {source} at precision {x.P} (exact={x.exact})")

    summary_rows = []
    block_rows = []
    max_abs: Dict[int, float] = {}
    for b in cfg.bases:
        reports = weyl_scan(x, b, cfg.H, cfg.N, trace=True)
        for report in reports:
            summary_rows.append([b, report.h, report.N, report.re, report.im, report.abs, report.arith_err])
        max_abs[b] = max(report.abs for report in reports)
        writer.table(f"weyl_trace_b{b}", ["n", "re", "im"], reports[0].csv_rows())

        horizon = valid_horizon(x, b)
        depth = cfg.N if horizon is None else horizon
        if depth >= cfg.block_k:
            freq = block_freq(x, b, cfg.block_k, depth)
            block_rows.append([b, cfg.block_k, depth, freq.max_deviation])
    writer.table("weyl_summary", ["b", "h", "N", "re", "im", "abs", "arith_err"], summary_rows)
    writer.table("weyl_blocks", ["b", "k", "depth", "max_deviation"], block_rows)

    outcome.summary = {"source": source, "max_abs": max_abs}
    return _finish(writer, outcome)


def cmd_certify(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """Non-normality certificate on a sample with the zero block forced at ell."""
    sched = config.build_schedule()
    spec = MeasureSpec(sched)
    cfg = config.certify
    writer = _writer(config, "certify-nonnormal")

    if sched.is_finite and cfg.ell == sched.num_blocks:
        depth = sched.endpoint(cfg.ell)
    else:
        depth = sched.endpoint(cfg.ell + 1)
    stream = sample(spec, cfg.forced_sample_seed, depth, forced_zero_blocks=[cfg.ell])
    cert = certify_nonnormal(stream, cfg.b, sched, cfg.ell)

    record = json.loads(json.dumps(cert.to_dict()))
    problems = validate_certificate(record)
    for problem in problems:
        logger.error(f"Certificate problem: {problem}")
    record.update({"sample_seed": cfg.forced_sample_seed, "sample_depth": depth, "problems": problems})
    writer.document("certificate", record)

    outcome = CommandOutcome(command="certify-nonnormal", passed=cert.passed and not problems,
                             summary={"lower_bound": cert.lower_bound, "re_S_over_N": cert.re_avg})
    return _finish(writer, outcome)


def cmd_del(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """DEL partial sums and the I = I1 + I21 + I22 decomposition at every dyadic checkpoint."""
    cfg = config.del_
    spec = MeasureSpec(config.build_del_schedule())
    alpha = config.alpha()
    gamma = as_fraction(cfg.gamma)
    tol = config.tol
    writer = _writer(config, "del")
    outcome = CommandOutcome(command="del")

    table, table_err = abs_table(cfg.h, cfg.r, cfg.N_max, spec, tol, config.fourier.backend,
                                 config.threads, cache)
    series = del_series(cfg.h, cfg.r, cfg.N_max, spec, tol, table=table)
    writer.table("del_series", ["N", "I", "partial_sum", "increment"], series.csv_rows())

    rows = []
    wstar_rows = []
    u1_rows = []
    for point in series.rows:
        dec = del_decompose(cfg.h, cfg.r, point.N, spec, tol, alpha=alpha, gamma=gamma,
                            table=table, table_err=table_err)
        rows.append(dec.csv_row())
        for w in dec.wstar:
            wstar_rows.append([dec.N, w.ell, w.width, w.count, float(w.log2_bound), w.below_bound,
                               w.brute_checked])
        u1_rows.append([dec.N, dec.R, len(dec.V1), dec.v1_bound, dec.max_u1_vl, dec.max_u1_xi,
                        dec.u1_xi_ok, dec.e_block_violations])
        outcome.passed = (outcome.passed and dec.identity_ok and dec.i22_ok and dec.u1_xi_ok
                          and dec.e_block_violations == 0)
    writer.table("del_decomposition", DEL_CSV_HEADER, rows)
    writer.table("del_wstar", ["N", "ell", "width", "count", "log2_bound", "below_bound", "brute_checked"],
                 wstar_rows)
    writer.table("del_u1", ["N", "R", "V1_size", "V1_bound", "max_U1_vl", "max_U1_xi", "U1_xi_ok",
                            "e_block_violations"], u1_rows)

    outcome.passed = outcome.passed and series.monotone
    outcome.summary = {"N_max": cfg.N_max, "max_err": table_err, "monotone": series.monotone,
                       "increments_decreasing": series.increments_decreasing()}
    return _finish(writer, outcome)


def suite_context(config: Config, cache: Optional[FourierCache] = None) -> SuiteContext:
    verify = config.verify
    return SuiteContext(
        spec=config.measure_spec(), seed=config.seed, tol=config.tol, alpha=config.alpha(),
        k_max=verify.k_max, r_values=list(verify.r_values), rho_values=list(verify.rho_values),
        cosine_samples=verify.cosine_samples, lyons_ells=list(verify.lyons_ells),
        lyons_samples=verify.lyons_samples, e_block_h=verify.e_block_h, e_block_N=verify.e_block_N,
        backend=config.fourier.backend, threads=config.threads, cache=cache,
        e_block_spec=MeasureSpec(config.build_del_schedule()),
    )


def cmd_verify_lemmas(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """Run the lemma suites; the pass/fail table carries the fitted constants."""
    writer = _writer(config, "verify-lemmas")
    results = run_all(suite_context(config, cache), config.verify.suites)
    rows = [[r.name, r.status, r.passed, r.low_coverage, json.dumps(r.constants, sort_keys=True)]
            for r in results]
    writer.table("lemma_suites", ["suite", "status", "passed", "low_coverage", "constants"], rows)
    writer.document("lemma_suites_detail", {
        "suites": [{"name": r.name, "passed": r.passed, "low_coverage": r.low_coverage,
                    "constants": r.constants, "details": r.details} for r in results],
    })
    for r in results:
        logger.info(f"  {r.name:<20} {r.status}")
    outcome = CommandOutcome(command="verify-lemmas", passed=all(r.passed for r in results),
                             summary={r.name: r.status for r in results})
    return _finish(writer, outcome)


def cmd_admissibility(config: Config, cache: Optional[FourierCache] = None) -> CommandOutcome:
    """Exact admissibility per R, the slow-growth scan and the K-ratio trace.

    Informational: the inequalities are asymptotic and fail at desk-scale R,
    so the verdicts go into the report and never into the exit status.
    """
    sched = config.build_schedule()
    verify = config.verify
    writer = _writer(config, "admissibility")

    report = check_admissible(sched, verify.gamma, verify.R_range)
    writer.table("admissibility", ["R", "t", "T", "K_T", "product", "passed", "exact", "gap_ok", "error"],
                 [[row.R, row.t, row.T, row.K_T, row.product, row.passed, row.exact, row.gap_ok, row.error]
                  for row in report.rows])

    slow = slow_growth_check(verify.slow_growth_M, as_fraction(verify.slow_growth_tau),
                             verify.slow_growth_xs)
    writer.table("slow_growth", ["x", "omega_x", "omega_Mx", "holds"],
                 [[row.x, row.omega_x, row.omega_Mx, row.holds] for row in slow.rows])

    trace = k_ratio_trace(sched, verify.k_ratio_L)
    writer.table("k_ratio", ["ell", "ratio", "ratio_float"], [[ell, ratio, float(ratio)] for ell, ratio in trace])

    writer.document("admissibility_summary", {
        "gamma": report.gamma,
        "all_passed": report.all_passed,
        "eps_partial_sums_increasing": report.partial_sums_increasing,
        "growth_ok": report.growth_ok,
        "gap_threshold": report.gap_threshold,
        "slow_growth_holds_from": slow.holds_from,
        "omega_monotone": slow.monotone,
        "k_ratio_tends_to_zero": ratio_tends_to_zero(trace),
    })
    outcome = CommandOutcome(command="admissibility",
                             summary={"all_passed": report.all_passed, "gap_threshold": report.gap_threshold})
    return _finish(writer, outcome)


HANDLERS = {
    "sample": cmd_sample,
    "fourier": cmd_fourier,
    "weyl": cmd_weyl,
    "certify-nonnormal": cmd_certify,
    "del": cmd_del,
    "verify-lemmas": cmd_verify_lemmas,
    "admissibility": cmd_admissibility,
}
