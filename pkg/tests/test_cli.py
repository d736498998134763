import json
from pathlib import Path

import pytest

import handlers.command_handlers as commands
from handlers.report_handlers import read_csv_table
from main import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main

ACCEPTANCE = {"K": [0, 4, 16, 64, 256]}
SMALL_SAMPLING = {"samples": 2000, "streams": 2, "depth": 64, "batch_depth": 64, "ell_range": [1, 3]}


def run(path, command, *flags):
    return main([command, "--config", path, *flags])


def test_sample_is_deterministic(config_file, tmp_path):
    path = config_file(schedule=ACCEPTANCE, sampling=SMALL_SAMPLING)
    assert run(path, "sample", "--out", str(tmp_path / "a")) == EXIT_OK
    assert run(path, "sample", "--out", str(tmp_path / "b")) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["sample_cylinders.csv", "sample_streams.csv", "sample_zero_blocks.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    streams = read_csv_table(tmp_path / "a" / "sample_streams.csv")
    assert streams[0] == ["stream", "seed", "digits"]
    assert [len(row[2]) for row in streams[1:]] == [64, 64]
    zero_blocks = read_csv_table(tmp_path / "a" / "sample_zero_blocks.csv")
    assert [row[0] for row in zero_blocks[1:]] == ["1", "2", "3"]


def test_seed_changes_output(config_file, tmp_path):
    path = config_file(schedule=ACCEPTANCE, sampling=SMALL_SAMPLING)
    run(path, "sample", "--out", str(tmp_path / "a"), "--seed", "1")
    run(path, "sample", "--out", str(tmp_path / "b"), "--seed", "2")
    a = read_csv_table(tmp_path / "a" / "sample_streams.csv")
    b = read_csv_table(tmp_path / "b" / "sample_streams.csv")
    assert a[1][2] != b[1][2]


def test_json_format_and_header(config_file, tmp_path):
    path = config_file(schedule=ACCEPTANCE, sampling=SMALL_SAMPLING)
    assert run(path, "sample", "--format", "json") == EXIT_OK
    text = (tmp_path / "out" / "sample_streams.json").read_text()
    assert '"command": "sample"' in text and '"config_hash"' in text


def test_weyl_of_zero(config_file, tmp_path):
    path = config_file(weyl={"x_num": 0, "x_den": 1, "bases": [3, 2], "H": 2, "N": 50})
    assert run(path, "weyl") == EXIT_OK
    summary = read_csv_table(tmp_path / "out" / "weyl_summary.csv")
    assert summary[0] == ["b", "h", "N", "re", "im", "abs", "arith_err"]
    assert len(summary) == 1 + 2 * 2
    assert all(int(row[2]) == 50 for row in summary[1:])
    assert all(float(row[5]) == pytest.approx(1.0) for row in summary[1:])


def test_fourier_with_warm_cache(config_file, tmp_path):
    path = config_file(schedule=ACCEPTANCE, fourier={"etas": [0, 1, 3, 7], "eta_ranges": []})
    assert run(path, "fourier", "--out", str(tmp_path / "cold")) == EXIT_OK
    cache_file = tmp_path / "out" / "cache.jsonl"
    assert cache_file.exists()
    assert run(path, "fourier", "--out", str(tmp_path / "warm")) == EXIT_OK
    cold = (tmp_path / "cold" / "fourier.csv").read_bytes()
    assert cold == (tmp_path / "warm" / "fourier.csv").read_bytes()
    rows = read_csv_table(tmp_path / "cold" / "fourier.csv")
    assert [row[0] for row in rows[1:]] == ["0", "1", "3", "7"]
    assert float(rows[1][1]) == pytest.approx(1.0)


def test_certify_passes(config_file, tmp_path):
    path = config_file(schedule=ACCEPTANCE, certify={"b": 2, "ell": 3})
    assert run(path, "certify-nonnormal") == EXIT_OK
    text = (tmp_path / "out" / "certificate.json").read_text()
    assert '"problems": []' in text


def test_certify_past_the_schedule_fails(config_file):
    path = config_file(schedule=ACCEPTANCE, certify={"b": 2, "ell": 9})
    assert run(path, "certify-nonnormal") == EXIT_FAILED


def test_del_small(config_file, tmp_path):
    path = config_file(**{"del": {"N_max": 16}})
    assert run(path, "del") == EXIT_OK
    series = read_csv_table(tmp_path / "out" / "del_series.csv")
    assert [row[0] for row in series[1:]] == ["1", "2", "4", "8", "16"]
    assert (tmp_path / "out" / "del_decomposition.csv").exists()


def test_verify_selected_suites(config_file, tmp_path):
    path = config_file(verify={"suites": ["order_ratio", "residue_hits"], "k_max": 12})
    assert run(path, "verify-lemmas") == EXIT_OK
    table = read_csv_table(tmp_path / "out" / "lemma_suites.csv")
    assert [(row[0], row[1]) for row in table[1:]] == [("order_ratio", "PASS"), ("residue_hits", "PASS")]


def test_verify_e_block_runs_on_del_schedule(config_file, tmp_path):
    path = config_file(verify={"suites": ["e_block"], "r_values": [3]})
    assert run(path, "verify-lemmas") == EXIT_OK
    table = read_csv_table(tmp_path / "out" / "lemma_suites.csv")
    assert table[1][:2] == ["e_block", "PASS"]
    assert '"checked": 0' not in table[1][4]


def test_verify_unknown_suite_is_usage_error(config_file):
    path = config_file(verify={"suites": ["riemann"]})
    assert run(path, "verify-lemmas") == EXIT_USAGE


def test_admissibility_reports(config_file, tmp_path):
    path = config_file(verify={"R_range": [100, 1000], "slow_growth_xs": [10, 100]})
    assert run(path, "admissibility") == EXIT_OK
    for name in ("admissibility.csv", "slow_growth.csv", "k_ratio.csv", "admissibility_summary.json"):
        assert (tmp_path / "out" / name).exists()
    summary = json.loads((tmp_path / "out" / "admissibility_summary.json").read_text())
    assert summary["all_passed"] is False


def test_bad_flags_are_usage_errors(config_file):
    path = config_file()
    assert run(path, "sample", "--tol", "0") == EXIT_USAGE
    assert main(["sample", "--config", str(Path(path).parent / "missing.json")]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["integrate"])
    assert info.value.code == 2


def test_sample_fails_on_cylinder_outliers(config_file, monkeypatch):
    path = config_file(schedule=ACCEPTANCE, sampling=SMALL_SAMPLING)
    monkeypatch.setattr(commands, "_binomial_z", lambda count, n, p: 5.0)
    assert run(path, "sample") == EXIT_FAILED
