import json
from fractions import Fraction

import pytest

from measure import MeasureSpec
from param_schedule import ParamSchedule


def harmonic(K):
    return ParamSchedule("explicit", K=K, eps=[Fraction(1, ell) for ell in range(1, len(K))])


@pytest.fixture
def acceptance_spec():
    """K = (0, 4, 16, 64, 256), eps_l = 1/l."""
    return MeasureSpec(harmonic([0, 4, 16, 64, 256]))


@pytest.fixture
def powers_of_four_spec():
    """K_l = 4^l up to l = 7."""
    return MeasureSpec(harmonic([0] + [4 ** ell for ell in range(1, 8)]))


@pytest.fixture
def two_point_spec():
    """K = (0, 2, 6)."""
    return MeasureSpec(harmonic([0, 2, 6]))


@pytest.fixture
def desk_del_spec():
    """Unit blocks up to K = 8, then doubling to 1024."""
    return MeasureSpec(harmonic(list(range(9)) + [1 << j for j in range(4, 11)]))


@pytest.fixture
def config_file(tmp_path):
    """Write a configuration document and return its path; output goes under tmp_path."""
    def make(**sections):
        data = {"output": {"out_dir": str(tmp_path / "out"),
                           "cache_path": str(tmp_path / "out" / "cache.jsonl")}}
        for name, values in sections.items():
            if isinstance(values, dict):
                data.setdefault(name, {}).update(values)
            else:
                data[name] = values
        path = tmp_path / "lab.json"
        path.write_text(json.dumps(data))
        return str(path)
    return make


@pytest.fixture(autouse=True)
def clean_lab_environment(monkeypatch):
    for name in ("LAB_SEED", "LAB_TOL", "LAB_THREADS", "LAB_OUT_DIR", "LAB_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
