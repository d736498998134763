#!/usr/bin/env python3
"""
Rajchman Lab - Configuration Management
Run configuration with JSON loading, environment overrides and validation
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

from dyadic_digits import schmidt_alpha_ok
from measure import MC_MAX_DEPTH, MeasureSpec
from param_schedule import SCHEDULE_KINDS, ParamSchedule, make_schedule
from utils import ConfigurationError, LabError, as_fraction, content_hash

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("csv", "json")
SEED_LIMIT = 1 << 64


def _powers_of_four(top: int) -> List[int]:
    return [0] + [4 ** ell for ell in range(1, top + 1)]


def _desk_del_endpoints() -> List[int]:
    # unit blocks up to 8, then doubling up to 1024
    return list(range(9)) + [1 << j for j in range(4, 11)]


@dataclass
class ScheduleConfig:
    """Block schedule of the measure; eps = None means eps_l = 1/l."""
    kind: str = "explicit"
    K_base: Optional[int] = None
    K: Optional[List[int]] = field(default_factory=lambda: _powers_of_four(7))
    eps: Optional[List[str]] = None
    max_K: int = 1 << 24


@dataclass
class SamplingConfig:
    """Digit streams and the Monte Carlo batch"""
    samples: int = 100000
    streams: int = 4
    depth: int = 256
    batch_depth: int = 64
    cylinder_length: int = 2
    forced_zero_blocks: List[int] = field(default_factory=list)
    ell_range: List[int] = field(default_factory=lambda: [1, 4])


@dataclass
class FourierConfig:
    """Fourier coefficient tables"""
    backend: str = "auto"
    kappa: str = "1/10"
    etas: List[int] = field(default_factory=lambda: [0, 1, 3, 7, 100, 12345])
    eta_ranges: List[int] = field(default_factory=lambda: [3, 4])
    random_per_range: int = 200
    mc_samples: int = 0


@dataclass
class WeylConfig:
    """Weyl sums on a sample, or on x = x_num / x_den when x_num is set"""
    bases: List[int] = field(default_factory=lambda: [3, 5, 7, 2])
    H: int = 4
    N: int = 200
    precision: int = 2048
    block_k: int = 2
    x_num: Optional[int] = None
    x_den: int = 1


@dataclass
class CertifyConfig:
    """Non-normality certificate on a sample with a forced zero block"""
    b: int = 2
    ell: int = 6
    forced_sample_seed: int = 42


@dataclass
class DelConfig:
    """DEL sums; K = None reuses the main schedule"""
    h: int = 1
    r: int = 3
    N_max: int = 256
    gamma: str = "2"
    K: Optional[List[int]] = field(default_factory=_desk_del_endpoints)
    eps: Optional[List[str]] = None


@dataclass
class VerifyConfig:
    """Lemma suites and admissibility scans"""
    alpha: str = "1/10"
    gamma: str = "2"
    k_max: int = 30
    r_values: List[int] = field(default_factory=lambda: [3, 5, 7, 9])
    rho_values: List[int] = field(default_factory=lambda: [2, -2, 3, -3, 6, 12])
    cosine_samples: int = 10000
    lyons_ells: List[int] = field(default_factory=lambda: [3, 4])
    lyons_samples: int = 200
    e_block_h: int = 1
    e_block_N: int = 64
    suites: Optional[List[str]] = None
    R_range: List[int] = field(default_factory=lambda: [10 ** j for j in range(2, 9)])
    slow_growth_M: int = 2
    slow_growth_tau: str = "1/2"
    slow_growth_xs: List[int] = field(default_factory=lambda: [10 ** j for j in range(1, 13)])
    k_ratio_L: int = 8


@dataclass
class OutputConfig:
    """Report location and format"""
    out_dir: str = "out"
    format: str = "csv"
    cache_path: Optional[str] = "out/mu_hat_cache.jsonl"


@dataclass
class LoggingConfig:
    """Logging configuration"""
    level: str = "INFO"
    file_path: str = ""
    format_string: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    enable_console: bool = True


SECTIONS = {
    "schedule": ScheduleConfig,
    "sampling": SamplingConfig,
    "fourier": FourierConfig,
    "weyl": WeylConfig,
    "certify": CertifyConfig,
    "del": DelConfig,
    "verify": VerifyConfig,
    "output": OutputConfig,
    "logging": LoggingConfig,
}

TOP_LEVEL = ("seed", "tol", "threads")


def _build_schedule(kind: str, K_base: Optional[int], K: Optional[List[int]],
                    eps: Optional[List[str]], max_K: int) -> ParamSchedule:
    if kind != "explicit":
        return make_schedule(kind, {"K_base": K_base, "max_K": max_K})
    if K is None:
        raise ConfigurationError("explicit schedules need a K list")
    if eps is None:
        eps = [f"1/{ell}" for ell in range(1, len(K))]
    return make_schedule("explicit", {"K": K, "eps": eps, "max_K": max_K})


class Config:
    """
    Run configuration: defaults, then the JSON file, then LAB_* environment
    variables, then CLI overrides. Validated after every stage.
    """

    def __init__(self, config_file: Optional[str] = None, environment: bool = True):
        self.config_file = config_file
        self.seed = 0
        self.tol = 1e-9
        self.threads = 1

        self.schedule = ScheduleConfig()
        self.sampling = SamplingConfig()
        self.fourier = FourierConfig()
        self.weyl = WeylConfig()
        self.certify = CertifyConfig()
        self.del_ = DelConfig()
        self.verify = VerifyConfig()
        self.output = OutputConfig()
        self.logging = LoggingConfig()

        self._load_configuration()
        if environment:
            self._load_from_environment()
        self._validate_configuration()

    def section(self, name: str):
        return self.del_ if name == "del" else getattr(self, name)

    def _load_configuration(self):
        """Load the JSON document, if one was given"""
        if not self.config_file:
            logger.debug("No configuration file given, using defaults")
            return
        config_path = Path(self.config_file)
        if not config_path.exists():
            raise ConfigurationError(f"Configuration file not found: {config_path}")
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Configuration file {config_path} is not valid JSON: {e}") from e
        self._apply_config_data(config_data)
        logger.info(f"Loaded configuration from {config_path}")

    def _apply_config_data(self, config_data: Dict[str, Any]):
        """Apply a configuration document; unknown keys are rejected"""
        if not isinstance(config_data, dict):
            raise ConfigurationError("Configuration document must be a JSON object")
        unknown = [key for key in config_data if key not in SECTIONS and key not in TOP_LEVEL]
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {', '.join(sorted(unknown))}")

        for key in TOP_LEVEL:
            if key in config_data:
                setattr(self, key, config_data[key])

        for name, section_cls in SECTIONS.items():
            if name not in config_data:
                continue
            values = config_data[name]
            if not isinstance(values, dict):
                raise ConfigurationError(f"Section '{name}' must be an object")
            allowed = {f.name for f in fields(section_cls)}
            bad = [key for key in values if key not in allowed]
            if bad:
                raise ConfigurationError(f"Unknown keys in section '{name}': {', '.join(sorted(bad))}")
            section = self.section(name)
            for key, value in values.items():
                setattr(section, key, value)

    def _load_from_environment(self):
        """Load configuration overrides from environment variables"""
        try:
            self.seed = int(os.getenv("LAB_SEED", str(self.seed)))
            self.tol = float(os.getenv("LAB_TOL", repr(self.tol)))
            self.threads = int(os.getenv("LAB_THREADS", str(self.threads)))
        except ValueError as e:
            raise ConfigurationError(f"Invalid LAB_* environment value: {e}") from e
        self.output.out_dir = os.getenv("LAB_OUT_DIR", self.output.out_dir)
        self.logging.level = os.getenv("LAB_LOG_LEVEL", self.logging.level)

    def apply_overrides(self, **flags):
        """Apply CLI flags (None means not given), then re-validate"""
        mapping = {
            "seed": (self, "seed"),
            "tol": (self, "tol"),
            "threads": (self, "threads"),
            "out": (self.output, "out_dir"),
            "format": (self.output, "format"),
        }
        for flag, value in flags.items():
            if value is None:
                continue
            if flag not in mapping:
                raise ConfigurationError(f"Unknown override: {flag}")
            target, attr = mapping[flag]
            setattr(target, attr, value)
        self._validate_configuration()

    def _validate_configuration(self):
        """Validate configuration settings"""
        errors = []

        if not isinstance(self.seed, int) or not 0 <= self.seed < SEED_LIMIT:
            errors.append(f"seed must be an integer in [0, 2^64), got {self.seed}")
        if not isinstance(self.tol, (int, float)) or not self.tol > 0:
            errors.append(f"tol must be positive, got {self.tol}")
        if not isinstance(self.threads, int) or self.threads < 1:
            errors.append(f"threads must be >= 1, got {self.threads}")

        if self.schedule.kind not in SCHEDULE_KINDS:
            errors.append(f"Unknown schedule kind: {self.schedule.kind}")
        else:
            for label, builder in (("schedule", self.build_schedule), ("del schedule", self.build_del_schedule)):
                try:
                    builder()
                except (LabError, TypeError, ValueError) as e:
                    errors.append(f"Invalid {label}: {e}")

        sampling = self.sampling
        if sampling.samples < 1 or sampling.streams < 0 or sampling.depth < 1:
            errors.append("sampling needs samples >= 1, streams >= 0 and depth >= 1")
        if not 0 < sampling.batch_depth <= MC_MAX_DEPTH:
            errors.append(f"batch_depth must lie in (0, {MC_MAX_DEPTH}], got {sampling.batch_depth}")
        if not 0 < sampling.cylinder_length <= min(sampling.batch_depth, 20):
            errors.append(f"cylinder_length must lie in (0, min(batch_depth, 20)], got {sampling.cylinder_length}")
        if len(sampling.ell_range) != 2 or not 1 <= sampling.ell_range[0] <= sampling.ell_range[1]:
            errors.append(f"ell_range must be [lo, hi] with 1 <= lo <= hi, got {sampling.ell_range}")

        fourier = self.fourier
        if fourier.backend not in ("auto", "mpmath", "float64"):
            errors.append(f"Unknown Fourier backend: {fourier.backend}")
        try:
            kappa = as_fraction(fourier.kappa)
            if not 0 < kappa < 1:
                errors.append(f"kappa must lie in (0, 1), got {fourier.kappa}")
        except (TypeError, ValueError, ZeroDivisionError):
            errors.append(f"kappa is not a number: {fourier.kappa}")
        if any(ell < 2 for ell in fourier.eta_ranges) or fourier.random_per_range < 0:
            errors.append("eta_ranges need l >= 2 and random_per_range must be >= 0")
        if fourier.mc_samples and fourier.mc_samples < 1000:
            errors.append(f"mc_samples must be 0 or at least 1000, got {fourier.mc_samples}")

        weyl = self.weyl
        if any(b < 2 for b in weyl.bases) or weyl.H < 1 or weyl.N < 1 or weyl.precision < 1 or weyl.block_k < 1:
            errors.append("weyl needs bases >= 2 and positive H, N, precision, block_k")
        if weyl.x_num is not None and (weyl.x_den < 1 or not 0 <= weyl.x_num < weyl.x_den):
            errors.append(f"weyl x = {weyl.x_num}/{weyl.x_den} must lie in [0, 1)")

        if self.certify.b < 2 or self.certify.b % 2 or self.certify.ell < 2:
            errors.append(f"certify needs an even b >= 2 and ell >= 2, got b={self.certify.b}, ell={self.certify.ell}")

        del_cfg = self.del_
        if del_cfg.h == 0 or del_cfg.r < 3 or del_cfg.r % 2 == 0 or del_cfg.N_max < 1:
            errors.append(f"del needs h != 0, odd r >= 3 and N_max >= 1, got h={del_cfg.h}, r={del_cfg.r}")

        verify = self.verify
        try:
            alpha = as_fraction(verify.alpha)
            if not schmidt_alpha_ok(alpha):
                errors.append(f"alpha={verify.alpha} fails 0 < a < 1/4 and 2^(1/8) > (2a)^a (1-2a)^(1/2-a)")
        except (TypeError, ValueError, ZeroDivisionError):
            errors.append(f"alpha is not a number: {verify.alpha}")
        for label, value in (("del gamma", del_cfg.gamma), ("verify gamma", verify.gamma)):
            try:
                if as_fraction(value) <= 1:
                    errors.append(f"{label} must exceed 1, got {value}")
            except (TypeError, ValueError, ZeroDivisionError):
                errors.append(f"{label} is not a number: {value}")
        if verify.k_max < 1 or verify.cosine_samples < 0 or verify.lyons_samples < 0 or verify.e_block_N < 1:
            errors.append("verify needs k_max >= 1, e_block_N >= 1 and nonnegative sample counts")
        if any(r < 3 or r % 2 == 0 for r in verify.r_values):
            errors.append(f"r_values must be odd and >= 3, got {verify.r_values}")
        if any(abs(rho) < 2 for rho in verify.rho_values):
            errors.append(f"rho_values need |rho| >= 2, got {verify.rho_values}")
        if any(ell < 2 for ell in verify.lyons_ells):
            errors.append(f"lyons_ells need l >= 2, got {verify.lyons_ells}")

        if self.output.format not in OUTPUT_FORMATS:
            errors.append(f"Unknown output format: {self.output.format}")
        if self.logging.level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"Unknown log level: {self.logging.level}")

        if errors:
            error_message = "Configuration validation failed:\n" + "\n".join(f"- {error}" for error in errors)
            logger.error(error_message)
            raise ConfigurationError(error_message)
        logger.debug("Configuration validation passed")

    # Derived objects
    def build_schedule(self) -> ParamSchedule:
        s = self.schedule
        return _build_schedule(s.kind, s.K_base, s.K, s.eps, s.max_K)

    def build_del_schedule(self) -> ParamSchedule:
        if self.del_.K is None:
            return self.build_schedule()
        return _build_schedule("explicit", None, self.del_.K, self.del_.eps, self.schedule.max_K)

    def measure_spec(self) -> MeasureSpec:
        return MeasureSpec(self.build_schedule())

    def alpha(self) -> Fraction:
        return as_fraction(self.verify.alpha)

    # Serialization
    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"seed": self.seed, "tol": self.tol, "threads": self.threads}
        for name in SECTIONS:
            data[name] = asdict(self.section(name))
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        config = cls(environment=False)
        config._apply_config_data(data)
        config._validate_configuration()
        return config

    def config_hash(self) -> str:
        """SHA-256 of the canonical configuration; threads, logging and output paths do not affect results."""
        data = self.to_dict()
        data.pop("threads")
        data.pop("logging")
        data["output"].pop("out_dir")
        data["output"].pop("cache_path")
        return content_hash(data)


# Global configuration instance, created on first use
_config: Optional[Config] = None


def get_config(config_file: Optional[str] = None) -> Config:
    """Get the global configuration instance"""
    global _config
    if _config is None or config_file is not None:
        _config = Config(config_file)
    return _config
