#!/usr/bin/env python3
"""
Rajchman Lab - Fourier Coefficient Cache
Line-delimited JSON store of evaluated mu_hat values with corruption
quarantine and an exclusive append lock.
"""

import json
import logging
import os
import shutil
import tempfile
import threading
import time
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import mpmath

from measure import FourierValue
from utils import CacheCorruptionError, LabError, format_float, safe_json_loads

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("sched_id", "eta", "tol", "method", "re", "im", "err", "blocks_used")

CacheKey = Tuple[str, int, str, str]


class CacheFileLock:
    """Exclusive lock file holding the owner's PID; stale locks are reclaimed."""

    def __init__(self, lock_file: str, timeout_seconds: float = 30.0, poll_seconds: float = 0.05):
        self.lock_file = lock_file
        self.pid = str(os.getpid())
        self.timeout_seconds = timeout_seconds
        self.poll_seconds = poll_seconds
        self._held = False

    def _owner_alive(self) -> bool:
        try:
            with open(self.lock_file, "r") as f:
                old_pid = int(f.read().strip() or "0")
        except (OSError, ValueError):
            return False
        if old_pid <= 0:
            return False
        try:
            os.kill(old_pid, 0)
        except ProcessLookupError:
            return False
        except PermissionError:
            return True
        return True

    def __enter__(self):
        deadline = time.monotonic() + self.timeout_seconds
        while True:
            try:
                fd = os.open(self.lock_file, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                with os.fdopen(fd, "w") as f:
                    f.write(self.pid)
                self._held = True
                logger.debug(f"Acquired cache lock {self.lock_file}")
                return self
            except FileExistsError:
                if not self._owner_alive():
                    logger.info(f"Stale cache lock found, removing {self.lock_file}")
                    try:
                        os.remove(self.lock_file)
                    except FileNotFoundError:
                        pass
                    continue
                if time.monotonic() > deadline:
                    raise LabError(f"Timed out waiting for cache lock {self.lock_file}")
                time.sleep(self.poll_seconds)

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()

    def cleanup(self):
        """Release the lock file if this process holds it."""
        if not self._held:
            return
        try:
            os.remove(self.lock_file)
        except FileNotFoundError:
            pass
        except Exception as e:
            logger.error(f"Error cleaning up cache lock: {e}")
        self._held = False


def tol_key(tol: float) -> str:
    return format_float(tol)


def dyadic_str(x: mpmath.mpf) -> str:
    """Exact "man*2^exp" form of a binary float."""
    x = mpmath.mpf(x) if not isinstance(x, mpmath.mpf) else x
    return f"{int(x.man)}*2^{int(x.exp)}"


def parse_dyadic(text: str) -> mpmath.mpf:
    man_text, sep, exp_text = text.partition("*2^")
    if not sep:
        raise ValueError(f"not a dyadic literal: {text!r}")
    man, exp = int(man_text), int(exp_text)
    with mpmath.workprec(max(53, man.bit_length() + 2)):
        return mpmath.ldexp(mpmath.mpf(man), exp)


def value_to_record(sched_id: str, tol: float, method: str, value: FourierValue) -> Dict[str, object]:
    return {
        "sched_id": sched_id,
        "eta": str(value.eta),
        "tol": tol_key(tol),
        "method": method,
        "re": dyadic_str(value.re),
        "im": dyadic_str(value.im),
        "err": format_float(value.err),
        "blocks_used": value.blocks_used,
    }


def record_to_value(record: Dict[str, object]) -> Tuple[CacheKey, FourierValue]:
    """Validate a cache record; raises CacheCorruptionError on any defect."""
    if not isinstance(record, dict) or set(record) != set(RECORD_FIELDS):
        raise CacheCorruptionError(f"unexpected record shape: {record!r}")
    try:
        eta = int(record["eta"])
        tol = float(record["tol"])
        re = parse_dyadic(str(record["re"]))
        im = parse_dyadic(str(record["im"]))
        err = float(record["err"])
        blocks_used = int(record["blocks_used"])
    except (TypeError, ValueError) as e:
        raise CacheCorruptionError(f"unparsable field: {e}") from e
    if not tol > 0 or err < 0 or blocks_used < 0:
        raise CacheCorruptionError(f"out-of-range field in {record!r}")
    if float(mpmath.hypot(re, im)) > 1 + err:
        raise CacheCorruptionError(f"|value| exceeds 1 + err for eta={eta}")
    key = (str(record["sched_id"]), eta, tol_key(tol), str(record["method"]))
    return key, FourierValue(eta=eta, re=re, im=im, err=err, blocks_used=blocks_used)


class FourierCache:
    """In-memory mu_hat memo backed by an append-only JSON-lines file."""

    def __init__(self, path: Optional[str] = None):
        self.path = Path(path) if path else None
        self._values: Dict[CacheKey, FourierValue] = {}
        self._pending: List[Dict[str, object]] = []
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.quarantined = 0

    @property
    def quarantine_path(self) -> Optional[Path]:
        return self.path.with_name(self.path.name + ".quarantine") if self.path else None

    @property
    def lock_path(self) -> Optional[str]:
        return str(self.path) + ".lock" if self.path else None

    def __len__(self) -> int:
        return len(self._values)

    def load(self) -> int:
        """Read the cache file; malformed lines are moved to the quarantine file."""
        if self.path is None or not self.path.exists():
            return 0
        with CacheFileLock(self.lock_path):
            good_lines, bad_lines = [], []
            with open(self.path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, start=1):
                    text = line.strip()
                    if not text:
                        continue
                    record = safe_json_loads(text)
                    try:
                        key, value = record_to_value(record)
                    except CacheCorruptionError as e:
                        logger.warning(f"Quarantining cache line {line_no}: {e}")
                        bad_lines.append(text)
                        continue
                    self._values[key] = value
                    good_lines.append(text)
            if bad_lines:
                self.quarantined += len(bad_lines)
                with open(self.quarantine_path, "a", encoding="utf-8") as q:
                    q.write("\n".join(bad_lines) + "\n")
                self._rewrite(good_lines)
        logger.info(f"Loaded {len(self._values)} cached coefficients from {self.path}"
                    + (f" ({self.quarantined} quarantined)" if self.quarantined else ""))
        return len(self._values)

    def _rewrite(self, lines: List[str]):
        """Atomically replace the cache file with the given lines."""
        temp_filename = None
        try:
            with tempfile.NamedTemporaryFile(mode="w", delete=False, suffix=".tmp",
                                             dir=str(self.path.parent), encoding="utf-8") as temp_file:
                temp_file.write("".join(line + "\n" for line in lines))
                temp_filename = temp_file.name
            shutil.move(temp_filename, str(self.path))
        except Exception as e:
            logger.error(f"Failed to rewrite cache: {e}")
            if temp_filename and os.path.exists(temp_filename):
                os.unlink(temp_filename)
            raise

    def get(self, sched_id: str, eta: int, tol: float, method: str) -> Optional[FourierValue]:
        value = self._values.get((sched_id, eta, tol_key(tol), method))
        with self._lock:
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
        return value

    def put(self, sched_id: str, tol: float, method: str, value: FourierValue):
        key = (sched_id, value.eta, tol_key(tol), method)
        with self._lock:
            if key in self._values:
                return
            self._values[key] = value
            self._pending.append(value_to_record(sched_id, tol, method, value))

    def flush(self) -> int:
        """Append pending records to the cache file under the exclusive lock."""
        if self.path is None or not self._pending:
            return 0
        with self._lock:
            pending, self._pending = self._pending, []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with CacheFileLock(self.lock_path):
            with open(self.path, "a", encoding="utf-8") as f:
                for record in pending:
                    f.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        logger.info(f"Appended {len(pending)} coefficients to {self.path}")
        return len(pending)
