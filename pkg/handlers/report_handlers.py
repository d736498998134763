import csv
import io
import json
import logging
import os
import shutil
import tempfile
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from utils import fraction_str, report_header

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """Floats keep repr precision, big integers become decimal strings, rationals "p/q"."""
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Fraction):
        return fraction_str(value)
    if isinstance(value, (np.integer,)):
        value = int(value)
    if isinstance(value, int):
        return value if abs(value) < (1 << 53) else str(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return str(value)


def csv_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, Fraction):
        return fraction_str(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def atomic_write_text(path: Path, text: str):
    """Write through a temporary file in the target directory, then move it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_filename = None
    try:
        with tempfile.NamedTemporaryFile(mode="w", delete=False, suffix=".tmp", dir=str(path.parent),
                                         encoding="utf-8", newline="") as temp_file:
            temp_file.write(text)
            temp_filename = temp_file.name
        shutil.move(temp_filename, str(path))
        logger.debug(f"Wrote {path} (atomic write)")
    except Exception as e:
        logger.error(f"Failed to write {path}: {e}")
        if temp_filename and os.path.exists(temp_filename):
            os.unlink(temp_filename)
        raise


class ReportWriter:
    """Writes the tables and documents of one command under out_dir."""

    def __init__(self, out_dir: str, fmt: str, config_hash: str, command: str):
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.header = report_header(config_hash, command)
        self.written: List[Path] = []

    def table(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        rows = [list(row) for row in rows]
        if self.fmt == "json":
            payload = {"header": self.header, "columns": list(columns), "rows": to_jsonable(rows)}
            return self._write(f"{name}.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
        buffer = io.StringIO()
        for key, value in sorted(self.header.items()):
            buffer.write(f"# {key}={value}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([csv_cell(cell) for cell in row])
        return self._write(f"{name}.csv", buffer.getvalue())

    def document(self, name: str, data: Dict[str, Any]) -> Path:
        payload = {"header": self.header, **to_jsonable(data)}
        return self._write(f"{name}.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")

    def _write(self, filename: str, text: str) -> Path:
        path = self.out_dir / filename
        atomic_write_text(path, text)
        self.written.append(path)
        return path


def read_csv_table(path: Path) -> List[List[str]]:
    """Rows of a report CSV without its comment header (column row first)."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.reader(lines))
