"""CSV and JSON artifacts: fixed float formatting, manifests next to every output."""

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from settings import get_version, git_describe

logger = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """17 significant digits, no locale; enough to round-trip a double."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, ".17g")


def _format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    _ensure_parent(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        count = 0
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
            count += 1
    logger.info(f"💾 Wrote {count} rows to {path}")
    return path


def read_csv(path: str) -> Tuple[List[str], List[List[str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        rows = [row for row in reader if row]
    return header, rows


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf/nan
        return value if math.isfinite(value) else format_float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_json(path: str, payload: Dict[str, Any]) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(payload), f, indent=2, ensure_ascii=False)
    logger.info(f"💾 Saved: {path}")
    return path


def manifest_path_for(path: str) -> str:
    root, _ = os.path.splitext(path)
    return f"{root}.manifest.json"


@dataclass
class RunManifest:
    """Everything needed to reproduce one CLI run."""

    command: str
    config: Dict[str, Any]
    seed: int
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    results: Dict[str, Any] = field(default_factory=dict)
    version: str = field(default_factory=get_version)
    git: str = field(default_factory=git_describe)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    wall_clock: float = 0.0
    _started: float = field(default_factory=time.time, repr=False)

    def finish(self) -> "RunManifest":
        self.wall_clock = time.time() - self._started
        return self

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.pop("_started", None)
        return payload

    def write(self, path: str) -> str:
        return write_json(path, self.to_dict())
