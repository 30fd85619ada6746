from __future__ import annotations

import csv
import logging
from pathlib import Path

log = logging.getLogger(__name__)

COLUMNS = (
    "wall_time",
    "env_steps",
    "episodes",
    "loss",
    "epsilon",
    "train_return_mean",
    "eval_pol",
    "eval_return_mean",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class MetricsWriter:
    """Appends comma-separated rows to ``metrics.csv``; I/O errors only warn."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._last_steps = -1
        self._header_written = self.path.exists() and self.path.stat().st_size > 0

    def emit(self, record: dict) -> None:
        steps = int(record["env_steps"])
        if steps <= self._last_steps:
            raise ValueError(f"metrics rows must increase in env_steps ({steps} <= {self._last_steps})")
        self._last_steps = steps
        unknown = set(record) - set(COLUMNS)
        if unknown:
            raise ValueError(f"unknown metrics columns {sorted(unknown)}")
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                if not self._header_written:
                    w.writerow(COLUMNS)
                    self._header_written = True
                w.writerow([_fmt(record.get(c)) for c in COLUMNS])
        except OSError as exc:
            log.warning("could not write metrics row to %s: %s", self.path, exc)


def emit_metrics(writer: MetricsWriter, record: dict) -> None:
    writer.emit(record)


def read_metrics(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
