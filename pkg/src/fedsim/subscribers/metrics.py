from __future__ import annotations

import json
import logging
from pathlib import Path

from ..events import FederationStarted, RoundFinished, Subscriber

logger = logging.getLogger(__name__)


def metrics_line(record, cumulative_bytes: int, wall_time: bool = False) -> dict:
    line = {
        "round": record.round,
        "accuracy": record.global_metrics.accuracy,
        "loss": record.global_metrics.loss,
        "sample_count": record.global_metrics.sample_count,
        "selected": list(record.selected_ids),
        "bytes_up": record.bytes_up,
        "bytes_down": record.bytes_down,
        "bytes_cumulative": cumulative_bytes,
    }
    if wall_time:
        line["wall_time"] = record.wall_time
    return line


class MetricsStore(Subscriber):
    """Appends one JSON object per finished round to a JSON-lines file.

    Wall-clock time is left out unless ``wall_time=True`` so that two runs
    with the same seed produce byte-identical files. When a run resumes from
    a checkpoint, lines past the resumed round are dropped before appending.
    """

    def __init__(self, path, wall_time: bool = False):
        self.path = Path(path)
        self.wall_time = wall_time
        self._fh = None

    def _open(self, resume_round: int):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        kept = []
        if resume_round > 0 and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip() and json.loads(line)["round"] <= resume_round:
                    kept.append(line)
        self._fh = open(self.path, "w", encoding="utf-8")
        for line in kept:
            self._fh.write(line + "\n")
        self._fh.flush()

    def on_event(self, event, ctx):
        if isinstance(event, FederationStarted):
            self._open(event.round)
        elif isinstance(event, RoundFinished):
            record = ctx.history[-1]
            line = metrics_line(record, event.cumulative_bytes, self.wall_time)
            self._fh.write(json.dumps(line, separators=(",", ":")) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_metrics(path) -> list:
    """Parse a metrics file; raises ``ValueError`` naming the first bad line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                for key in ("round", "accuracy", "loss", "bytes_cumulative"):
                    if key not in row:
                        raise ValueError(f"missing field {key!r}")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
            rows.append(row)
    return rows
