"""Per-round metrics rows and the CSV/JSON files they are written to."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path


@dataclass(frozen=True)
class RoundMetrics:
    """What one completed round looked like."""

    round: int
    global_accuracy: float
    submissions: int
    qualified_count: int
    rejected_count: int
    gas_used: int
    mean_quality: float | None
    threshold: float
    attacker_submissions: int = 0
    attackers_rejected: int = 0
    failed_devices: int = 0
    wall_time_ms: float | None = None


@dataclass(frozen=True, kw_only=True)
class MetricColumnDescription:
    """Describes one CSV column."""

    key: str
    value_fn: Callable[[RoundMetrics], Any]
    timing: bool = False


def _real(value: float | None) -> str:
    # repr round-trips floats exactly
    return "" if value is None else repr(float(value))


COLUMN_DESCRIPTIONS: tuple[MetricColumnDescription, ...] = (
    MetricColumnDescription(key="round", value_fn=lambda row: row.round),
    MetricColumnDescription(
        key="global_accuracy", value_fn=lambda row: _real(row.global_accuracy)
    ),
    MetricColumnDescription(key="submissions", value_fn=lambda row: row.submissions),
    MetricColumnDescription(key="qualified_count", value_fn=lambda row: row.qualified_count),
    MetricColumnDescription(key="rejected_count", value_fn=lambda row: row.rejected_count),
    MetricColumnDescription(key="gas_used", value_fn=lambda row: row.gas_used),
    MetricColumnDescription(key="mean_quality", value_fn=lambda row: _real(row.mean_quality)),
    MetricColumnDescription(key="threshold", value_fn=lambda row: _real(row.threshold)),
    MetricColumnDescription(
        key="attacker_submissions", value_fn=lambda row: row.attacker_submissions
    ),
    MetricColumnDescription(
        key="attackers_rejected", value_fn=lambda row: row.attackers_rejected
    ),
    MetricColumnDescription(key="failed_devices", value_fn=lambda row: row.failed_devices),
    MetricColumnDescription(
        key="wall_time_ms", value_fn=lambda row: _real(row.wall_time_ms), timing=True
    ),
)


def write_metrics_csv(
    path: Path, rows: Sequence[RoundMetrics], *, record_timing: bool = False
) -> None:
    """Write one header row and one row per round."""
    columns = [
        description
        for description in COLUMN_DESCRIPTIONS
        if record_timing or not description.timing
    ]
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([description.key for description in columns])
        for row in rows:
            writer.writerow([description.value_fn(row) for description in columns])


def read_metrics_csv(path: Path) -> list[dict[str, str]]:
    """Read a metrics file back as one dict per round."""
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def write_summary(path: Path, summary: dict[str, Any]) -> None:
    """Write the published summary as sorted, indented JSON."""
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_table(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    """Write dict rows as CSV, columns in first-row order."""
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
