"""Resolved activity events and the on-disk event store."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

EMAIL = "email"
COMMIT = "commit"

EVENT_COLUMNS = ("kind", "timestamp", "contributor", "message_id", "in_reply_to", "files")


@dataclass(frozen=True)
class ActivityEvent:
    """One email or one commit attributed to a resolved contributor id."""

    kind: str
    timestamp: datetime
    contributor: int
    message_id: str = ""
    in_reply_to: str = ""
    files: tuple[str, ...] = ()


def month_key(ts: datetime) -> tuple[int, int]:
    ts = ts.astimezone(timezone.utc)
    return ts.year, ts.month


def month_start(year: int, month: int) -> datetime:
    return datetime(year, month, 1, tzinfo=timezone.utc)


def add_months(year: int, month: int, n: int) -> tuple[int, int]:
    idx = year * 12 + (month - 1) + n
    return idx // 12, idx % 12 + 1


def months_between(start: tuple[int, int], end: tuple[int, int]) -> int:
    """Number of calendar months from ``start`` through ``end`` inclusive."""
    return (end[0] * 12 + end[1]) - (start[0] * 12 + start[1]) + 1


def write_events(events: Iterable[ActivityEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for e in events:
        writer.writerow(
            [e.kind, e.timestamp.isoformat(), e.contributor, e.message_id, e.in_reply_to, "|".join(e.files)]
        )
    return buf.getvalue()


def read_events(text: str) -> list[ActivityEvent]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        out.append(
            ActivityEvent(
                kind=row["kind"],
                timestamp=datetime.fromisoformat(row["timestamp"]),
                contributor=int(row["contributor"]),
                message_id=row["message_id"],
                in_reply_to=row["in_reply_to"],
                files=tuple(f for f in row["files"].split("|") if f),
            )
        )
    return out


def save_events(path: Path, events: Iterable[ActivityEvent]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_events(events), encoding="utf-8")


def load_events(path: Path) -> list[ActivityEvent]:
    return read_events(path.read_text(encoding="utf-8"))
