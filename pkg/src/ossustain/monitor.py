"""Downturn alerts, bounce-up statistics and feature-targeted recommendations."""

from __future__ import annotations

import csv
import io
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .features import FEATURES

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.05
REVERSE_PREFIX = "Reverse of: "
SMALL_DROP, LARGE_DROP = "0-5%", ">5%"


@dataclass(frozen=True)
class DownturnEvent:
    project_id: str
    month: int  # 1-based month of the lowered forecast
    drop: float
    span: int


@dataclass(frozen=True)
class BounceUpStat:
    project_id: str
    month: int
    drop_bucket: str
    label: int
    months_to_recover: int | None  # None when the forecast never recovers


@dataclass
class Recommendation:
    project_id: str
    month: int
    top_positive: list[str]
    top_negative: list[str]
    actions: list[dict] = field(default_factory=list)
    warning: str = ""


def _drop(prev: float, cur: float, relative: bool) -> float:
    if relative:
        return (prev - cur) / prev if prev > 0 else 0.0
    return prev - cur


def detect_downturns(
    forecasts: Sequence[float],
    threshold: float = DEFAULT_THRESHOLD,
    relative: bool = False,
    project_id: str = "",
) -> list[DownturnEvent]:
    """Flag month m when the forecast fell by more than ``threshold`` since m-1 or m-2.

    Drops are absolute probability points unless ``relative`` is set. When
    both spans trigger at one month the larger drop is kept (span 1 on ties).
    """
    f = [float(v) for v in forecasts]
    events = []
    for m in range(2, len(f) + 1):
        cur = f[m - 1]
        best = None
        for span in (1, 2):
            if m - span < 1:
                continue
            d = _drop(f[m - 1 - span], cur, relative)
            if d > threshold and (best is None or d > best[0]):
                best = (d, span)
        if best is not None:
            events.append(DownturnEvent(project_id, m, best[0], best[1]))
    return events


def bounceup_events(
    forecasts: Sequence[float], label: int, project_id: str = "", threshold: float = DEFAULT_THRESHOLD
) -> list[BounceUpStat]:
    """Every month-over-month decrease and the months until the pre-drop level returns."""
    f = [float(v) for v in forecasts]
    out = []
    for m in range(2, len(f) + 1):
        before, after = f[m - 2], f[m - 1]
        if after >= before:
            continue
        bucket = LARGE_DROP if before - after > threshold else SMALL_DROP
        recover = next((k - m for k in range(m + 1, len(f) + 1) if f[k - 1] >= before), None)
        out.append(BounceUpStat(project_id, m, bucket, int(label), recover))
    return out


def bounceup_stats(
    trajectories: Mapping[str, Sequence[float]],
    labels: Mapping[str, int],
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[list[BounceUpStat], list[dict]]:
    """All drop events plus per-(bucket, label) median recovery and censored counts."""
    events = []
    for pid in sorted(trajectories):
        events.extend(bounceup_events(trajectories[pid], labels[pid], pid, threshold))
    summary = []
    for bucket in (SMALL_DROP, LARGE_DROP):
        for label in (1, 0):
            group = [e for e in events if e.drop_bucket == bucket and e.label == label]
            recovered = [e.months_to_recover for e in group if e.months_to_recover is not None]
            summary.append(
                {
                    "drop_bucket": bucket,
                    "label": label,
                    "drops": len(group),
                    "recovered": len(recovered),
                    "censored": len(group) - len(recovered),
                    "median_months_to_recover": float(statistics.median(recovered)) if recovered else None,
                }
            )
    return events, summary


def load_action_table(path: Path | None = None) -> dict[str, str]:
    """Read a ``feature<TAB>positive_action`` table; defaults to the bundled one."""
    if path is None:
        text = resources.files("ossustain").joinpath("data", "actions.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text), delimiter="\t")
    table = {row["feature"].strip(): row["positive_action"].strip() for row in reader}
    missing = [f for f in FEATURES if f not in table]
    if missing:
        raise ValueError(f"action table lacks features: {', '.join(missing)}")
    return table


def action_lookup(table: Mapping[str, str], feature: str, direction: str) -> str:
    if feature not in table:
        raise KeyError(f"no action for feature {feature!r}")
    if direction == "increase":
        return table[feature]
    if direction == "decrease":
        return REVERSE_PREFIX + table[feature]
    raise ValueError(f"direction must be 'increase' or 'decrease', not {direction!r}")


def recommend(
    event: DownturnEvent, medians: Sequence[float], table: Mapping[str, str], k: int = 3
) -> Recommendation:
    """Top-k most positive and most negative project-level medians with their actions."""
    med = np.asarray(medians, dtype=float)
    pos = sorted((j for j in range(len(FEATURES)) if med[j] > 0), key=lambda j: (-med[j], j))[:k]
    neg = sorted((j for j in range(len(FEATURES)) if med[j] < 0), key=lambda j: (med[j], j))[:k]
    rec = Recommendation(event.project_id, event.month, [FEATURES[j] for j in pos], [FEATURES[j] for j in neg])
    for name in rec.top_positive:
        rec.actions.append({"feature": name, "direction": "increase", "text": action_lookup(table, name, "increase")})
    for name in rec.top_negative:
        rec.actions.append({"feature": name, "direction": "decrease", "text": action_lookup(table, name, "decrease")})
    if len(pos) + len(neg) < 2 * k:
        rec.warning = f"only {len(pos) + len(neg)} nonzero medians available"
        log.warning("%s month %d: %s", event.project_id, event.month, rec.warning)
    return rec


def alert_line(event: DownturnEvent, rec: Recommendation | None) -> str:
    payload = asdict(event)
    payload["recommendation"] = None if rec is None else asdict(rec)
    return json.dumps(payload, sort_keys=True)


def check_schedule(n_months: int, milestones: Sequence[int] = (), double_cadence: bool = False) -> list[float]:
    """Monitoring check points in months; mid-month checks added within one month of a milestone."""
    points = [float(m) for m in range(1, n_months + 1)]
    if double_cadence:
        for m in range(1, n_months):
            if any(abs(m + 0.5 - ms) <= 1 for ms in milestones):
                points.append(m + 0.5)
    return sorted(points)
