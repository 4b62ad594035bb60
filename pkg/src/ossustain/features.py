"""Monthly socio-technical feature sequences, scaling, Lasso selection and group tests."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .events import COMMIT, EMAIL, ActivityEvent, add_months, month_key, month_start
from .networks import MonthlyNetworks, build_social, build_technical, metrics, strip_branch

FEATURES = (
    "num_act_devs",
    "num_commits",
    "num_emails",
    "num_files",
    "c_interruption",
    "e_interruption",
    "top_c_fract",
    "top_e_fract",
    "c_nodes",
    "c_edges",
    "c_c_coef",
    "c_long_tail",
    "c_mean_degree",
    "e_nodes",
    "e_edges",
    "e_c_coef",
    "e_long_tail",
    "e_mean_degree",
)
N_FEATURES = len(FEATURES)
COL = {name: i for i, name in enumerate(FEATURES)}

GROUP_STATS_COLUMNS = ("feature", "mean_grad", "mean_ret", "t", "p")


@dataclass
class FeatureConfig:
    clustering: str = "transitivity"  # or "mean_local"
    cumulative_devs: bool = False
    top_fraction: float = 0.10
    top_gaps: int = 3


@dataclass
class FeatureSequence:
    project_id: str
    label: int
    months: np.ndarray  # (n_months, 18), columns in FEATURES order
    flags: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.months = np.asarray(self.months, dtype=float).reshape(-1, N_FEATURES)

    def __len__(self) -> int:
        return self.months.shape[0]


def _seconds(t) -> float:
    return t.timestamp() if isinstance(t, datetime) else float(t)


def interruption_score(timestamps: Iterable, start, end, top: int = 3) -> float:
    """Share of the window covered by its ``top`` longest activity gaps.

    Gaps include the lead-in from ``start`` to the first event and the
    tail from the last event to ``end``. An empty window scores 1.0.
    """
    lo, hi = _seconds(start), _seconds(end)
    if hi <= lo:
        raise ValueError("window end must be after start")
    ts = sorted(t for t in map(_seconds, timestamps) if lo <= t <= hi)
    if not ts:
        return 1.0
    points = [lo, *ts, hi]
    gaps = sorted((b - a for a, b in zip(points, points[1:])), reverse=True)
    return min(1.0, sum(gaps[:top]) / (hi - lo))


def top_fraction(counts: Iterable[float], share: float = 0.10) -> float:
    """Fraction of activity done by the top ``share`` of active contributors.

    Returns 0.0 when there is no activity at all.
    """
    values = sorted((c for c in counts if c > 0), reverse=True)
    total = sum(values)
    if total <= 0:
        return 0.0
    k = max(1, math.ceil(share * len(values)))
    return sum(values[:k]) / total


def month_windows(start: tuple[int, int], n_months: int) -> list[tuple[datetime, datetime]]:
    out = []
    for i in range(n_months):
        y, m = add_months(*start, i)
        ny, nm = add_months(y, m, 1)
        out.append((month_start(y, m), month_start(ny, nm)))
    return out


def bucket_events(
    events: Iterable[ActivityEvent], start: tuple[int, int], n_months: int
) -> list[list[ActivityEvent]]:
    """Split events into UTC calendar months of the incubation window."""
    buckets: list[list[ActivityEvent]] = [[] for _ in range(n_months)]
    base = start[0] * 12 + start[1] - 1
    for e in events:
        y, m = month_key(e.timestamp)
        idx = y * 12 + m - 1 - base
        if 0 <= idx < n_months:
            buckets[idx].append(e)
    return buckets


def _event_order(e: ActivityEvent):
    return (e.timestamp, e.kind, e.contributor, e.message_id, e.files)


def build_monthly_networks(
    project_id: str,
    events: Sequence[ActivityEvent],
    start: tuple[int, int],
    n_months: int,
    unresolved: list | None = None,
) -> list[MonthlyNetworks]:
    sender_of: dict[str, int] = {}
    for e in sorted((e for e in events if e.kind == EMAIL), key=_event_order):
        sender_of.setdefault(e.message_id, e.contributor)
    out = []
    for idx, bucket in enumerate(bucket_events(events, start, n_months)):
        bucket = sorted(bucket, key=_event_order)
        social = build_social((e for e in bucket if e.kind == EMAIL), sender_of, unresolved)
        technical = build_technical(e for e in bucket if e.kind == COMMIT)
        out.append(MonthlyNetworks(project_id, idx, social, technical))
    return out


def assemble(
    project_id: str,
    label: int,
    events: Sequence[ActivityEvent],
    start: tuple[int, int],
    n_months: int,
    networks: Sequence[MonthlyNetworks] | None = None,
    config: FeatureConfig | None = None,
) -> FeatureSequence:
    """Build the months x 18 feature matrix for one project."""
    config = config or FeatureConfig()
    if n_months < 1:
        raise ValueError("a project needs at least one month")
    if networks is None:
        networks = build_monthly_networks(project_id, events, start, n_months)
    windows = month_windows(start, n_months)
    rows = np.zeros((n_months, N_FEATURES))
    flags = []
    seen_devs: set[int] = set()
    for idx, bucket in enumerate(bucket_events(events, start, n_months)):
        emails = [e for e in bucket if e.kind == EMAIL]
        commits = [e for e in bucket if e.kind == COMMIT]
        devs = {e.contributor for e in bucket}
        seen_devs |= devs
        lo, hi = windows[idx]
        files = {strip_branch(f) for c in commits for f in c.files}
        c_counts = Counter(c.contributor for c in commits)
        e_counts = Counter(e.contributor for e in emails)
        if not commits:
            flags.append((idx, "top_c_fract_undefined"))
        if not emails:
            flags.append((idx, "top_e_fract_undefined"))
        c_m = metrics(networks[idx].technical, config.clustering)
        e_m = metrics(networks[idx].social, config.clustering)
        row = rows[idx]
        row[COL["num_act_devs"]] = len(seen_devs) if config.cumulative_devs else len(devs)
        row[COL["num_commits"]] = len(commits)
        row[COL["num_emails"]] = len(emails)
        row[COL["num_files"]] = len(files)
        row[COL["c_interruption"]] = interruption_score([c.timestamp for c in commits], lo, hi, config.top_gaps)
        row[COL["e_interruption"]] = interruption_score([e.timestamp for e in emails], lo, hi, config.top_gaps)
        row[COL["top_c_fract"]] = top_fraction(c_counts.values(), config.top_fraction)
        row[COL["top_e_fract"]] = top_fraction(e_counts.values(), config.top_fraction)
        for prefix, m in (("c", c_m), ("e", e_m)):
            row[COL[f"{prefix}_nodes"]] = m.nodes
            row[COL[f"{prefix}_edges"]] = m.edges
            row[COL[f"{prefix}_c_coef"]] = m.clustering_coef
            row[COL[f"{prefix}_long_tail"]] = m.long_tail
            row[COL[f"{prefix}_mean_degree"]] = m.mean_degree
    return FeatureSequence(project_id, int(label), rows, flags)


def project_summary(
    events: Sequence[ActivityEvent],
    start: tuple[int, int],
    n_months: int,
    seq: FeatureSequence,
    config: FeatureConfig | None = None,
) -> dict[str, float]:
    """Whole-incubation values of the 18 features, comparable to a corpus summary table.

    Counts are totals over the incubation, interruptions and top fractions
    use the whole window, and network metrics are monthly means.
    """
    config = config or FeatureConfig()
    lo = month_windows(start, n_months)[0][0]
    hi = month_windows(start, n_months)[-1][1]
    inside = [e for bucket in bucket_events(events, start, n_months) for e in bucket]
    emails = [e for e in inside if e.kind == EMAIL]
    commits = [e for e in inside if e.kind == COMMIT]
    out = {name: float(seq.months[:, COL[name]].mean()) for name in FEATURES}
    out.update(
        num_act_devs=float(len({e.contributor for e in inside})),
        num_commits=float(len(commits)),
        num_emails=float(len(emails)),
        num_files=float(len({strip_branch(f) for c in commits for f in c.files})),
        c_interruption=interruption_score([c.timestamp for c in commits], lo, hi, config.top_gaps),
        e_interruption=interruption_score([e.timestamp for e in emails], lo, hi, config.top_gaps),
        top_c_fract=top_fraction(Counter(c.contributor for c in commits).values(), config.top_fraction),
        top_e_fract=top_fraction(Counter(e.contributor for e in emails).values(), config.top_fraction),
    )
    return out


@dataclass
class Scaler:
    mins: np.ndarray
    maxs: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - self.mins) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return self.mins + np.asarray(z, dtype=float) * (self.maxs - self.mins)


def fit_scaler(training: Sequence[FeatureSequence]) -> Scaler:
    if not training:
        raise ValueError("cannot fit a scaler on an empty training set")
    stacked = np.vstack([s.months for s in training])
    return Scaler(stacked.min(axis=0), stacked.max(axis=0))


def apply_scaler(scaler: Scaler, seq: FeatureSequence) -> FeatureSequence:
    return FeatureSequence(seq.project_id, seq.label, scaler.transform(seq.months), list(seq.flags))


@dataclass
class LassoConfig:
    lam: float = 0.001
    max_iter: int = 10_000
    tolerance: float = 1e-10


@dataclass
class LassoResult:
    coef: np.ndarray
    intercept: float
    selected: list[int]
    converged: bool
    n_iter: int


def soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lasso_select(X: np.ndarray, y: np.ndarray, config: LassoConfig | None = None) -> LassoResult:
    """Cyclic coordinate descent for (1/2n)||y - b0 - Xb||^2 + lam * ||b||_1.

    The intercept is unpenalized. Features with nonzero coefficients are
    reported as selected.
    """
    config = config or LassoConfig()
    if config.lam < 0:
        raise ValueError("lambda must be non-negative")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    col_sq = (Xc**2).sum(axis=0) / n
    beta = np.zeros(p)
    resid = yc.copy()
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0:
                continue
            old = beta[j]
            rho = Xc[:, j] @ resid / n + col_sq[j] * old
            new = soft_threshold(rho, config.lam) / col_sq[j]
            if new != old:
                resid -= Xc[:, j] * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < config.tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(f"lasso did not converge in {config.max_iter} iterations", RuntimeWarning)
    selected = [j for j in range(p) if abs(beta[j]) > 0]
    return LassoResult(beta, float(y_mean - x_mean @ beta), selected, converged, it)


def standardize(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def compare_groups(grad: Sequence[float], ret: Sequence[float]) -> tuple[float, float]:
    """Welch two-sample t-test; returns (t, two-sided p)."""
    a = np.asarray(grad, dtype=float)
    b = np.asarray(ret, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least two samples")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(se2)
    df = se2**2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    p = 2.0 * special.stdtr(df, -abs(t))
    return float(t), float(min(1.0, p))


def project_aggregates(seqs: Sequence[FeatureSequence]) -> np.ndarray:
    """Per-project mean of every monthly feature."""
    return np.vstack([s.months.mean(axis=0) for s in seqs])


def group_stats(seqs: Sequence[FeatureSequence]) -> list[dict]:
    """Graduated-vs-retired Welch tests on project-level means plus incubation length."""
    agg = project_aggregates(seqs)
    labels = np.array([s.label for s in seqs])
    lengths = np.array([len(s) for s in seqs], dtype=float)
    columns = [(name, agg[:, i]) for i, name in enumerate(FEATURES)]
    columns.append(("incubation_months", lengths))
    rows = []
    for name, values in columns:
        g, r = values[labels == 1], values[labels == 0]
        t, p = compare_groups(g, r)
        rows.append({"feature": name, "mean_grad": float(g.mean()), "mean_ret": float(r.mean()), "t": t, "p": p})
    return rows


def write_group_stats(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GROUP_STATS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_feature_csv(seq: FeatureSequence) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("month", *FEATURES))
    for i, row in enumerate(seq.months):
        writer.writerow([i, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def read_feature_csv(text: str, project_id: str, label: int) -> FeatureSequence:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header[1:]) != FEATURES:
        raise ValueError(f"feature columns do not match the frozen order: {header}")
    rows = [[float(v) for v in r[1:]] for r in reader if r]
    return FeatureSequence(project_id, label, np.array(rows).reshape(-1, N_FEATURES))


def save_corpus(seqs: Sequence[FeatureSequence], out_dir: Path) -> Path:
    """Write one CSV per project plus ``manifest.json``; returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for s in seqs:
        name = f"{s.project_id}.csv"
        (out_dir / name).write_text(write_feature_csv(s), encoding="utf-8")
        manifest.append({"project_id": s.project_id, "label": s.label, "months": len(s), "csv_path": name})
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_corpus(manifest_path: Path) -> list[FeatureSequence]:
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    out = []
    for entry in manifest:
        text = (manifest_path.parent / entry["csv_path"]).read_text(encoding="utf-8")
        seq = read_feature_csv(text, entry["project_id"], int(entry["label"]))
        if len(seq) != entry["months"]:
            raise ValueError(f"{entry['project_id']}: manifest says {entry['months']} months, csv has {len(seq)}")
        out.append(seq)
    return out
