"""File-based pipeline stages: ingest, features, train, forecast, explain, monitor, report.

Every stage reads its inputs from the output directory written by earlier
stages and writes its own files there; no state is kept between calls.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import explain as ex
from . import features as ft
from . import monitor as mon
from . import seqmodel as sm
from .events import COMMIT, EMAIL, ActivityEvent, load_events, month_key, months_between, save_events
from .identity import load_overrides, resolve_identities
from .ingest import (
    BotPatterns,
    IngestReport,
    build_reply_index,
    classify_bot_message,
    extract_commits,
    load_commit_table,
    parse_mbox,
)
from .networks import dump_networks

log = logging.getLogger(__name__)


class StageError(Exception):
    """User-facing input problem (missing file or upstream stage); CLI exit code 2."""


LABEL_WORDS = {"1": 1, "0": 0, "graduated": 1, "retired": 0}


@dataclass
class ProjectSource:
    project_id: str
    label: int
    mboxes: list[Path] = field(default_factory=list)
    commit_tables: list[Path] = field(default_factory=list)
    overrides: Path | None = None
    start: tuple[int, int] | None = None
    end: tuple[int, int] | None = None


@dataclass
class PipelineManifest:
    corpus: Path
    labels: Path
    output: Path
    projects: list[ProjectSource]
    config: dict = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Path, output: Path, labels: Path | None = None, config: dict | None = None):
        """Discover ``<corpus>/<project>/**/*.mbox`` and ``commits*.csv`` for every labelled project."""
        corpus = Path(corpus)
        labels = Path(labels) if labels else corpus / "labels.csv"
        if not corpus.is_dir():
            raise StageError(f"corpus directory not found: {corpus}")
        if not labels.is_file():
            raise StageError(f"labels file not found: {labels}")
        projects = []
        for row in _read_labels(labels):
            pdir = corpus / row["project_id"]
            src = ProjectSource(row["project_id"], row["label"], start=row.get("start"), end=row.get("end"))
            if pdir.is_dir():
                src.mboxes = sorted(pdir.rglob("*.mbox"))
                src.commit_tables = sorted(pdir.rglob("commits*.csv"))
                if (pdir / "identity_overrides.csv").is_file():
                    src.overrides = pdir / "identity_overrides.csv"
            projects.append(src)
        return cls(corpus, labels, Path(output), projects, dict(config or {}))

    @classmethod
    def from_json(cls, path: Path):
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        base = Path(path).parent
        labels = {r["project_id"]: r for r in _read_labels(base / data["labels"])}
        projects = []
        for pid, spec in sorted(data.get("projects", {}).items()):
            if pid not in labels:
                raise StageError(f"project {pid} has no label")
            src = ProjectSource(pid, labels[pid]["label"], start=labels[pid].get("start"), end=labels[pid].get("end"))
            src.mboxes = [base / p for p in spec.get("mbox", [])]
            src.commit_tables = [base / p for p in spec.get("commit_tables", [])]
            src.overrides = base / spec["overrides"] if spec.get("overrides") else None
            for p in [*src.mboxes, *src.commit_tables, *([src.overrides] if src.overrides else [])]:
                if not p.is_file():
                    raise StageError(f"{pid}: missing input file {p}")
            projects.append(src)
        return cls(base / data.get("corpus", "."), base / data["labels"], base / data["output"], projects,
                   data.get("config", {}))


def _parse_month(value: str | None) -> tuple[int, int] | None:
    if not value:
        return None
    y, m = value.strip()[:7].split("-")
    return int(y), int(m)


def _read_labels(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "project_id" not in reader.fieldnames or "label" not in reader.fieldnames:
            raise StageError(f"{path}: labels file needs project_id and label columns")
        rows = []
        for row in reader:
            word = row["label"].strip().lower()
            if word not in LABEL_WORDS:
                raise StageError(f"{path}: unknown label {row['label']!r} for {row['project_id']}")
            rows.append(
                {
                    "project_id": row["project_id"].strip(),
                    "label": LABEL_WORDS[word],
                    "start": _parse_month(row.get("start")),
                    "end": _parse_month(row.get("end")),
                }
            )
    return rows


# ----------------------------------------------------------------------------- ingest


def ingest_project(src: ProjectSource, patterns: BotPatterns | None = None):
    """Parse, filter and attribute one project's archives.

    Returns (events, contributors, report, (start, end)).
    """
    patterns = patterns or BotPatterns()
    report = IngestReport()
    messages = []
    seen: set[str] = set()
    for path in src.mboxes:
        with open(path, "rb") as fh:
            for m in parse_mbox(fh, report):
                if m.message_id in seen:
                    report.messages_dropped_duplicate += 1
                    report.messages_parsed -= 1
                    continue
                seen.add(m.message_id)
                messages.append(m)
    reply_index = build_reply_index(messages)
    commits = extract_commits(messages, report=report)
    for path in src.commit_tables:
        with open(path, newline="", encoding="utf-8") as fh:
            commits.extend(load_commit_table(fh, report=report))
    emails = []
    for m in messages:
        if classify_bot_message(m, reply_index, patterns):
            report.messages_dropped_broadcast += 1
        else:
            emails.append(m)

    overrides = None
    if src.overrides is not None:
        overrides = load_overrides(src.overrides.read_text(encoding="utf-8"))
    records = [(m.sender_name, m.sender_email) for m in emails] + [(c.author_name, c.author_email) for c in commits]
    identities = resolve_identities(records, overrides, report.large_identity_classes)

    known = {m.message_id for m in emails}
    events = []
    for m in emails:
        cid = identities[(m.sender_name, m.sender_email.lower())].id
        parent = m.in_reply_to or ""
        if parent and parent not in known:
            report.replies_unresolved += 1
        events.append(ActivityEvent(EMAIL, m.timestamp, cid, m.message_id, parent))
    for c in commits:
        cid = identities[(c.author_name, c.author_email.lower())].id
        events.append(ActivityEvent(COMMIT, c.timestamp, cid, files=c.files))
    events.sort(key=lambda e: (e.timestamp, e.kind, e.contributor, e.message_id, e.files))

    start, end = src.start, src.end
    if events and (start is None or end is None):
        start = start or month_key(events[0].timestamp)
        end = end or month_key(events[-1].timestamp)
    contributors = sorted({c.id: c for c in identities.values()}.values(), key=lambda c: c.id)
    return events, contributors, report, (start, end)


def run_ingest(manifest: PipelineManifest) -> dict:
    out = manifest.output / "events"
    out.mkdir(parents=True, exist_ok=True)
    total = IngestReport()
    index = []
    per_project = {}
    for src in manifest.projects:
        events, contributors, report, (start, end) = ingest_project(src)
        total.merge(report)
        per_project[src.project_id] = json.loads(report.to_json())
        if not events or start is None:
            log.warning("%s: no activity, excluded", src.project_id)
            continue
        save_events(out / src.project_id / "events.csv", events)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["contributor", "canonical_name", "emails"])
        for c in contributors:
            writer.writerow([c.id, c.canonical_name, "|".join(sorted(c.emails))])
        (out / src.project_id / "contributors.csv").write_text(buf.getvalue(), encoding="utf-8")
        index.append(
            {
                "project_id": src.project_id,
                "label": src.label,
                "start": f"{start[0]:04d}-{start[1]:02d}",
                "end": f"{end[0]:04d}-{end[1]:02d}",
                "months": months_between(start, end),
                "emails": sum(e.kind == EMAIL for e in events),
                "commits": sum(e.kind == COMMIT for e in events),
            }
        )
    (out / "index.json").write_text(json.dumps(index, indent=1) + "\n", encoding="utf-8")
    summary = {"total": json.loads(total.to_json()), "projects": per_project}
    (manifest.output / "ingest_report.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


# ----------------------------------------------------------------------------- features


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path}; run the {stage} stage first")
    return path


def run_features(
    out: Path,
    config: ft.FeatureConfig | None = None,
    lasso: ft.LassoConfig | None = None,
    dump_graphs: bool = False,
) -> list[ft.FeatureSequence]:
    config = config or ft.FeatureConfig()
    index = json.loads(_require(out / "events" / "index.json", "ingest").read_text())
    seqs = []
    excluded = []
    for entry in index:
        events = load_events(out / "events" / entry["project_id"] / "events.csv")
        start = _parse_month(entry["start"])
        nets = ft.build_monthly_networks(entry["project_id"], events, start, entry["months"])
        seq = ft.assemble(entry["project_id"], entry["label"], events, start, entry["months"], nets, config)
        if not seq.months[:, [ft.COL["num_commits"], ft.COL["num_emails"]]].any():
            excluded.append(entry["project_id"])
            continue
        if dump_graphs:
            for n in nets:
                dump_networks(n, out / "graphs")
        seqs.append(seq)
    if excluded:
        log.warning("excluded projects without activity in their window: %s", ", ".join(excluded))
    fdir = out / "features"
    ft.save_corpus(seqs, fdir)

    labels = [s.label for s in seqs]
    if labels.count(1) >= 2 and labels.count(0) >= 2:
        (fdir / "group_stats.csv").write_text(ft.write_group_stats(ft.group_stats(seqs)), encoding="utf-8")
        X = ft.standardize(ft.project_aggregates(seqs))
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            res = ft.lasso_select(X, np.array(labels, dtype=float), lasso)
        (fdir / "lasso.json").write_text(
            json.dumps(
                {
                    "lambda": (lasso or ft.LassoConfig()).lam,
                    "converged": res.converged,
                    "coefficients": {n: float(c) for n, c in zip(ft.FEATURES, res.coef)},
                    "selected": [ft.FEATURES[j] for j in res.selected],
                },
                indent=1,
            )
            + "\n",
            encoding="utf-8",
        )
    else:
        log.warning("group statistics skipped: need at least two graduated and two retired projects")
    (fdir / "excluded.json").write_text(json.dumps(excluded) + "\n", encoding="utf-8")
    return seqs


# ----------------------------------------------------------------------------- train / forecast


def run_train(out: Path, config: sm.TrainConfig | None = None) -> tuple[list[sm.RunResult], sm.EvalReport]:
    config = config or sm.TrainConfig()
    seqs = ft.load_corpus(_require(out / "features" / "manifest.json", "features"))
    try:
        runs, report = sm.train(seqs, config)
    except ValueError as exc:
        raise StageError(str(exc)) from exc
    mdir = out / "model"
    sm.save_checkpoint(mdir / "checkpoint.bin", runs[0].params, runs[0].scaler)
    split = {"train": runs[0].train_ids, "validation": runs[0].validation_ids, "test": runs[0].test_ids}
    (mdir / "split.json").write_text(json.dumps(split, indent=1) + "\n", encoding="utf-8")
    (mdir / "eval.csv").write_text(report.to_csv(), encoding="utf-8")
    runs_summary = [
        {
            "repeat": r,
            "epochs": len(run.history),
            "history": run.history,
            "final": run.final,
            "monthly": {str(m): v for m, v in run.monthly.items()},
        }
        for r, run in enumerate(runs)
    ]
    (mdir / "runs.json").write_text(json.dumps(runs_summary, indent=1) + "\n", encoding="utf-8")
    return runs, report


def _load_model(out: Path):
    return sm.load_checkpoint(_require(out / "model" / "checkpoint.bin", "train"))


def read_eval(out: Path) -> list[dict]:
    text = _require(out / "model" / "eval.csv", "train").read_text(encoding="utf-8")
    return list(csv.DictReader(io.StringIO(text)))


def run_forecast(out: Path) -> dict[str, sm.ForecastTrajectory]:
    params, scaler = _load_model(out)
    seqs = ft.load_corpus(_require(out / "features" / "manifest.json", "features"))
    trajectories = {s.project_id: sm.forecast_trajectory(params, scaler, s) for s in seqs}
    fdir = out / "forecast"
    fdir.mkdir(parents=True, exist_ok=True)
    lines = ["project_id,month,forecast"]
    for pid, tr in trajectories.items():
        lines += [f"{pid},{m},{float(p)!r}" for m, p in enumerate(tr.forecasts, start=1)]
    (fdir / "trajectories.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return trajectories


def month_table(out: Path, month: int) -> str:
    """Evaluation table for one incubation month (mean and stderr over repeats)."""
    rows = [r for r in read_eval(out) if r["month"] == str(month)]
    if not rows:
        return f"month {month}: no test project lasts that long\n"
    lines = [f"month {month} (repeats={rows[0]['repeats']})", "metric     mean    stderr"]
    for r in rows:
        lines.append(f"{r['metric']:<10} {float(r['mean']):.4f}  {float(r['stderr']):.4f}")
    return "\n".join(lines) + "\n"


def final_accuracy(out: Path) -> float:
    row = next(r for r in read_eval(out) if r["month"] == "final" and r["metric"] == "accuracy")
    return float(row["mean"])


def read_trajectories(path: Path) -> dict[str, list[float]]:
    out: dict[str, list[tuple[int, float]]] = {}
    with open(_require(path, "forecast"), newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["project_id"], []).append((int(row["month"]), float(row["forecast"])))
    return {pid: [v for _, v in sorted(vals)] for pid, vals in out.items()}


# ----------------------------------------------------------------------------- explain


def run_explain(out: Path, config: ex.ExplainerConfig | None = None, projects: Sequence[str] | None = None):
    config = config or ex.ExplainerConfig()
    params, scaler = _load_model(out)
    seqs = ft.load_corpus(_require(out / "features" / "manifest.json", "features"))
    split = json.loads(_require(out / "model" / "split.json", "train").read_text())
    train_ids = set(split["train"]) | set(split["validation"])
    training = np.vstack([scaler.transform(s.months) for s in seqs if s.project_id in train_ids])

    edir = out / "explain"
    edir.mkdir(parents=True, exist_ok=True)
    explanations = []
    for s in seqs:
        if projects is not None and s.project_id not in projects:
            continue
        if config.bucket_months is not None and len(s) < config.bucket_months:
            continue
        expl = ex.explain_instance(
            lambda batch: sm.predict_batch(params, batch),
            scaler.transform(s.months),
            training,
            config,
            s.project_id,
        )
        (edir / f"{s.project_id}.json").write_text(ex.dump_explanation(expl), encoding="utf-8")
        explanations.append(expl)
    coeffs = [ex.project_level(e) for e in explanations]
    (edir / "project_coefficients.csv").write_text(ex.write_project_coefficients(coeffs), encoding="utf-8")
    if coeffs:
        (edir / "overall_signs.csv").write_text(ex.write_overall_signs(ex.overall_level(coeffs)), encoding="utf-8")
    lines = ["feature,q1,q2,q3,q4"]
    for name in ft.FEATURES:
        q = ex.quarter_coefficients(explanations, name)
        if q is not None:
            lines.append(",".join([name, *(repr(float(v)) for v in q)]))
    (edir / "quarter_coefficients.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return explanations


# ----------------------------------------------------------------------------- monitor / report


def run_monitor(
    out: Path,
    threshold: float = mon.DEFAULT_THRESHOLD,
    relative: bool = False,
    trajectories_path: Path | None = None,
    action_table: Path | None = None,
) -> list[mon.DownturnEvent]:
    trajectories = read_trajectories(trajectories_path or out / "forecast" / "trajectories.csv")
    labels = {}
    manifest = out / "features" / "manifest.json"
    if manifest.exists():
        labels = {e["project_id"]: e["label"] for e in json.loads(manifest.read_text())}
    coef_path = out / "explain" / "project_coefficients.csv"
    coeffs = ex.read_project_coefficients(coef_path.read_text()) if coef_path.exists() else {}
    table = mon.load_action_table(action_table)

    mdir = out / "monitor"
    mdir.mkdir(parents=True, exist_ok=True)
    alerts = []
    lines = []
    for pid in sorted(trajectories):
        for event in mon.detect_downturns(trajectories[pid], threshold, relative, pid):
            rec = mon.recommend(event, coeffs[pid].median, table) if pid in coeffs else None
            alerts.append(event)
            lines.append(mon.alert_line(event, rec))
    (mdir / "alerts.jsonl").write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    labelled = {pid: tr for pid, tr in trajectories.items() if pid in labels}
    events, summary = mon.bounceup_stats(labelled, labels, threshold)
    ev_lines = ["project_id,month,drop_bucket,label,months_to_recover"]
    for e in events:
        rec = "" if e.months_to_recover is None else str(e.months_to_recover)
        ev_lines.append(f"{e.project_id},{e.month},{e.drop_bucket},{e.label},{rec}")
    (mdir / "bounceup_events.csv").write_text("\n".join(ev_lines) + "\n", encoding="utf-8")
    sm_lines = ["drop_bucket,label,drops,recovered,censored,median_months_to_recover"]
    for row in summary:
        med = "" if row["median_months_to_recover"] is None else repr(row["median_months_to_recover"])
        sm_lines.append(
            f"{row['drop_bucket']},{row['label']},{row['drops']},{row['recovered']},{row['censored']},{med}"
        )
    (mdir / "bounceup_summary.csv").write_text("\n".join(sm_lines) + "\n", encoding="utf-8")
    return alerts


def run_report(out: Path) -> Path:
    """Collect plot-ready CSV series under ``<out>/report``."""
    rdir = out / "report"
    rdir.mkdir(parents=True, exist_ok=True)
    rows = read_eval(out)
    by_month: dict[str, dict[str, tuple[str, str]]] = {}
    for r in rows:
        if r["month"] != "final":
            by_month.setdefault(r["month"], {})[r["metric"]] = (r["mean"], r["stderr"])
    header = ["month"] + [f"{m}_{k}" for m in sm.METRIC_NAMES for k in ("mean", "stderr")]
    lines = [",".join(header)]
    for month in sorted(by_month, key=int):
        vals = by_month[month]
        lines.append(",".join([month] + [v for m in sm.METRIC_NAMES for v in vals[m]]))
    (rdir / "accuracy_by_month.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    trajectories = read_trajectories(out / "forecast" / "trajectories.csv")
    labels = {e["project_id"]: e["label"] for e in json.loads(_require(out / "features" / "manifest.json", "features").read_text())}
    for label, name in ((1, "graduated"), (0, "retired")):
        tl = ["project_id,month,forecast"]
        for pid in sorted(trajectories):
            if labels.get(pid) == label:
                tl += [f"{pid},{m},{v!r}" for m, v in enumerate(trajectories[pid], start=1)]
        (rdir / f"trajectories_{name}.csv").write_text("\n".join(tl) + "\n", encoding="utf-8")

    for src, dst in (
        (out / "monitor" / "bounceup_events.csv", "bounceup_events.csv"),
        (out / "monitor" / "bounceup_summary.csv", "bounceup_summary.csv"),
        (out / "explain" / "quarter_coefficients.csv", "quarter_coefficients.csv"),
        (out / "explain" / "overall_signs.csv", "overall_signs.csv"),
    ):
        if src.exists():
            (rdir / dst).write_text(src.read_text(encoding="utf-8"), encoding="utf-8")
        else:
            log.warning("report: %s not found, skipped", src)
    return rdir
