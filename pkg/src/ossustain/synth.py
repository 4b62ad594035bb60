"""Synthetic project traces with a tunable sustainability signal.

At ``signal = 0`` graduated and retired projects are drawn from the same
process. Raising the signal gives graduated projects more email traffic,
larger mailing-list and committer teams, steadier activity and shorter
incubations, while retired projects shrink and turn bursty.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .events import add_months, month_start
from .ingest import CommitRecord, RawMessage, write_commit_table, write_mbox

FIRST_NAMES = ("Ada", "Bruno", "Chen", "Dana", "Emeka", "Farah", "Goran", "Hana", "Ivan", "Jun",
               "Kira", "Luis", "Mona", "Nils", "Omar", "Pia", "Quinn", "Rosa", "Sven", "Tara")
LAST_NAMES = ("Abe", "Berg", "Costa", "Diaz", "Eze", "Fox", "Gupta", "Holm", "Ito", "Jensen",
              "Khan", "Lund", "Moreau", "Novak", "Okafor", "Petrov", "Quist", "Rossi", "Silva", "Tanaka")
SOURCE_EXT = (".java", ".py", ".c", ".scala", ".js")
NONSOURCE_FILES = ("README.md", "pom.xml", "docs/guide.txt", "site/logo.png")


@dataclass
class SynthConfig:
    n_projects: int = 200
    min_months: int = 6
    max_months: int = 30
    label_prior: float = 0.79
    signal: float = 1.0
    seed: int = 0
    svn_notification_rate: float = 0.2
    nonsource_commit_rate: float = 0.1
    alias_rate: float = 0.2

    def __post_init__(self) -> None:
        if not 0 < self.label_prior < 1:
            raise ValueError("label_prior must be in (0, 1)")
        if not 0 <= self.signal <= 1:
            raise ValueError("signal must be in [0, 1]")
        if self.min_months < 1 or self.max_months < self.min_months:
            raise ValueError("bad months range")


@dataclass
class _Dev:
    name: str
    email: str
    alias_name: str | None = None
    alias_email: str | None = None

    def identity(self, rng: np.random.Generator) -> tuple[str, str]:
        if self.alias_email and rng.random() < 0.3:
            return self.alias_name, self.alias_email
        return self.name, self.email


def _team(rng: np.random.Generator, pid: str, size: int, alias_rate: float, offset: int) -> list[_Dev]:
    devs = []
    for k in range(size):
        first = FIRST_NAMES[(offset + k) % len(FIRST_NAMES)]
        last = LAST_NAMES[(offset + 7 * k + k // len(FIRST_NAMES)) % len(LAST_NAMES)]
        handle = f"{first}.{last}{offset + k}".lower()
        dev = _Dev(f"{first} {last}{offset + k}", f"{handle}@{pid}.example.org")
        if rng.random() < alias_rate:
            dev.alias_name = f"{last}{offset + k}, {first}"
            dev.alias_email = f"{handle}@mail.example.com"
        devs.append(dev)
    return devs


def _times(rng: np.random.Generator, n: int, lo: datetime, hi: datetime, bursty: bool, used: set) -> list[datetime]:
    span = int((hi - lo).total_seconds())
    if bursty:
        width = span // 4
        offset = int(rng.integers(0, span - width))
        lo_s, hi_s = offset, offset + width
    else:
        lo_s, hi_s = 0, span
    out = []
    for _ in range(n):
        while True:
            s = int(rng.integers(lo_s, hi_s))
            if s not in used:
                used.add(s)
                break
        out.append(lo + timedelta(seconds=s))
    return sorted(out)


def _lerp(base: float, target: float, s: float) -> float:
    return base + s * (target - base)


def _project(cfg: SynthConfig, idx: int, root: Path) -> dict:
    rng = np.random.default_rng([cfg.seed, idx])
    pid = f"proj{idx:03d}"
    s = cfg.signal
    label = int(rng.random() < cfg.label_prior)
    grad = label == 1
    shift = int(round(8 * s))
    lo_len, hi_len = (cfg.min_months, max(cfg.min_months, cfg.max_months - shift)) if grad else (
        min(cfg.max_months, cfg.min_months + shift), cfg.max_months)
    n_months = int(rng.integers(lo_len, hi_len + 1))
    start = (int(rng.integers(2005, 2016)), int(rng.integers(1, 13)))

    email_team = _team(rng, pid, int(round(_lerp(6, 12 if grad else 3, s))), cfg.alias_rate, 0)
    commit_team = email_team[: int(round(_lerp(4, 6 if grad else 2, s)))]
    email_rate = _lerp(15, 30 if grad else 5, s)
    commit_rate = _lerp(8, 12 if grad else 4, s)
    burst_p = 0.0 if grad else s
    pool = [f"trunk/src/{pid}/mod{k % 5}/File{k}{SOURCE_EXT[k % len(SOURCE_EXT)]}" for k in range(30)]

    used: set = set()
    mbox_months: dict[str, list[RawMessage]] = {}
    commits: list[CommitRecord] = []
    recent: list[RawMessage] = []
    counts = {"emails": 0, "broadcast": 0, "commits": 0, "commits_nonsource": 0}
    msg_no = 0
    for mi in range(n_months):
        y, m = add_months(*start, mi)
        lo = month_start(y, m)
        hi = month_start(*add_months(y, m, 1))
        key = f"{y:04d}{m:02d}"
        month_msgs: list[RawMessage] = []

        n_emails = int(rng.poisson(email_rate))
        for ts in _times(rng, n_emails, lo, hi, rng.random() < burst_p, used):
            dev = email_team[int(rng.integers(len(email_team)))]
            name, addr = dev.identity(rng)
            parent = None
            if recent and rng.random() < 0.6:
                parent = recent[int(rng.integers(max(0, len(recent) - 20), len(recent)))]
            msg_no += 1
            msg = RawMessage(
                message_id=f"{pid}.{msg_no}@lists.example.org",
                in_reply_to=parent.message_id if parent else None,
                references=(parent.message_id,) if parent else (),
                sender_name=name,
                sender_email=addr,
                timestamp=ts,
                subject=("Re: " + parent.subject) if parent else f"Discuss topic {msg_no}",
                body=f"Message {msg_no} for {pid}.",
            )
            recent.append(msg)
            month_msgs.append(msg)
            counts["emails"] += 1

        for ts in _times(rng, int(rng.integers(1, 3)), lo, hi, False, used):
            msg_no += 1
            month_msgs.append(
                RawMessage(f"{pid}.{msg_no}@issues.example.org", None, (), "Jira", "jira@apache.org", ts,
                           f"[jira] Created: ({pid.upper()}-{msg_no}) Automated issue", "Issue body.")
            )
            counts["broadcast"] += 1

        n_commits = int(rng.poisson(commit_rate))
        for ts in _times(rng, n_commits, lo, hi, rng.random() < burst_p, used):
            dev = commit_team[int(rng.integers(len(commit_team)))]
            if rng.random() < cfg.nonsource_commit_rate:
                files = tuple(sorted({NONSOURCE_FILES[int(k)] for k in rng.integers(0, len(NONSOURCE_FILES), 2)}))
                counts["commits_nonsource"] += 1
            else:
                picks = rng.choice(len(pool), size=int(rng.integers(1, 4)), replace=False)
                files = tuple(pool[int(k)] for k in sorted(picks))
                if rng.random() < 0.1:
                    files = tuple(f.replace("trunk/", "branches/feature-x/", 1) for f in files)
                counts["commits"] += 1
            if rng.random() < cfg.svn_notification_rate:
                committer = dev.email.split("@")[0]
                msg_no += 1
                body = "\n".join(
                    [f"Author: {committer}", f"Date: {ts.isoformat()}", f"New Revision: {msg_no}", "", "Log:",
                     "Synthetic change", "", "Modified:"]
                    + [f"    incubator/{pid}/{f}" for f in files]
                )
                month_msgs.append(
                    RawMessage(f"{pid}.{msg_no}@commits.example.org", None, (), committer,
                               f"{committer}@apache.org", ts, f"svn commit: r{msg_no} - {pid}", body)
                )
                counts["broadcast"] += 1
            else:
                commits.append(CommitRecord(dev.name, dev.email, ts, files))
        mbox_months[key] = sorted(month_msgs, key=lambda r: (r.timestamp, r.message_id))

    pdir = root / pid
    for key, msgs in mbox_months.items():
        if msgs:
            path = pdir / "dev" / f"{key}.mbox"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(write_mbox(msgs))
    pdir.mkdir(parents=True, exist_ok=True)
    (pdir / "commits.csv").write_text(write_commit_table(commits), encoding="utf-8")
    end = add_months(*start, n_months - 1)
    return {
        "project_id": pid,
        "label": label,
        "start": f"{start[0]:04d}-{start[1]:02d}",
        "end": f"{end[0]:04d}-{end[1]:02d}",
        "months": n_months,
        **counts,
    }


def generate(config: SynthConfig, out_dir: Path) -> list[dict]:
    """Write a corpus (per-project mboxes and commit tables, labels.csv, synth_manifest.json)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    projects = [_project(config, i, out_dir) for i in range(config.n_projects)]
    lines = ["project_id,label,start,end"] + [
        f"{p['project_id']},{p['label']},{p['start']},{p['end']}" for p in projects
    ]
    (out_dir / "labels.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest = {"config": asdict(config), "projects": projects}
    (out_dir / "synth_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return projects
