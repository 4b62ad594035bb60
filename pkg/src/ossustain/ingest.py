"""Mailing-list and commit-record ingestion.

Turns mbox archives and commit tables into ``RawMessage`` and
``CommitRecord`` lists, dropping unreplied broadcast mail and commits that
only touch data/config/image files.
"""

from __future__ import annotations

import csv
import email
import email.errors
import email.policy
import io
import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from email.header import Header, decode_header, make_header
from email.utils import format_datetime, formataddr, parseaddr, parsedate_to_datetime
from pathlib import PurePosixPath
from typing import BinaryIO, Iterable, TextIO

# Data, text/config and image extensions whose commits are outliers.
NONSOURCE_EXTENSIONS = frozenset(
    {
        ".json", ".xml", ".yml", ".yaml", ".jar",
        ".config", ".info", ".ini", ".txt", ".md",
        ".jpg", ".gif", ".pdf", ".png",
    }
)

COMMIT_TABLE_COLUMNS = ("timestamp", "author_name", "author_email", "file_path")


class IngestError(Exception):
    """Fatal ingestion failure (unreadable stream, missing CSV column)."""


@dataclass(frozen=True)
class RawMessage:
    message_id: str
    in_reply_to: str | None
    references: tuple[str, ...]
    sender_name: str
    sender_email: str
    timestamp: datetime
    subject: str
    body: str = ""


@dataclass(frozen=True)
class CommitRecord:
    author_name: str
    author_email: str
    timestamp: datetime
    files: tuple[str, ...]


@dataclass
class IngestReport:
    messages_parsed: int = 0
    messages_dropped_broadcast: int = 0
    messages_dropped_malformed: int = 0
    messages_dropped_duplicate: int = 0
    commits_parsed: int = 0
    commits_dropped_nonsource: int = 0
    commits_dropped_unparseable: int = 0
    replies_unresolved: int = 0
    large_identity_classes: list = field(default_factory=list)

    def merge(self, other: "IngestReport") -> None:
        for name, value in asdict(other).items():
            if isinstance(value, list):
                getattr(self, name).extend(value)
            else:
                setattr(self, name, getattr(self, name) + value)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


@dataclass(frozen=True)
class BotPatterns:
    """Automated-sender heuristic; a match alone never drops a replied-to message."""

    subject_prefixes: tuple[str, ...] = ("svn commit:", "[jira]", "git commit:")
    sender_locals: tuple[str, ...] = ("jira", "buildbot", "hudson", "jenkins", "noreply")

    def matches(self, msg: RawMessage) -> bool:
        subject = msg.subject.strip().lower()
        if any(subject.startswith(p) for p in self.subject_prefixes):
            return True
        local = msg.sender_email.split("@", 1)[0].lower()
        return any(re.fullmatch(rf"{re.escape(p)}([-+._].*)?", local) for p in self.sender_locals)


DEFAULT_BOT_PATTERNS = BotPatterns()

_ID_RE = re.compile(r"<([^<>]+)>")
_FOLD_RE = re.compile(r"\r?\n(?=[ \t])")
_FROM_ESCAPED = re.compile(rb"^>(>*From )", re.MULTILINE)
_FROM_TO_ESCAPE = re.compile(rb"^(>*From )", re.MULTILINE)


def _unfold(value) -> str:
    return _FOLD_RE.sub("", str(value)) if value is not None else ""


def _decode_words(value: str) -> str:
    try:
        return str(make_header(decode_header(value)))
    except (UnicodeError, LookupError, email.errors.HeaderParseError):
        return value


def _normalize_id(value: str) -> str:
    value = value.strip()
    m = _ID_RE.search(value)
    return m.group(1).strip() if m else value


def _text_body(msg: email.message.Message) -> str:
    part = msg
    if msg.is_multipart():
        part = next(
            (p for p in msg.walk() if p.get_content_type() == "text/plain" and not p.is_multipart()),
            None,
        )
        if part is None:
            return ""
    payload = part.get_payload(decode=True)
    if payload is None:
        return ""
    charset = part.get_content_charset() or "utf-8"
    try:
        text = payload.decode(charset, errors="replace")
    except LookupError:
        text = payload.decode("utf-8", errors="replace")
    return text.replace("\r\n", "\n").rstrip("\n")


def _split_mbox(data: bytes) -> list[bytes]:
    blocks: list[bytes] = []
    current: list[bytes] | None = None
    for line in data.replace(b"\r\n", b"\n").split(b"\n"):
        if line.startswith(b"From "):
            if current is not None:
                blocks.append(b"\n".join(current))
            current = []
        elif current is not None:
            current.append(line)
    if current is not None:
        blocks.append(b"\n".join(current))
    return blocks


def _parse_block(block: bytes) -> RawMessage | None:
    block = _FROM_ESCAPED.sub(rb"\1", block)
    msg = email.message_from_bytes(block, policy=email.policy.compat32)
    message_id = _normalize_id(_unfold(msg.get("Message-ID", "")))
    raw_date = _unfold(msg.get("Date", "")).strip()
    if not message_id or not raw_date:
        return None
    try:
        ts = parsedate_to_datetime(raw_date)
    except (TypeError, ValueError, IndexError):
        return None
    if ts is None:
        return None
    ts = ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)

    name_raw, addr = parseaddr(_unfold(msg.get("From", "")))
    if not addr and not name_raw:
        return None
    references = tuple(m.strip() for m in _ID_RE.findall(_unfold(msg.get("References", ""))))
    in_reply_to = _unfold(msg.get("In-Reply-To", "")).strip()
    parent = _normalize_id(in_reply_to) if in_reply_to else (references[-1] if references else None)
    try:
        body = _text_body(msg)
    except Exception:  # body decoding is best effort; headers carry what we need
        body = ""
    return RawMessage(
        message_id=message_id,
        in_reply_to=parent or None,
        references=references,
        sender_name=_decode_words(name_raw).strip(),
        sender_email=addr.strip().lower(),
        timestamp=ts,
        subject=_decode_words(_unfold(msg.get("Subject", ""))).strip(),
        body=body,
    )


def parse_mbox(stream: BinaryIO | bytes, report: IngestReport | None = None) -> list[RawMessage]:
    """Parse an mbox byte stream into messages.

    Messages without a Message-ID, a parseable Date or a From header are
    dropped and counted as malformed; repeated Message-IDs keep the first
    occurrence.
    """
    if isinstance(stream, (bytes, bytearray)):
        data = bytes(stream)
    else:
        try:
            data = stream.read()
        except (OSError, ValueError) as exc:
            raise IngestError(f"unreadable mbox stream: {exc}") from exc
    report = report if report is not None else IngestReport()
    out: list[RawMessage] = []
    seen: set[str] = set()
    for block in _split_mbox(data):
        try:
            msg = _parse_block(block)
        except Exception:
            msg = None
        if msg is None:
            report.messages_dropped_malformed += 1
            continue
        if msg.message_id in seen:
            report.messages_dropped_duplicate += 1
            continue
        seen.add(msg.message_id)
        out.append(msg)
    report.messages_parsed += len(out)
    return out


def _encode_header(value: str) -> str:
    return Header(value, "utf-8").encode() if not value.isascii() else value


def write_mbox(messages: Iterable[RawMessage]) -> bytes:
    """Serialize messages as an mboxrd byte stream readable by ``parse_mbox``."""
    chunks: list[bytes] = []
    for m in messages:
        name = m.sender_name
        headers = [
            f"From {m.sender_email or 'unknown'} {m.timestamp.strftime('%a %b %d %H:%M:%S %Y')}",
            f"Message-ID: <{m.message_id}>",
        ]
        if m.in_reply_to:
            headers.append(f"In-Reply-To: <{m.in_reply_to}>")
        if m.references:
            headers.append("References: " + " ".join(f"<{r}>" for r in m.references))
        headers += [
            "From: " + (formataddr((name, m.sender_email), charset="utf-8") if name else m.sender_email),
            f"Date: {format_datetime(m.timestamp)}",
            f"Subject: {_encode_header(m.subject)}",
            "MIME-Version: 1.0",
            "Content-Type: text/plain; charset=utf-8",
            "Content-Transfer-Encoding: 8bit",
        ]
        head = "\n".join(headers).encode("utf-8")
        body = _FROM_TO_ESCAPE.sub(rb">\1", m.body.encode("utf-8"))
        chunks.append(head + b"\n\n" + body + b"\n\n")
    return b"".join(chunks)


def build_reply_index(messages: Iterable[RawMessage]) -> Counter:
    """Count direct replies per message id over one project's archive."""
    return Counter(m.in_reply_to for m in messages if m.in_reply_to)


def classify_bot_message(
    msg: RawMessage, reply_index: Counter, patterns: BotPatterns = DEFAULT_BOT_PATTERNS
) -> bool:
    """True for automated broadcast mail that nobody answered."""
    if reply_index.get(msg.message_id, 0) > 0:
        return False
    return patterns.matches(msg)


def is_source_file(path: str, blacklist: frozenset[str] = NONSOURCE_EXTENSIONS) -> bool:
    return PurePosixPath(path).suffix.lower() not in blacklist


def filter_source_files(files: Iterable[str], blacklist: frozenset[str] = NONSOURCE_EXTENSIONS) -> tuple[str, ...]:
    return tuple(f for f in files if is_source_file(f, blacklist))


_SVN_SECTIONS = re.compile(r"^(Added|Modified|Deleted|Removed|Copied|Replaced):\s*$")
_SVN_AUTHOR = re.compile(r"^Author:\s*(\S+)\s*$", re.MULTILINE)
_GIT_AUTHOR = re.compile(r"^Author:\s*(.*?)\s*<([^>]+)>\s*$", re.MULTILINE)
_GIT_STAT = re.compile(r"^\s*(\S.*?)\s+\|\s+(?:\d+|Bin\b)")
_GIT_COMMIT = re.compile(r"^commit [0-9a-f]{7,40}\s*$", re.MULTILINE)
_PATH_SUFFIX = re.compile(r"\s+\(.*\)\s*$")

COMMIT_SUBJECT_PREFIXES = ("svn commit:", "git commit:")


def is_commit_notification(msg: RawMessage) -> bool:
    subject = msg.subject.strip().lower()
    return any(subject.startswith(p) for p in COMMIT_SUBJECT_PREFIXES) or bool(_GIT_COMMIT.search(msg.body))


def parse_commit_body(body: str) -> tuple[str, str, list[str]] | None:
    """Recover (author_name, author_email, paths) from a commit notification body.

    Handles SVN-style ``Added:/Modified:`` path sections and git diffstat
    lines. Returns None when no author or no path can be found.
    """
    git_author = _GIT_AUTHOR.search(body)
    if git_author:
        name, addr = git_author.group(1).strip(), git_author.group(2).strip().lower()
    else:
        svn_author = _SVN_AUTHOR.search(body)
        if not svn_author:
            return None
        name = svn_author.group(1)
        addr = name.lower() if "@" in name else f"{name.lower()}@apache.org"

    paths: list[str] = []
    in_section = False
    for line in body.split("\n"):
        if _SVN_SECTIONS.match(line):
            in_section = True
            continue
        if in_section:
            if line[:1] in (" ", "\t") and line.strip():
                path = _PATH_SUFFIX.sub("", line.strip())
                if path and not path.endswith("/"):
                    paths.append(path)
                continue
            in_section = False
        stat = _GIT_STAT.match(line)
        if stat:
            paths.append(stat.group(1).strip())
    if not paths:
        return None
    return name, addr, list(dict.fromkeys(paths))


def extract_commits(
    messages: Iterable[RawMessage],
    blacklist: frozenset[str] = NONSOURCE_EXTENSIONS,
    report: IngestReport | None = None,
) -> list[CommitRecord]:
    """Turn commit-notification mails into source-filtered commit records."""
    report = report if report is not None else IngestReport()
    out: list[CommitRecord] = []
    for msg in messages:
        if not is_commit_notification(msg):
            continue
        parsed = parse_commit_body(msg.body)
        if parsed is None:
            report.commits_dropped_unparseable += 1
            continue
        name, addr, paths = parsed
        files = filter_source_files(paths, blacklist)
        if not files:
            report.commits_dropped_nonsource += 1
            continue
        out.append(CommitRecord(name, addr, msg.timestamp, files))
    report.commits_parsed += len(out)
    return out


def parse_timestamp(value: str) -> datetime:
    value = value.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    ts = datetime.fromisoformat(value)
    return ts.replace(tzinfo=timezone.utc) if ts.tzinfo is None else ts.astimezone(timezone.utc)


def load_commit_table(
    stream: TextIO | str,
    blacklist: frozenset[str] = NONSOURCE_EXTENSIONS,
    report: IngestReport | None = None,
) -> list[CommitRecord]:
    """Group one-row-per-file commit exports by (timestamp, author)."""
    report = report if report is not None else IngestReport()
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    for col in COMMIT_TABLE_COLUMNS:
        if col not in header:
            raise IngestError(f"commit table missing column {col!r}")

    groups: dict[tuple, list[str]] = {}
    for row in reader:
        try:
            ts = parse_timestamp(row["timestamp"])
        except (ValueError, AttributeError):
            report.commits_dropped_unparseable += 1
            continue
        key = (ts, row["author_name"].strip(), row["author_email"].strip().lower())
        groups.setdefault(key, [])
        path = (row["file_path"] or "").strip()
        if path and path not in groups[key]:
            groups[key].append(path)

    out = []
    for (ts, name, addr), paths in groups.items():
        files = filter_source_files(paths, blacklist)
        if not files:
            report.commits_dropped_nonsource += 1
            continue
        out.append(CommitRecord(name, addr, ts, files))
    report.commits_parsed += len(out)
    return out


def write_commit_table(commits: Iterable[CommitRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMMIT_TABLE_COLUMNS)
    for c in commits:
        for f in c.files:
            writer.writerow([c.timestamp.isoformat(), c.author_name, c.author_email, f])
    return buf.getvalue()
