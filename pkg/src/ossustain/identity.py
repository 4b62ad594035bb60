"""Contributor de-aliasing.

Records (raw name, email) are merged with a union-find when they share an
email address or a normalized name variant of at least two tokens.
"""

from __future__ import annotations

import csv
import io
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

TITLES = frozenset({"jr", "sr", "dr", "mr", "ms"})
COMMON_WORDS = frozenset({"admin", "lists", "group"})
MIN_NAME_TOKENS = 2
LARGE_CLASS_EMAILS = 5

RawKey = tuple[str, str]  # (raw name, lowercased email)


@dataclass
class Contributor:
    id: int
    canonical_name: str
    emails: set[str] = field(default_factory=set)
    name_variants: set[str] = field(default_factory=set)


def _tokens(raw: str) -> list[str]:
    words = re.split(r"[\s,;]+", raw.lower())
    out = []
    for w in words:
        w = w.strip(".\"'()[]<>")
        if w and w not in TITLES and w not in COMMON_WORDS:
            out.append(w)
    return out


def normalize_name(raw: str) -> str:
    return " ".join(_tokens(raw))


def comma_swap_candidates(raw: str) -> set[str]:
    """Both name orders when the raw name contains exactly one comma."""
    if raw.count(",") == 1:
        last, first = raw.split(",")
        return {normalize_name(f"{last} {first}"), normalize_name(f"{first} {last}")}
    return {normalize_name(raw)}


class UnionFind:
    def __init__(self) -> None:
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller root wins so the result does not depend on union order
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def load_overrides(stream: TextIO | str) -> dict[str, str]:
    """Read ``raw_email,contributor_key`` manual corrections."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    return {row["raw_email"].strip().lower(): row["contributor_key"].strip() for row in reader}


def resolve_identities(
    records: Iterable[RawKey],
    overrides: Mapping[str, str] | None = None,
    flagged: list | None = None,
) -> dict[RawKey, Contributor]:
    """Partition raw (name, email) records into contributors.

    ``records`` may repeat; repetitions count toward the canonical-name
    vote. Contributor ids are assigned in order of each class's smallest
    raw key, so they are stable for a fixed input set regardless of order.
    Classes with more than five emails are appended to ``flagged``.
    """
    counts = Counter((name, email.lower()) for name, email in records)
    keys = sorted(counts)
    uf = UnionFind()
    for k in keys:
        uf.find(k)

    by_anchor: dict[tuple, RawKey] = {}

    def link(anchor: tuple, key: RawKey) -> None:
        if anchor in by_anchor:
            uf.union(by_anchor[anchor], key)
        else:
            by_anchor[anchor] = key

    for key in keys:
        name, email = key
        if overrides and email in overrides:
            link(("override", overrides[email]), key)
    for key in keys:
        name, email = key
        if email:
            link(("email", email), key)
        for variant in comma_swap_candidates(name):
            if len(variant.split()) >= MIN_NAME_TOKENS:
                link(("name", variant), key)

    classes: dict[RawKey, list[RawKey]] = defaultdict(list)
    for key in keys:
        classes[uf.find(key)].append(key)

    result: dict[RawKey, Contributor] = {}
    for cid, root in enumerate(sorted(classes)):
        members = classes[root]
        name_votes = Counter()
        for name, email in members:
            name_votes[name] += counts[(name, email)]
        canonical = min(name_votes, key=lambda n: (-name_votes[n], n))
        contributor = Contributor(
            id=cid,
            canonical_name=canonical,
            emails={e for _, e in members if e},
            name_variants=set().union(*(comma_swap_candidates(n) for n, _ in members)) - {""},
        )
        if flagged is not None and len(contributor.emails) > LARGE_CLASS_EMAILS:
            flagged.append(sorted(contributor.emails))
        for key in members:
            result[key] = contributor
    return result
