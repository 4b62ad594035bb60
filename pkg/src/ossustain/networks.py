"""Monthly social (reply) and technical (co-commit) networks and their metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx

from .events import ActivityEvent


@dataclass(frozen=True)
class GraphMetrics:
    nodes: int
    edges: int
    clustering_coef: float
    mean_degree: float
    long_tail: int


@dataclass
class MonthlyNetworks:
    project_id: str
    month_index: int
    social: nx.DiGraph
    technical: nx.Graph


def build_social(
    emails: Iterable[ActivityEvent],
    sender_of: Mapping[str, int],
    unresolved: list | None = None,
) -> nx.DiGraph:
    """Reply network for one project-month.

    ``sender_of`` maps every message id of the whole project to its sender,
    so a reply to an earlier month's post still yields an edge in the month
    of the reply. Edge A -> B means B replied to A.
    """
    g = nx.DiGraph()
    for e in emails:
        g.add_node(e.contributor)
        if not e.in_reply_to:
            continue
        parent = sender_of.get(e.in_reply_to)
        if parent is None:
            if unresolved is not None:
                unresolved.append(e.in_reply_to)
            continue
        if parent != e.contributor:
            g.add_edge(parent, e.contributor)
    return g


def strip_branch(path: str) -> str:
    """Drop everything up to trunk/, branches/<name>/ or tags/<name>/."""
    parts = path.strip("/").split("/")
    for i, part in enumerate(parts[:-1]):
        if part == "trunk":
            return "/".join(parts[i + 1 :])
        if part in ("branches", "tags") and i + 2 < len(parts):
            return "/".join(parts[i + 2 :])
    return "/".join(parts)


def build_technical(commits: Iterable[ActivityEvent]) -> nx.Graph:
    """Co-commit network: an edge joins two committers sharing a source file."""
    g = nx.Graph()
    committers_by_file: dict[str, set[int]] = {}
    for c in commits:
        g.add_node(c.contributor)
        for f in c.files:
            committers_by_file.setdefault(strip_branch(f), set()).add(c.contributor)
    for devs in committers_by_file.values():
        for a, b in combinations(sorted(devs), 2):
            g.add_edge(a, b)
    return g


def _skeleton_adjacency(graph: nx.Graph) -> dict:
    adj = {v: set() for v in graph.nodes}
    for u, v in graph.edges():
        if u != v:
            adj[u].add(v)
            adj[v].add(u)
    return adj


def metrics(graph: nx.Graph, clustering: str = "transitivity") -> GraphMetrics:
    """Size, degree and clustering summary of one monthly network.

    Degrees of a directed graph are in + out. Clustering uses the undirected
    skeleton: global transitivity by default, or the mean of local
    clustering coefficients with ``clustering="mean_local"``. ``long_tail``
    is the nearest-rank 75th percentile of the ascending degree sequence.
    """
    n = graph.number_of_nodes()
    if n == 0:
        return GraphMetrics(0, 0, 0.0, 0.0, 0)
    degrees = sorted(d for _, d in graph.degree())
    adj = _skeleton_adjacency(graph)

    closed_total = 0
    triples = 0
    local = []
    for v, nbrs in adj.items():
        k = len(nbrs)
        pairs = k * (k - 1) // 2
        closed = sum(1 for a, b in combinations(nbrs, 2) if b in adj[a])
        closed_total += closed
        triples += pairs
        local.append(closed / pairs if pairs else 0.0)
    # closed_total counts each triangle once per corner (3 x triangles)
    if clustering == "transitivity":
        coef = closed_total / triples if triples else 0.0
    elif clustering == "mean_local":
        coef = sum(local) / n
    else:
        raise ValueError(f"unknown clustering variant {clustering!r}")

    rank = math.ceil(0.75 * n)
    return GraphMetrics(
        nodes=n,
        edges=graph.number_of_edges(),
        clustering_coef=coef,
        mean_degree=sum(degrees) / n,
        long_tail=degrees[rank - 1],
    )


def write_edges(graph: nx.Graph, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{u} {v}" for u, v in sorted(graph.edges())]
    path.write_text("".join(line + "\n" for line in lines), encoding="ascii")


def dump_networks(nets: MonthlyNetworks, root: Path) -> None:
    base = root / nets.project_id / str(nets.month_index)
    write_edges(nets.social, base / "social.edges")
    write_edges(nets.technical, base / "technical.edges")
