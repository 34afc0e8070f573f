"""Time-window aggregation of event logs into networks."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations

from .ingest import AuthorId
from .io import atomic_write_text, csv_text, iso
from .provenance import EventLog

log = logging.getLogger(__name__)

# covers every representable event time; used for whole-lifetime networks
FOREVER = (-(2**62), 2**62)


@dataclass(frozen=True)
class TimeWindow:
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty window [{self.start}, {self.end})")

    def __contains__(self, t) -> bool:
        return self.start <= t < self.end

    @classmethod
    def everything(cls) -> "TimeWindow":
        return cls(*FOREVER)

    def to_dict(self) -> dict:
        return {"start": iso(self.start) if self.start > FOREVER[0] else None,
                "end": iso(self.end) if self.end < FOREVER[1] else None}


@dataclass
class CoEditNetwork:
    nodes: set[str]
    edges: dict[tuple[str, str], int]
    window: TimeWindow
    authors: dict[str, AuthorId] = field(default_factory=dict)
    empty_window: bool = False


@dataclass
class BipartiteNetwork:
    dev_nodes: set[str]
    file_nodes: set[str]
    edges: dict[tuple[str, str], int]
    window: TimeWindow
    empty_window: bool = False


@dataclass
class SimpleGraph:
    nodes: set
    edges: dict[frozenset, float]

    def adjacency(self) -> dict:
        adj = {n: set() for n in self.nodes}
        for e in self.edges:
            u, v = tuple(e)
            adj[u].add(v)
            adj[v].add(u)
        return adj


def build_coedit(elog: EventLog, window: TimeWindow, include_bots: bool = False) -> CoEditNetwork:
    """Directed co-editing network of one window; edge weight is total lines.

    Active developers without co-edits in the window stay in as isolates.
    """
    edges: dict[tuple[str, str], int] = {}
    nodes: set[str] = set()
    authors: dict[str, AuthorId] = {}
    for ev in elog.coedits_between(window.start, window.end):
        if not include_bots and (ev.editor.is_bot or ev.original_author.is_bot):
            continue
        key = (ev.editor.canonical_key, ev.original_author.canonical_key)
        if key[0] == key[1]:
            continue
        edges[key] = edges.get(key, 0) + ev.lines
        nodes.update(key)
        authors.setdefault(key[0], ev.editor)
        authors.setdefault(key[1], ev.original_author)
    for ev in elog.contributions_between(window.start, window.end):
        if include_bots or not ev.developer.is_bot:
            nodes.add(ev.developer.canonical_key)
            authors.setdefault(ev.developer.canonical_key, ev.developer)
    net = CoEditNetwork(nodes, edges, window, authors, empty_window=not nodes)
    if net.empty_window:
        log.debug("no events for %s in window %s", elog.repo, window)
    return net


def build_bipartite(elog: EventLog, window: TimeWindow, include_bots: bool = False) -> BipartiteNetwork:
    edges: dict[tuple[str, str], int] = {}
    for ev in elog.contributions_between(window.start, window.end):
        if ev.developer.is_bot and not include_bots:
            continue
        key = (ev.developer.canonical_key, ev.file)
        edges[key] = edges.get(key, 0) + ev.lines_added + ev.lines_removed
    devs = {d for d, _ in edges}
    files = {f for _, f in edges}
    return BipartiteNetwork(devs, files, edges, window, empty_window=not edges)


def project_to_files(b: BipartiteNetwork) -> SimpleGraph:
    """One-mode file projection: files sharing a developer are linked."""
    by_dev: dict[str, set[str]] = {}
    for dev, f in b.edges:
        by_dev.setdefault(dev, set()).add(f)
    edges: dict[frozenset, float] = {}
    for files in by_dev.values():
        for f, g in combinations(sorted(files), 2):
            edges[frozenset((f, g))] = 1.0
    return SimpleGraph(set(b.file_nodes), edges)


def symmetrize(n: CoEditNetwork) -> SimpleGraph:
    edges: dict[frozenset, float] = {}
    for (u, v), w in n.edges.items():
        key = frozenset((u, v))
        edges[key] = edges.get(key, 0) + w
    return SimpleGraph(set(n.nodes), edges)


# --- serialization -----------------------------------------------------------

def network_csv(net) -> str:
    rows = sorted((s, t, w) for (s, t), w in net.edges.items())
    return csv_text(["source", "target", "weight"], rows)


def network_sidecar(net) -> dict:
    if isinstance(net, BipartiteNetwork):
        return {"type": "bipartite", "window": net.window.to_dict(),
                "nodes": {"developers": sorted(net.dev_nodes), "files": sorted(net.file_nodes)}}
    return {"type": "coedit", "window": net.window.to_dict(), "nodes": sorted(net.nodes)}


def write_network(net, stem) -> None:
    """Edge-list CSV plus a JSON sidecar with nodes, window and network type."""
    atomic_write_text(f"{stem}.csv", network_csv(net))
    atomic_write_text(f"{stem}.json", json.dumps(network_sidecar(net), indent=2, sort_keys=True) + "\n")
