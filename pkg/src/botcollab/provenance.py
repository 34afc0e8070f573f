"""Streaming line ownership and co-editing event extraction.

Every tracked file is an ordered tuple of ``Line`` entries, one per line of the
file's current content. Applying a commit's ``-U0`` hunks replaces the removed
lines with lines owned by the commit author; removing a line owned by someone
else is a co-edit. States are copy-on-write at file granularity, so keeping the
snapshot of every commit that still has unprocessed children is cheap.
"""
from __future__ import annotations

import json
import logging
import os
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple

from . import __version__
from .errors import CacheCorrupt, StateDesync
from .ingest import (
    AuthorId,
    CommitRecord,
    FileDiff,
    HunkEdit,
    IngestOptions,
    child_counts,
    check_repository,
    walk_history,
)
from .io import atomic_write_text, canonical_json, sha256_text, slug

log = logging.getLogger(__name__)


class Line(NamedTuple):
    owner: AuthorId
    written_at: int
    commit_id: str


@dataclass(frozen=True)
class CoEditEvent:
    editor: AuthorId
    original_author: AuthorId
    file: str
    commit_id: str
    time: int
    lines: int


@dataclass(frozen=True)
class ContributionEvent:
    developer: AuthorId
    file: str
    commit_id: str
    time: int
    lines_added: int
    lines_removed: int


@dataclass(frozen=True)
class EventLog:
    repo: str
    coedits: tuple[CoEditEvent, ...]
    contributions: tuple[ContributionEvent, ...]
    head_commit: str
    options_hash: str = ""

    @property
    def activity_times(self) -> list[int]:
        return sorted({c.time for c in self.contributions})

    @cached_property
    def _time_index(self):
        index = []
        for events in (self.coedits, self.contributions):
            times = [e.time for e in events]
            index.append(times if all(a <= b for a, b in zip(times, times[1:])) else None)
        return index

    def coedits_between(self, start: int, end: int):
        return _between(self.coedits, self._time_index[0], start, end)

    def contributions_between(self, start: int, end: int):
        return _between(self.contributions, self._time_index[1], start, end)


def _between(events, times, start, end):
    """Events with ``start <= time < end``; bisects when the log is time-sorted."""
    if times is None:
        return [e for e in events if start <= e.time < end]
    return events[bisect_left(times, start):bisect_left(times, end)]


@dataclass(frozen=True)
class LineOwnershipState:
    files: dict[str, tuple[Line, ...]] = field(default_factory=dict)

    def owner_at(self, path: str, line_no: int) -> AuthorId:
        return self.files[path][line_no - 1].owner

    def length(self, path: str) -> int:
        return len(self.files.get(path, ()))


EMPTY_STATE = LineOwnershipState()


def _splice(lines: tuple[Line, ...], hunks: Iterable[HunkEdit], fresh: Line, commit_id: str, path: str):
    """Apply ``-U0`` hunks. Returns the new line tuple and the removed entries."""
    out: list[Line] = []
    removed: list[Line] = []
    pos = 0
    for h in hunks:
        # a pure insertion's old_start names the line it follows
        cut = h.old_start if h.old_len == 0 else h.old_start - 1
        if cut < pos or cut + h.old_len > len(lines):
            raise StateDesync(commit_id, path,
                              f"hunk -{h.old_start},{h.old_len} outside tracked length {len(lines)}")
        out.extend(lines[pos:cut])
        expected_new = h.new_start if h.new_len == 0 else h.new_start - 1
        if expected_new != len(out):
            raise StateDesync(commit_id, path,
                              f"hunk +{h.new_start},{h.new_len} lands at line {len(out) + 1}")
        removed.extend(lines[cut:cut + h.old_len])
        out.extend([fresh] * h.new_len)
        pos = cut + h.old_len
    out.extend(lines[pos:])
    return tuple(out), removed


def apply_commit(state: LineOwnershipState, commit: CommitRecord):
    """Fold one non-merge commit into the ownership state.

    Returns ``(new_state, coedits, contributions)``. Removed lines owned by
    someone other than the author become co-edits, aggregated per file and
    original author; each touched file yields one contribution.
    """
    files = dict(state.files)
    fresh = Line(commit.author, commit.author_time, commit.commit_id)
    coedits: list[CoEditEvent] = []
    contributions: list[ContributionEvent] = []
    for fd in commit.file_diffs:
        if fd.excluded:
            for p in (fd.old_path, fd.new_path):
                files.pop(p, None)
            continue
        path = fd.new_path or fd.old_path
        if fd.old_path is None:
            base: tuple[Line, ...] = ()
        else:
            if fd.old_path not in state.files:
                raise StateDesync(commit.commit_id, fd.old_path, "file is not tracked")
            base = state.files[fd.old_path]
            if fd.old_path != fd.new_path and files.get(fd.old_path) is base:
                files.pop(fd.old_path)
        new_lines, removed = _splice(base, fd.hunks, fresh, commit.commit_id, path)
        if fd.new_path is None:
            if new_lines:
                raise StateDesync(commit.commit_id, path, "deleted file keeps lines")
        else:
            files[fd.new_path] = new_lines
        per_owner: dict[str, list] = {}
        for line in removed:
            if line.owner.canonical_key == commit.author.canonical_key:
                continue
            per_owner.setdefault(line.owner.canonical_key, [line.owner, 0])[1] += 1
        for key in sorted(per_owner):
            owner, count = per_owner[key]
            coedits.append(CoEditEvent(commit.author, owner, path, commit.commit_id, commit.author_time, count))
        if fd.added_lines + fd.removed_lines:
            contributions.append(ContributionEvent(commit.author, path, commit.commit_id, commit.author_time,
                                                   fd.added_lines, fd.removed_lines))
    return LineOwnershipState(files), coedits, contributions


def _unchanged_map(hunks: tuple[HunkEdit, ...], old_len: int, new_len: int) -> list[int | None]:
    """For each new line, the 0-based old line it is carried over from, if any."""
    mapping: list[int | None] = [None] * new_len
    old_pos = new_pos = 0
    for h in hunks:
        cut_new = h.new_start if h.new_len == 0 else h.new_start - 1
        cut_old = h.old_start if h.old_len == 0 else h.old_start - 1
        while new_pos < cut_new and old_pos < cut_old:
            mapping[new_pos] = old_pos
            new_pos += 1
            old_pos += 1
        new_pos = cut_new + h.new_len
        old_pos = cut_old + h.old_len
    while new_pos < new_len and old_pos < old_len:
        mapping[new_pos] = old_pos
        new_pos += 1
        old_pos += 1
    return mapping


def merge_state(parents: list[LineOwnershipState], commit: CommitRecord) -> LineOwnershipState:
    """Ownership state of a skipped merge commit.

    A merged line keeps the owner it has in the first parent it is unchanged
    against, in parent order; lines new relative to every parent (conflict
    resolutions) belong to the merge author. This mirrors how blame passes
    lines through merges, so no co-edits are generated here.
    """
    first = parents[0]
    first_diffs = commit.merge_parent_diffs[0]
    files = dict(first.files)
    fresh = Line(commit.author, commit.author_time, commit.commit_id)
    changed = []
    for fd in first_diffs:
        if fd.old_path is not None:
            files.pop(fd.old_path, None)
        if fd.excluded:
            files.pop(fd.new_path, None)
        elif fd.new_path is not None:
            changed.append(fd)
    for fd in changed:
        base = first.files.get(fd.old_path, ()) if fd.old_path else ()
        new_len = len(base) + fd.added_lines - fd.removed_lines
        result: list[Line | None] = [None] * new_len
        for state, diffs in zip(parents, commit.merge_parent_diffs):
            match = next((d for d in diffs if d.new_path == fd.new_path), None)
            if match is None:
                src_lines = state.files.get(fd.new_path)
                if src_lines is None:
                    continue
                mapping = list(range(len(src_lines)))
            elif match.excluded:
                continue
            else:
                src_lines = state.files.get(match.old_path, ()) if match.old_path else ()
                mapping = _unchanged_map(match.hunks, len(src_lines), new_len)
            if len(mapping) != new_len:
                raise StateDesync(commit.commit_id, fd.new_path, "parents disagree on merged file length")
            for j, src in enumerate(mapping):
                if result[j] is None and src is not None:
                    result[j] = src_lines[src]
        files[fd.new_path] = tuple(fresh if line is None else line for line in result)
    return LineOwnershipState(files)


def options_hash(opts: IngestOptions) -> str:
    return sha256_text(canonical_json(opts.fingerprint()))[:16]


def _sorted_events(events):
    # stable: ties inside one commit keep diff order
    return tuple(sorted(events, key=lambda e: (e.time, e.commit_id)))


def compute_events(repo_path, opts: IngestOptions | None = None, repo_id: str | None = None) -> EventLog:
    opts = opts or IngestOptions()
    head = check_repository(repo_path)
    pending = child_counts(repo_path)
    snapshots: dict[str, LineOwnershipState] = {}
    coedits: list[CoEditEvent] = []
    contributions: list[ContributionEvent] = []
    for commit in walk_history(repo_path, opts):
        parent_states = [snapshots[p] for p in commit.parent_ids]
        if commit.is_merge and commit.merge_parent_diffs:
            state = merge_state(parent_states, commit)
        else:
            base = parent_states[0] if parent_states else EMPTY_STATE
            state, c, k = apply_commit(base, commit)
            coedits.extend(c)
            contributions.extend(k)
        for p in commit.parent_ids:
            pending[p] -= 1
            if pending[p] <= 0:
                snapshots.pop(p, None)
        if pending.get(commit.commit_id, 0) > 0:
            snapshots[commit.commit_id] = state
    return EventLog(
        repo=repo_id or Path(repo_path).resolve().name,
        coedits=_sorted_events(coedits),
        contributions=_sorted_events(contributions),
        head_commit=head,
        options_hash=options_hash(opts),
    )


def replay_states(repo_path, opts: IngestOptions | None = None):
    """Yield ``(commit_id, state)`` after every commit. Meant for oracle checks."""
    opts = opts or IngestOptions()
    states: dict[str, LineOwnershipState] = {}
    for commit in walk_history(repo_path, opts):
        parent_states = [states[p] for p in commit.parent_ids]
        if commit.is_merge and commit.merge_parent_diffs:
            state = merge_state(parent_states, commit)
        else:
            state = apply_commit(parent_states[0] if parent_states else EMPTY_STATE, commit)[0]
        states[commit.commit_id] = state
        yield commit.commit_id, state


# --- NDJSON cache -----------------------------------------------------------

def _author_dict(a: AuthorId) -> dict:
    return {"canonical_key": a.canonical_key, "display_name": a.display_name, "is_bot": a.is_bot}


def _author(d: dict) -> AuthorId:
    return AuthorId(d["canonical_key"], d["display_name"], bool(d["is_bot"]))


def event_to_dict(event) -> dict:
    if isinstance(event, CoEditEvent):
        return {"type": "coedit", "editor": _author_dict(event.editor),
                "original_author": _author_dict(event.original_author), "file": event.file,
                "commit_id": event.commit_id, "time": event.time, "lines": event.lines}
    return {"type": "contribution", "developer": _author_dict(event.developer), "file": event.file,
            "commit_id": event.commit_id, "time": event.time, "lines_added": event.lines_added,
            "lines_removed": event.lines_removed}


def event_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "coedit":
        d["editor"] = _author(d["editor"])
        d["original_author"] = _author(d["original_author"])
        return CoEditEvent(**d)
    d["developer"] = _author(d["developer"])
    return ContributionEvent(**d)


def dumps_event_log(elog: EventLog) -> str:
    body = [canonical_json(event_to_dict(e)) for e in (*elog.coedits, *elog.contributions)]
    header = {
        "repo": elog.repo,
        "head_commit": elog.head_commit,
        "options_hash": elog.options_hash,
        "tool_version": __version__,
        "checksum": sha256_text("\n".join(body)),
    }
    return "\n".join([canonical_json(header), *body]) + "\n"


def read_event_log(path) -> tuple[dict, EventLog]:
    """Load a cached log; raises CacheCorrupt when the body fails its checksum."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        header = json.loads(lines[0])
        body = lines[1:]
        if sha256_text("\n".join(body)) != header.get("checksum"):
            raise CacheCorrupt(f"checksum mismatch in {path}")
        events = [event_from_dict(json.loads(line)) for line in body]
    except (IndexError, ValueError, KeyError, TypeError) as exc:
        raise CacheCorrupt(f"unreadable cache {path}: {exc}") from exc
    elog = EventLog(
        repo=header["repo"],
        coedits=tuple(e for e in events if isinstance(e, CoEditEvent)),
        contributions=tuple(e for e in events if isinstance(e, ContributionEvent)),
        head_commit=header["head_commit"],
        options_hash=header["options_hash"],
    )
    return header, elog


def cache_path(cache_dir, repo_id: str) -> Path:
    return Path(cache_dir) / f"{slug(repo_id)}.ndjson"


def extract_events(repo_path, opts: IngestOptions | None = None, cache_dir=None,
                   repo_id: str | None = None) -> EventLog:
    """Event log for a repository, served from the on-disk cache when valid.

    The cache entry is reused only if head commit, options hash and tool
    version all match; a corrupt entry is logged and recomputed.
    """
    elog, _ = extract_events_status(repo_path, opts, cache_dir, repo_id)
    return elog


def extract_events_status(repo_path, opts=None, cache_dir=None, repo_id=None) -> tuple[EventLog, str]:
    opts = opts or IngestOptions()
    repo_id = repo_id or Path(repo_path).resolve().name
    if cache_dir is None:
        return compute_events(repo_path, opts, repo_id), "computed"
    path = cache_path(cache_dir, repo_id)
    head = check_repository(repo_path)
    if path.exists():
        try:
            header, elog = read_event_log(path)
            if (header["head_commit"] == head and header["options_hash"] == options_hash(opts)
                    and header["tool_version"] == __version__ and header["repo"] == repo_id):
                return elog, "cached"
        except CacheCorrupt as exc:
            log.warning("%s; recomputing", exc)
    elog = compute_events(repo_path, opts, repo_id)
    atomic_write_text(path, dumps_event_log(elog))
    return elog, "computed"


def remove_cache(cache_dir, repo_id: str) -> None:
    path = cache_path(cache_dir, repo_id)
    if path.exists():
        os.unlink(path)
