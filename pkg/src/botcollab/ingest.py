"""Walk a git repository's history and emit normalized commit records.

All git access goes through the ``git`` executable. The main history walk is a
single streamed ``git log -p -U0`` over the default branch; merge commits get
their per-parent diffs from ``git diff-tree`` so the ownership state of a merge
can be rebuilt the way ``git blame`` would see it.
"""
from __future__ import annotations

import logging
import os
import re
import subprocess
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Mapping, Sequence

from .errors import CorruptObject, EmptyRepository, NotARepository, UnidentifiableAuthor

log = logging.getLogger(__name__)

DEFAULT_BOT_PATTERNS = ("*[bot]*", "*-bot@*")
MERGE_SKIP = "skip"
MERGE_FIRST_PARENT = "first-parent"

_SEP = "\x1f"
_COMMIT_MARK = "\x1eC"
_FORMAT = "%x1eC%x1f%H%x1f%P%x1f%an%x1f%ae%x1f%at"
_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_NON_TEXT_MODES = {"120000", "160000"}  # symlink, gitlink


@dataclass(frozen=True)
class AuthorId:
    canonical_key: str
    display_name: str
    is_bot: bool = False


@dataclass(frozen=True)
class HunkEdit:
    old_start: int
    old_len: int
    new_start: int
    new_len: int

    @property
    def removed_lines(self) -> int:
        return self.old_len

    @property
    def added_lines(self) -> int:
        return self.new_len


@dataclass(frozen=True)
class FileDiff:
    old_path: str | None
    new_path: str | None
    is_binary: bool = False
    is_rename: bool = False
    hunks: tuple[HunkEdit, ...] = ()
    # set when the file is dropped by the size guard; treated like a binary
    too_large: bool = False

    @property
    def excluded(self) -> bool:
        return self.is_binary or self.too_large

    @property
    def added_lines(self) -> int:
        return sum(h.new_len for h in self.hunks)

    @property
    def removed_lines(self) -> int:
        return sum(h.old_len for h in self.hunks)


@dataclass(frozen=True)
class CommitRecord:
    commit_id: str
    author: AuthorId
    author_time: int
    parent_ids: tuple[str, ...]
    file_diffs: tuple[FileDiff, ...] = ()
    # merge-skip only: one diff list per parent, used to rebuild line ownership
    merge_parent_diffs: tuple[tuple[FileDiff, ...], ...] = ()

    @property
    def is_merge(self) -> bool:
        return len(self.parent_ids) >= 2


@dataclass(frozen=True)
class IngestOptions:
    merge_policy: str = MERGE_SKIP
    rename_threshold: int = 50
    max_file_bytes: int | None = 1024 * 1024
    alias_map: Mapping[str, str] = field(default_factory=dict)
    bot_patterns: tuple[str, ...] = DEFAULT_BOT_PATTERNS

    def fingerprint(self) -> dict:
        return {
            "merge_policy": self.merge_policy,
            "rename_threshold": self.rename_threshold,
            "max_file_bytes": self.max_file_bytes,
            "alias_map": dict(sorted(self.alias_map.items())),
            "bot_patterns": list(self.bot_patterns),
        }


@lru_cache(maxsize=256)
def _glob_regex(pattern: str) -> re.Pattern:
    # only * and ? are wildcards; brackets are literal so "*[bot]*" means "[bot]"
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.IGNORECASE | re.DOTALL)


def matches_bot_pattern(value: str, patterns: Sequence[str]) -> bool:
    return any(_glob_regex(p).fullmatch(value) for p in patterns)


def resolve_identity(
    name: str,
    email: str,
    alias_map: Mapping[str, str] | None = None,
    bot_patterns: Sequence[str] = DEFAULT_BOT_PATTERNS,
) -> AuthorId:
    """Map a raw (name, email) pair onto a canonical, lowercase author key.

    The alias map is keyed by lowercased email and may redirect several
    addresses onto one person. Bot detection looks at both name and email.
    """
    name = (name or "").strip()
    email = (email or "").strip()
    if not name and not email:
        raise UnidentifiableAuthor("author has neither name nor email")
    key = email.lower() if email else name.lower()
    if alias_map:
        lowered = {k.strip().lower(): v for k, v in alias_map.items()}
        if email and email.lower() in lowered:
            key = lowered[email.lower()].strip().lower()
    is_bot = matches_bot_pattern(name, bot_patterns) or matches_bot_pattern(email, bot_patterns)
    return AuthorId(canonical_key=key, display_name=name or email, is_bot=is_bot)


def _git(repo, *args, check=True) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["git", "-C", os.fspath(repo), "-c", "core.quotepath=off", *args],
        capture_output=True,
        check=check,
    )


def check_repository(repo_path) -> str:
    """Return the head commit id, raising the ingest errors for bad inputs."""
    if not os.path.isdir(repo_path):
        raise NotARepository(f"{repo_path} is not a directory")
    proc = _git(repo_path, "rev-parse", "--git-dir", check=False)
    if proc.returncode != 0:
        raise NotARepository(f"{repo_path} is not a git repository")
    proc = _git(repo_path, "rev-parse", "--verify", "--quiet", "HEAD^{commit}", check=False)
    if proc.returncode != 0:
        raise EmptyRepository(f"{repo_path} has no commits")
    return proc.stdout.decode().strip()


def head_commit(repo_path) -> str:
    return check_repository(repo_path)


def child_counts(repo_path) -> dict[str, int]:
    """Number of children of each commit in the default-branch ancestry."""
    proc = _git(repo_path, "rev-list", "--parents", "HEAD")
    counts: dict[str, int] = {}
    for line in proc.stdout.decode().splitlines():
        ids = line.split()
        counts.setdefault(ids[0], 0)
        for parent in ids[1:]:
            counts[parent] = counts.get(parent, 0) + 1
    return counts


_ESCAPES = {"a": 7, "b": 8, "t": 9, "n": 10, "v": 11, "f": 12, "r": 13, '"': 34, "\\": 92}


def unquote_path(raw: str) -> str:
    """Undo git's C-style path quoting (only applied to unusual names)."""
    if not (len(raw) >= 2 and raw[0] == '"' and raw[-1] == '"'):
        return raw
    body = raw[1:-1].encode("utf-8", "surrogateescape")
    out = bytearray()
    i = 0
    while i < len(body):
        c = body[i]
        if c == 0x5C and i + 1 < len(body):
            nxt = chr(body[i + 1])
            if nxt in "01234567":
                out.append(int(body[i + 1:i + 4], 8))
                i += 4
                continue
            out.append(_ESCAPES.get(nxt, ord(nxt)))
            i += 2
            continue
        out.append(c)
        i += 1
    return out.decode("utf-8", "surrogateescape")


@dataclass
class _RawEntry:
    status: str
    old_mode: str
    new_mode: str
    old_blob: str
    new_blob: str
    old_path: str | None
    new_path: str | None


def _parse_raw(line: str) -> _RawEntry:
    meta, _, paths = line.partition("\t")
    fields = meta[1:].split()
    status = fields[4]
    names = [unquote_path(p) for p in paths.split("\t")]
    kind = status[0]
    if kind in "RC":
        old, new = names[0], names[1]
    elif kind == "A":
        old, new = None, names[0]
    elif kind == "D":
        old, new = names[0], None
    else:
        old = new = names[0]
    return _RawEntry(status, fields[0], fields[1], fields[2], fields[3], old, new)


def _parse_hunk(line: str) -> HunkEdit:
    m = _HUNK_RE.match(line)
    if not m:
        raise ValueError(f"bad hunk header {line!r}")
    old_start, old_len, new_start, new_len = m.groups()
    return HunkEdit(
        int(old_start),
        1 if old_len is None else int(old_len),
        int(new_start),
        1 if new_len is None else int(new_len),
    )


class _BlobSizer:
    """Long-lived ``git cat-file --batch-check`` for blob size lookups."""

    def __init__(self, repo_path):
        self._proc = subprocess.Popen(
            ["git", "-C", os.fspath(repo_path), "cat-file", "--batch-check"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def size(self, blob: str) -> int:
        return self.sizes([blob])[blob]

    def sizes(self, blobs) -> dict[str, int]:
        """One round trip for a batch of blob ids; missing blobs report 0."""
        assert self._proc.stdin and self._proc.stdout
        blobs = list(dict.fromkeys(blobs))
        if not blobs:
            return {}
        self._proc.stdin.write(b"".join(b.encode() + b"\n" for b in blobs))
        self._proc.stdin.flush()
        out = {}
        for blob in blobs:
            parts = self._proc.stdout.readline().decode().split()
            out[blob] = 0 if len(parts) < 3 or parts[1] == "missing" else int(parts[2])
        return out

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait()


class _DiffBuilder:
    """Turns raw + patch sections of one commit into FileDiff values."""

    def __init__(self, opts: IngestOptions, sizer: _BlobSizer | None, excluded: set[str]):
        self.opts = opts
        self.sizer = sizer
        self.excluded = excluded
        self._sizes: dict[str, int] = {}

    def build(self, raw: list[_RawEntry], sections: list[list[str]]) -> tuple[FileDiff, ...]:
        self._sizes = {}
        if self.opts.max_file_bytes is not None and self.sizer is not None:
            self._sizes = self.sizer.sizes(e.new_blob for e in raw if e.new_path and set(e.new_blob) != {"0"})
        diffs = []
        cursor = 0
        for entry in raw:
            # a type change is printed as a deletion section plus an addition section
            width = 2 if entry.status.startswith("T") else 1
            body = [line for sec in sections[cursor:cursor + width] for line in sec]
            cursor += width
            diffs.append(self._one(entry, body))
        if cursor != len(sections):
            raise ValueError(f"raw/patch mismatch: {len(raw)} entries, {len(sections)} sections")
        return tuple(diffs)

    def _one(self, entry: _RawEntry, body: list[str]) -> FileDiff:
        is_rename = entry.status.startswith("R")
        paths = {p for p in (entry.old_path, entry.new_path) if p}
        is_binary = any(line.startswith("Binary files ") for line in body)
        untracked_mode = bool({entry.old_mode, entry.new_mode} & _NON_TEXT_MODES) or entry.status.startswith("T")
        too_large = False
        if (self.opts.max_file_bytes is not None and self.sizer is not None and entry.new_path
                and not is_binary and not untracked_mode and not paths & self.excluded):
            too_large = self._sizes.get(entry.new_blob, 0) > self.opts.max_file_bytes
        if is_binary or too_large or untracked_mode or paths & self.excluded:
            # once excluded, a path stays excluded for the rest of the walk
            self.excluded.update(paths)
            return FileDiff(entry.old_path, entry.new_path, is_binary=True,
                            is_rename=is_rename, too_large=too_large)
        hunks = tuple(_parse_hunk(line) for line in body if line.startswith("@@ "))
        return FileDiff(entry.old_path, entry.new_path, is_rename=is_rename, hunks=hunks)


def _split_diff_output(lines: list[str]) -> tuple[list[_RawEntry], list[list[str]]]:
    raw: list[_RawEntry] = []
    sections: list[list[str]] = []
    for line in lines:
        if line.startswith(":") and not sections:
            raw.append(_parse_raw(line))
        elif line.startswith("diff --git ") or line.startswith("diff --cc "):
            sections.append([])
        elif sections:
            sections[-1].append(line)
    return raw, sections


def _diff_args(opts: IngestOptions) -> list[str]:
    return ["-p", "--raw", "--no-abbrev", "-U0", f"-M{opts.rename_threshold}%",
            "--no-color", "--no-ext-diff", "--no-textconv"]


def _diff_against(repo_path, parent: str, commit: str, opts, builder) -> tuple[FileDiff, ...]:
    proc = _git(repo_path, "diff-tree", "-r", *_diff_args(opts), parent, commit, check=False)
    if proc.returncode != 0:
        raise CorruptObject(commit, proc.stderr.decode(errors="replace").strip())
    text = proc.stdout.decode("utf-8", "surrogateescape")
    raw, sections = _split_diff_output(text.split("\n"))
    return builder.build(raw, sections)


def walk_history(repo_path, opts: IngestOptions | None = None) -> Iterator[CommitRecord]:
    """Yield every commit reachable from HEAD, parents before children.

    Non-merge commits carry their diff against the single parent (or the empty
    tree for roots). Merges carry no ``file_diffs`` under the default
    merge-skip policy; their per-parent diffs are attached separately so line
    ownership can follow them. With ``merge_policy="first-parent"`` a merge is
    diffed against its first parent like an ordinary commit.
    """
    opts = opts or IngestOptions()
    check_repository(repo_path)
    cmd = ["git", "-C", os.fspath(repo_path), "-c", "core.quotepath=off", "log",
           "--topo-order", "--reverse", "--root", f"--format={_FORMAT}", *_diff_args(opts), "HEAD"]
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    sizer = _BlobSizer(repo_path) if opts.max_file_bytes is not None else None
    builder = _DiffBuilder(opts, sizer, excluded=set())
    last_id = None
    try:
        header: list[str] | None = None
        body: list[str] = []
        assert proc.stdout
        for raw_line in proc.stdout:
            line = raw_line.decode("utf-8", "surrogateescape").rstrip("\n")
            if line.startswith(_COMMIT_MARK):
                if header is not None:
                    yield _make_record(repo_path, header, body, opts, builder)
                header = line.split(_SEP)[1:]
                last_id = header[0]
                body = []
            else:
                body.append(line)
        if header is not None:
            yield _make_record(repo_path, header, body, opts, builder)
    finally:
        if proc.stdout:
            proc.stdout.close()
        rc = proc.wait()
        err = proc.stderr.read().decode(errors="replace") if proc.stderr else ""
        if proc.stderr:
            proc.stderr.close()
        if sizer:
            sizer.close()
    if rc != 0:
        raise CorruptObject(last_id or "HEAD", err.strip())


def _make_record(repo_path, header, body, opts: IngestOptions, builder) -> CommitRecord:
    commit_id, parents, name, email, atime = header
    parent_ids = tuple(parents.split())
    author = resolve_identity(name, email, opts.alias_map, opts.bot_patterns)
    author_time = int(atime)
    if len(parent_ids) >= 2:
        if opts.merge_policy == MERGE_FIRST_PARENT:
            diffs = _diff_against(repo_path, parent_ids[0], commit_id, opts, builder)
            return CommitRecord(commit_id, author, author_time, parent_ids, diffs)
        per_parent = tuple(_diff_against(repo_path, p, commit_id, opts, builder) for p in parent_ids)
        return CommitRecord(commit_id, author, author_time, parent_ids, (), per_parent)
    raw, sections = _split_diff_output(body)
    try:
        diffs = builder.build(raw, sections)
    except ValueError as exc:
        # git prints the raw entry but no patch when a blob cannot be read
        raise CorruptObject(commit_id, str(exc)) from exc
    return CommitRecord(commit_id, author, author_time, parent_ids, diffs)
