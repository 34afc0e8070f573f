"""GitHub Actions usage: workflow parsing, adoption dating and the usage census."""
from __future__ import annotations

import logging
import os
import statistics
import subprocess
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import PurePosixPath
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import MalformedYaml
from .ingest import check_repository

log = logging.getLogger(__name__)

WORKFLOW_DIR = ".github/workflows"
CODE_REVIEW = "code-review"
NON_MARKETPLACE = "non-marketplace"

DEFAULT_CATALOG_TEXT = """\
# owner/name,category
codecov/codecov-action,code-review
coverallsapp/github-action,code-review
paambaati/codeclimate-action,code-review
aws-actions/codeguru-reviewer,code-review
sturdy-dev/codeball-action,code-review
sourcegraph/codeball-action,code-review
"""


@dataclass(frozen=True)
class ActionRef:
    owner: str
    name: str
    version_ref: str | None = None
    source_file: str = ""
    subpath: str = ""
    category: str | None = None  # NON_MARKETPLACE for local and docker references

    @property
    def key(self) -> str:
        return f"{self.owner}/{self.name}"


@dataclass(frozen=True)
class BotCatalog:
    entries: tuple[tuple[str, str], ...]

    def __post_init__(self):
        keys = [k for k, _ in self.entries]
        if len(keys) != len(set(keys)):
            raise ValueError("catalog patterns must be unique")

    def category(self, ref: ActionRef | str) -> str | None:
        key = (ref.key if isinstance(ref, ActionRef) else ref).lower()
        for pattern, cat in self.entries:
            if pattern.lower() == key:
                return cat
        return None

    @classmethod
    def parse(cls, text: str) -> "BotCatalog":
        entries = []
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            pattern, _, category = (part.strip() for part in line.partition(","))
            entries.append((pattern, category or CODE_REVIEW))
        return cls(tuple(entries))

    @classmethod
    def load(cls, path) -> "BotCatalog":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    @classmethod
    def default(cls) -> "BotCatalog":
        return cls.parse(DEFAULT_CATALOG_TEXT)


@dataclass(frozen=True)
class AdoptionRecord:
    repo: str
    action: ActionRef
    t_GA: int
    evidence: str = "workflow_file_commit"
    first_run_time: int | None = None
    commit_id: str = ""
    prior_tools: tuple[str, ...] = ()

    @property
    def prior_tool_flag(self) -> bool:
        return bool(self.prior_tools)


def parse_uses(value: str, source_file: str = "") -> ActionRef | None:
    value = value.strip()
    if not value:
        return None
    if value.startswith("./") or value.startswith("../"):
        return ActionRef("local", value, None, source_file, category=NON_MARKETPLACE)
    if value.startswith("docker://"):
        image = value[len("docker://"):]
        return ActionRef("docker", image, None, source_file, category=NON_MARKETPLACE)
    target, _, ref = value.partition("@")
    parts = target.split("/")
    if len(parts) < 2 or not parts[0] or not parts[1]:
        return None
    return ActionRef(parts[0], parts[1], ref or None, source_file, subpath="/".join(parts[2:]))


def _uses_values(doc) -> list[str]:
    found = []
    jobs = doc.get("jobs") if isinstance(doc, dict) else None
    if not isinstance(jobs, dict):
        return found
    for job in jobs.values():
        if not isinstance(job, dict):
            continue
        if isinstance(job.get("uses"), str):
            found.append(job["uses"])  # reusable workflow call
        for step in job.get("steps") or []:
            if isinstance(step, dict) and isinstance(step.get("uses"), str):
                found.append(step["uses"])
    return found


def parse_workflow(text: str, source_file: str = "") -> list[ActionRef]:
    """Every ``uses:`` reference in the jobs and steps of one workflow file.

    References are deduplicated per file, first occurrence wins. Raises
    MalformedYaml when the document does not parse or is not a mapping.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise MalformedYaml(f"{source_file or '<workflow>'}: {exc}") from exc
    if doc is None:
        return []
    if not isinstance(doc, dict):
        raise MalformedYaml(f"{source_file or '<workflow>'}: top level is not a mapping")
    refs, seen = [], set()
    for value in _uses_values(doc):
        ref = parse_uses(value, source_file)
        if ref is None:
            continue
        ident = (ref.key, ref.subpath, ref.version_ref)
        if ident not in seen:
            seen.add(ident)
            refs.append(ref)
    return refs


def is_workflow_path(path: str) -> bool:
    p = PurePosixPath(path)
    return str(p.parent) == WORKFLOW_DIR and p.suffix in (".yml", ".yaml")


@dataclass
class ParseReport:
    refs: dict[str, list[ActionRef]] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    def all_refs(self) -> list[ActionRef]:
        return [r for path in sorted(self.refs) for r in self.refs[path]]


def parse_workflow_files(files: Iterable[tuple[str, str]]) -> ParseReport:
    """Parse many workflow files; malformed ones are recorded, never fatal."""
    report = ParseReport()
    for path, text in files:
        try:
            report.refs[path] = parse_workflow(text, path)
        except MalformedYaml as exc:
            report.errors[path] = str(exc)
    return report


def _git(repo, *args) -> bytes:
    return subprocess.run(["git", "-C", os.fspath(repo), "-c", "core.quotepath=off", *args],
                          capture_output=True, check=True).stdout


def workflow_files_at(repo_path, rev: str = "HEAD") -> list[tuple[str, str]]:
    out = _git(repo_path, "ls-tree", "-r", "-z", "--name-only", rev, "--", WORKFLOW_DIR + "/")
    paths = [p for p in out.decode("utf-8", "surrogateescape").split("\0") if p and is_workflow_path(p)]
    return [(p, _git(repo_path, "show", f"{rev}:{p}").decode("utf-8", "replace")) for p in sorted(paths)]


def workflow_history(repo_path) -> list[tuple[str, int, str, str]]:
    """``(commit, author_time, path, text)`` for every workflow file version ever committed."""
    fmt = "%x1e%H %at"
    out = _git(repo_path, "log", "--topo-order", "--reverse", "--no-renames",
               f"--format={fmt}", "--name-status", "-z", "HEAD", "--", WORKFLOW_DIR)
    versions = []
    for block in out.decode("utf-8", "surrogateescape").split("\x1e"):
        if not block.strip():
            continue
        fields = [f.strip("\n") for f in block.split("\0")]
        commit, atime = fields[0].split()
        fields = [f for f in fields[1:] if f]
        i = 0
        while i + 1 < len(fields):
            status, path = fields[i].strip(), fields[i + 1]
            i += 2
            if status[0] in "AM" and is_workflow_path(path):
                text = _git(repo_path, "show", f"{commit}:{path}").decode("utf-8", "replace")
                versions.append((commit, int(atime), path, text))
    return versions


def detect_adoption(repo_path, catalog: BotCatalog, runs=None, repo_id: str | None = None,
                    parse_errors: dict | None = None) -> list[AdoptionRecord]:
    """Date the first introduction of every catalog action in a repository.

    The whole history of the workflow directory is scanned, so actions that
    were removed again are still found. ``t_GA`` is the earliest author time
    of a commit whose version of a workflow file references the action. Run
    records, when given, add the first run of that workflow at or after
    ``t_GA`` and upgrade the evidence; they never move ``t_GA``.
    """
    check_repository(repo_path)
    repo_id = repo_id or os.path.basename(os.path.abspath(repo_path))
    earliest: dict[str, tuple[int, str, str, ActionRef]] = {}
    for commit, atime, path, text in workflow_history(repo_path):
        try:
            refs = parse_workflow(text, path)
        except MalformedYaml as exc:
            if parse_errors is not None:
                parse_errors[f"{commit}:{path}"] = str(exc)
            continue
        for ref in refs:
            if catalog.category(ref) is None:
                continue
            key = ref.key.lower()
            cand = (atime, commit, path, ref)
            if key not in earliest or cand[:2] < earliest[key][:2]:
                earliest[key] = cand
    records = []
    for key in sorted(earliest):
        atime, commit, path, ref = earliest[key]
        rec = AdoptionRecord(repo_id, ref, atime, commit_id=commit)
        if runs:
            times = [r.run_started_at for r in runs if r.workflow_file == path and r.run_started_at >= atime]
            if times:
                rec = replace(rec, first_run_time=min(times), evidence="workflow_run")
        records.append(rec)
    flagged = []
    for rec in records:
        cat = catalog.category(rec.action)
        prior = tuple(sorted(o.action.key for o in records
                             if o is not rec and catalog.category(o.action) == cat and o.t_GA < rec.t_GA))
        flagged.append(replace(rec, prior_tools=prior))
    return sorted(flagged, key=lambda r: (r.t_GA, r.action.key))


def adoption_time(records: Sequence[AdoptionRecord], category: str = CODE_REVIEW,
                  catalog: BotCatalog | None = None) -> int | None:
    catalog = catalog or BotCatalog.default()
    times = [r.t_GA for r in records if catalog.category(r.action) == category]
    return min(times) if times else None


# --- census -------------------------------------------------------------------

@dataclass(frozen=True)
class CensusRow:
    action: str
    count: int
    share_pct: float

    @property
    def share_pct_1dp(self) -> str:
        return str(Decimal(repr(self.share_pct)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Census:
    rows: tuple[CensusRow, ...]
    n_repos: int
    n_ga_repos: int
    share_with_actions_pct: float
    min_actions: int
    median_actions: float
    max_actions: int

    def top(self, k: int = 20) -> tuple[CensusRow, ...]:
        return self.rows[:k]


def census(corpus: Iterable[Sequence[ActionRef | str]] | Mapping[str, Sequence[ActionRef | str]]) -> Census:
    """Per-action repository counts over a corpus of per-repo reference lists.

    A repository counts once per action however many files use it. Shares are
    relative to the repositories that use at least one action. Local and docker
    references are not marketplace actions and are left out.
    """
    lists = corpus.values() if isinstance(corpus, Mapping) else corpus
    counts: dict[str, int] = {}
    per_repo: list[int] = []
    n_repos = 0
    for refs in lists:
        n_repos += 1
        keys = set()
        for r in refs:
            if isinstance(r, ActionRef):
                if r.category == NON_MARKETPLACE:
                    continue
                keys.add(r.key.lower())
            else:
                keys.add(str(r).split("@", 1)[0].lower())
        if not keys:
            continue
        per_repo.append(len(keys))
        for k in keys:
            counts[k] = counts.get(k, 0) + 1
    n_ga = len(per_repo)
    rows = tuple(CensusRow(a, c, 100.0 * c / n_ga) for a, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
    return Census(
        rows=rows,
        n_repos=n_repos,
        n_ga_repos=n_ga,
        share_with_actions_pct=100.0 * n_ga / n_repos if n_repos else 0.0,
        min_actions=min(per_repo) if per_repo else 0,
        median_actions=float(statistics.median(per_repo)) if per_repo else 0.0,
        max_actions=max(per_repo) if per_repo else 0,
    )
