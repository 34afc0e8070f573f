"""REST client for repository metadata, workflow files and workflow runs.

This is the only module that talks to the network. In ``replay`` mode every
request is answered from a fixture directory holding one JSON envelope per
request path (URL-encoded file name); ``record`` mode performs live requests
and writes those envelopes, so a recorded session can be replayed offline.
"""
from __future__ import annotations

import base64
import csv
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote

import httpx
from filelock import FileLock

from .errors import AuthFailure, NotFound, RateLimited
from .io import atomic_write_text, parse_time

log = logging.getLogger(__name__)

TOKEN_ENV = "GITHUB_TOKEN"
API_URL = "https://api.github.com"
GHS_COLUMNS = ("full_name", "language", "stars", "contributors", "commits", "is_fork",
               "created_at", "last_commit_at", "pull_requests")
_LAST_PAGE = re.compile(r'[?&]page=(\d+)[^>]*>;\s*rel="last"')


@dataclass(frozen=True)
class RepoProfile:
    full_name: str
    primary_language: str
    stars: int
    contributors: int
    commits: int
    pull_requests: int
    is_fork: bool
    created_at: int
    last_commit_at: int

    def __post_init__(self):
        if min(self.stars, self.contributors, self.commits, self.pull_requests) < 0:
            raise ValueError(f"{self.full_name}: negative count")
        if self.last_commit_at < self.created_at:
            raise ValueError(f"{self.full_name}: last commit precedes creation")


@dataclass(frozen=True)
class WorkflowRunRecord:
    workflow_file: str
    run_started_at: int
    conclusion: str


def _truthy(value) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "y", "t")


def profile_from_row(row: dict) -> RepoProfile:
    return RepoProfile(
        full_name=row["full_name"].strip(),
        primary_language=(row.get("language") or "").strip(),
        stars=int(row["stars"]),
        contributors=int(row["contributors"]),
        commits=int(row["commits"]),
        pull_requests=int(row.get("pull_requests") or 0),
        is_fork=_truthy(row["is_fork"]),
        created_at=parse_time(row["created_at"]),
        last_commit_at=parse_time(row["last_commit_at"]),
    )


def load_repo_list(path) -> list[tuple[RepoProfile, dict]]:
    """Read a GHS-style export. Returns each profile with its raw row, which
    may carry extra columns such as a local clone ``path``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in GHS_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return [(profile_from_row(row), row) for row in reader]


def fixture_name(path: str) -> str:
    return quote(path.lstrip("/"), safe="") + ".json"


class GitHubClient:
    """Throttled, retrying REST client with a persistent response cache."""

    def __init__(self, mode: str = "live", fixture_dir=None, cache_dir=None, token: str | None = None,
                 requests_per_hour: float = 5000, max_concurrency: int = 4, max_attempts: int = 5,
                 backoff_base: float = 1.0, base_url: str = API_URL, transport=None, sleep=time.sleep,
                 per_page: int = 100):
        if mode not in ("live", "replay", "record"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode in ("replay", "record") and fixture_dir is None:
            raise ValueError(f"{mode} mode needs a fixture directory")
        self.mode = mode
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.min_interval = 3600.0 / requests_per_hour if requests_per_hour else 0.0
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.per_page = per_page
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_concurrency)
        self._pace = threading.Lock()
        self._last = 0.0
        self._http = None
        if mode != "replay":
            headers = {"Accept": "application/vnd.github+json"}
            if self.token:
                headers["Authorization"] = f"Bearer {self.token}"
            self._http = httpx.Client(base_url=base_url, headers=headers, transport=transport, timeout=30.0)

    def close(self):
        if self._http is not None:
            self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- transport ----------------------------------------------------------

    def _read_envelope(self, directory: Path, path: str):
        file = directory / fixture_name(path)
        if not file.exists():
            return None
        with open(file, encoding="utf-8") as fh:
            return json.load(fh)

    def _store(self, directory: Path, path: str, envelope: dict):
        directory.mkdir(parents=True, exist_ok=True)
        with FileLock(str(directory / ".lock")):
            atomic_write_text(directory / fixture_name(path), json.dumps(envelope, indent=1, sort_keys=True))

    def get(self, path: str) -> dict:
        """Envelope ``{"status", "headers", "body"}`` for a GET on ``path``."""
        if self.mode == "replay":
            env = self._read_envelope(self.fixture_dir, path)
            if env is None:
                raise NotFound(f"no fixture for {path}")
        else:
            env = self._read_envelope(self.cache_dir, path) if self.cache_dir else None
            if env is None:
                env = self._fetch(path)
                if env["status"] < 400:
                    if self.cache_dir:
                        self._store(self.cache_dir, path, env)
                    if self.mode == "record":
                        self._store(self.fixture_dir, path, env)
        status = env.get("status", 200)
        if status == 404:
            raise NotFound(path)
        if status == 401:
            raise AuthFailure(path)
        if status >= 400:
            raise RateLimited(path) if status in (403, 429) else RuntimeError(f"{path}: HTTP {status}")
        return env

    def _throttle(self):
        with self._pace:
            wait = self._last + self.min_interval - time.monotonic()
            if wait > 0:
                self._sleep(wait)
            self._last = time.monotonic()

    def _fetch(self, path: str) -> dict:
        for attempt in range(self.max_attempts):
            with self._slots:
                self._throttle()
                resp = self._http.get(path)
            if resp.status_code == 429 or (resp.status_code == 403 and resp.headers.get("x-ratelimit-remaining") == "0"):
                delay = self._retry_delay(resp, attempt)
                log.info("rate limited on %s, retrying in %.1fs", path, delay)
                self._sleep(delay)
                continue
            if resp.status_code == 401:
                raise AuthFailure(path)
            if resp.status_code == 404:
                raise NotFound(path)
            resp.raise_for_status()
            keep = {k: v for k, v in resp.headers.items() if k.lower() == "link"}
            return {"status": resp.status_code, "headers": keep, "body": resp.json()}
        raise RateLimited(f"{path}: still rate limited after {self.max_attempts} attempts")

    def _retry_delay(self, resp, attempt: int) -> float:
        retry_after = resp.headers.get("retry-after")
        if retry_after is not None:
            return float(retry_after)
        reset = resp.headers.get("x-ratelimit-reset")
        if reset is not None:
            return max(0.0, float(reset) - time.time())
        return self.backoff_base * 2**attempt

    # -- endpoints ----------------------------------------------------------

    def _count(self, path: str) -> int:
        try:
            env = self.get(path)
        except NotFound:
            return 0
        link = {k.lower(): v for k, v in env.get("headers", {}).items()}.get("link", "")
        m = _LAST_PAGE.search(link)
        if m:
            return int(m.group(1))
        return len(env["body"] or [])

    def fetch_repo_profile(self, full_name: str) -> RepoProfile:
        repo = self.get(f"/repos/{full_name}")["body"]
        created = parse_time(repo["created_at"])
        last = parse_time(repo.get("pushed_at") or repo["created_at"])
        try:
            latest = self.get(f"/repos/{full_name}/commits?per_page=1")
            commits = self._count(f"/repos/{full_name}/commits?per_page=1")
            if latest["body"]:
                last = parse_time(latest["body"][0]["commit"]["author"]["date"])
        except NotFound:
            commits = 0
        return RepoProfile(
            full_name=repo.get("full_name", full_name),
            primary_language=repo.get("language") or "",
            stars=int(repo.get("stargazers_count", 0)),
            contributors=self._count(f"/repos/{full_name}/contributors?per_page=1&anon=true"),
            commits=commits,
            pull_requests=self._count(f"/repos/{full_name}/pulls?state=all&per_page=1"),
            is_fork=bool(repo.get("fork", False)),
            created_at=created,
            last_commit_at=max(created, last),
        )

    def fetch_workflow_dir(self, full_name: str) -> list[tuple[str, str]]:
        try:
            listing = self.get(f"/repos/{full_name}/contents/.github/workflows")["body"]
        except NotFound:
            return []
        files = []
        for entry in sorted(listing, key=lambda e: e["path"]):
            if entry.get("type") != "file" or not entry["name"].endswith((".yml", ".yaml")):
                continue
            body = self.get(f"/repos/{full_name}/contents/{entry['path']}")["body"]
            raw = base64.b64decode(body["content"]) if body.get("encoding") == "base64" else body["content"].encode()
            files.append((entry["path"], raw.decode("utf-8", "surrogateescape")))
        return files

    def fetch_workflow_runs(self, full_name: str) -> list[WorkflowRunRecord]:
        runs: list[WorkflowRunRecord] = []
        page = 1
        while True:
            body = self.get(f"/repos/{full_name}/actions/runs?per_page={self.per_page}&page={page}")["body"]
            batch = body.get("workflow_runs", [])
            for run in batch:
                started = run.get("run_started_at") or run.get("created_at")
                workflow = (run.get("path") or "").split("@", 1)[0]
                runs.append(WorkflowRunRecord(workflow, parse_time(started), run.get("conclusion") or ""))
            total = body.get("total_count")
            if len(batch) < self.per_page or (total is not None and len(runs) >= total):
                break
            page += 1
        return sorted(runs, key=lambda r: (r.run_started_at, r.workflow_file))
