"""Declarative run configuration loaded from a TOML file."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib as tomli
except ImportError:  # Python 3.10
    import tomli

from .errors import ConfigError
from .ingest import DEFAULT_BOT_PATTERNS, IngestOptions
from .io import canonical_json, sha256_text
from .study import EXCLUSION_DAYS, PHASE_DAYS, SelectionCriteria

EXAMPLE_CONFIG = f"""\
# botcollab study configuration. Relative paths resolve against this file's directory.

[input]
repo_list = "repos.csv"     # CSV with full_name,language,stars,contributors,commits,is_fork,
                            # created_at,last_commit_at,pull_requests and optionally path
clone_dir = "clones"        # local clones live at <clone_dir>/<owner>__<name> unless `path` is given
catalog = ""                # owner/name,category lines; empty uses the built-in Code Review catalog
alias_map = ""              # CSV email,canonical; empty disables aliasing
corpus = ""                 # JSON {{repo: ["owner/name@ref", ...]}} for the census; empty uses detected repos

[output]
dir = "out"                 # every artifact goes below this directory
cache_dir = ""              # event-log cache; empty means <dir>/cache

[ingest]
merge_policy = "skip"       # "skip" or "first-parent"
rename_threshold = 50       # percent similarity for rename detection
max_file_bytes = 1048576    # larger blobs are excluded; 0 disables the limit
include_bots = false        # keep bot authors in the networks
bot_patterns = {list(DEFAULT_BOT_PATTERNS)!r}

[criteria]
min_contributors = 3
min_commits = 30
exclude_forks = true
last_commit_after = "2018-10-16"
min_stars = 10
min_activity_months_each_side = 3

[phases]
exclusion_days = {EXCLUSION_DAYS}         # half-width of the window dropped around adoption
phase_days = {PHASE_DAYS}            # length of each observation phase

[placebo]
k = 20                      # placebo time points per project
seed = 7

[matching]
caliper = 1.0
seed = 11

[stats]
parametric_if_normal = false  # Shapiro pre-check switching to t-tests
alpha = 0.05

[lifetime]
window_days = 0             # 0: whole history; otherwise a trailing window ending at the last commit

[github]
mode = "offline"            # offline, replay, record or live; only live/record touch the network
fixture_dir = ""
requests_per_hour = 5000

[run]
workers = 4
"""

MODES = ("offline", "replay", "record", "live")


@dataclass(frozen=True)
class StudyConfig:
    repo_list: Path
    output_dir: Path
    clone_dir: Path | None = None
    catalog: Path | None = None
    alias_map: Path | None = None
    corpus: Path | None = None
    cache_dir: Path | None = None
    ingest: IngestOptions = field(default_factory=IngestOptions)
    include_bots: bool = False
    criteria: SelectionCriteria = field(default_factory=SelectionCriteria)
    exclusion_days: int = EXCLUSION_DAYS
    phase_days: int = PHASE_DAYS
    placebo_k: int = 20
    placebo_seed: int = 7
    caliper: float = 1.0
    matching_seed: int = 11
    parametric_if_normal: bool = False
    alpha: float = 0.05
    lifetime_window_days: int = 0
    github_mode: str = "offline"
    fixture_dir: Path | None = None
    requests_per_hour: float = 5000
    workers: int = 4

    @property
    def events_dir(self) -> Path:
        return self.cache_dir or self.output_dir / "cache"

    @property
    def plan_kw(self) -> dict:
        return {"exclusion_days": self.exclusion_days, "phase_days": self.phase_days}

    def to_dict(self, with_output: bool = True) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "ingest":
                v = v.fingerprint()
            elif f.name == "criteria":
                v = asdict(v)
            elif isinstance(v, Path):
                v = str(v)
            out[f.name] = v
        if not with_output:
            out.pop("output_dir")
            out.pop("cache_dir")
        return out

    def config_hash(self) -> str:
        """Hash of everything that affects results. Output locations are left
        out, so the same study written to two directories hashes equally; input
        paths are reduced to file names for the same reason."""
        d = self.to_dict(with_output=False)
        for key in ("repo_list", "clone_dir", "catalog", "alias_map", "corpus", "fixture_dir"):
            if d[key] is not None:
                d[key] = Path(d[key]).name
        return sha256_text(canonical_json(d))


def _path(base: Path, value, must_exist=True) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"path does not exist: {p}")
    return p


def load_alias_map(path) -> dict[str, str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row[0].strip().lower(): row[1].strip().lower()
                for row in csv.reader(fh) if len(row) >= 2 and row[0].strip() and not row[0].startswith("#")}


def _section(doc, name) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def config_from_dict(doc: dict, base_dir=".") -> StudyConfig:
    base = Path(base_dir)
    try:
        inp, outp = _section(doc, "input"), _section(doc, "output")
        ing, crit = _section(doc, "ingest"), _section(doc, "criteria")
        phases, placebo = _section(doc, "phases"), _section(doc, "placebo")
        matching, st = _section(doc, "matching"), _section(doc, "stats")
        lifetime, gh, run = _section(doc, "lifetime"), _section(doc, "github"), _section(doc, "run")
        if "repo_list" not in inp:
            raise ConfigError("[input] repo_list is required")
        alias_path = _path(base, inp.get("alias_map"))
        max_bytes = int(ing.get("max_file_bytes", 1024 * 1024))
        ingest = IngestOptions(
            merge_policy=ing.get("merge_policy", "skip"),
            rename_threshold=int(ing.get("rename_threshold", 50)),
            max_file_bytes=max_bytes or None,
            alias_map=load_alias_map(alias_path) if alias_path else {},
            bot_patterns=tuple(ing.get("bot_patterns", DEFAULT_BOT_PATTERNS)),
        )
        known = {f.name for f in fields(SelectionCriteria)}
        unknown = set(crit) - known
        if unknown:
            raise ConfigError(f"unknown [criteria] keys: {sorted(unknown)}")
        mode = gh.get("mode", "offline")
        if mode not in MODES:
            raise ConfigError(f"[github] mode must be one of {MODES}")
        cfg = StudyConfig(
            repo_list=_path(base, inp["repo_list"]),
            output_dir=_path(base, outp.get("dir", "out"), must_exist=False),
            clone_dir=_path(base, inp.get("clone_dir"), must_exist=False),
            catalog=_path(base, inp.get("catalog")),
            alias_map=alias_path,
            corpus=_path(base, inp.get("corpus")),
            cache_dir=_path(base, outp.get("cache_dir"), must_exist=False),
            ingest=ingest,
            include_bots=bool(ing.get("include_bots", False)),
            criteria=SelectionCriteria(**{k: crit[k] for k in crit}),
            exclusion_days=int(phases.get("exclusion_days", EXCLUSION_DAYS)),
            phase_days=int(phases.get("phase_days", PHASE_DAYS)),
            placebo_k=int(placebo.get("k", 20)),
            placebo_seed=int(placebo.get("seed", 7)),
            caliper=float(matching.get("caliper", 1.0)),
            matching_seed=int(matching.get("seed", 11)),
            parametric_if_normal=bool(st.get("parametric_if_normal", False)),
            alpha=float(st.get("alpha", 0.05)),
            lifetime_window_days=int(lifetime.get("window_days", 0)),
            github_mode=mode,
            fixture_dir=_path(base, gh.get("fixture_dir"), must_exist=mode == "replay"),
            requests_per_hour=float(gh.get("requests_per_hour", 5000)),
            workers=max(1, int(run.get("workers", 4))),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.github_mode in ("replay", "record") and cfg.fixture_dir is None:
        raise ConfigError(f"[github] mode {cfg.github_mode} needs fixture_dir")
    if cfg.placebo_k < 1 or cfg.phase_days < 1 or cfg.exclusion_days < 0:
        raise ConfigError("placebo k and phase_days must be positive, exclusion_days non-negative")
    return cfg


def load_config(path) -> StudyConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
