"""End-to-end study orchestration.

Each ``cmd_*`` function is one stage. Stages write below their own
subdirectory of the output directory and register input and output
checksums in ``run_manifest.json``; a stage whose fingerprint and outputs are
unchanged is reported as cached and not recomputed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .actions import (CODE_REVIEW, BotCatalog, census, detect_adoption, parse_uses, parse_workflow_files,
                      workflow_files_at)
from .config import StudyConfig
from .errors import (AllZeroDifferences, BotCollabError, NoFeasiblePlacebo, NotFound, RateLimited,
                     TooFewPlacebos)
from .ghclient import GitHubClient, RepoProfile, load_repo_list
from .ingest import check_repository
from .io import (atomic_write_text, canonical_json, iso, parse_time, pretty_json, read_csv, sha256_file,
                 sha256_text, slug, write_csv)
from .metrics import BIPARTITE_METRICS, COEDIT_METRICS, bipartite_metrics, coedit_metrics, is_undefined
from .networks import TimeWindow, build_bipartite, build_coedit, write_network
from .provenance import cache_path, extract_events_status, read_event_log
from .stats import (PlaceboDistribution, TestResult, bh_adjust, paired_test, placebo_pvalue,
                    two_sample_test)
from .study import (DAY, active_contributors, aligned_timepoint, draw_placebos, filter_projects,
                    match_controls, plan_phases)

log = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
ALL_METRICS = COEDIT_METRICS + BIPARTITE_METRICS
HYPOTHESES = (("H1", "inter", COEDIT_METRICS), ("H2", "intra", COEDIT_METRICS),
              ("H3", "inter", BIPARTITE_METRICS), ("H4", "intra", BIPARTITE_METRICS))
RESULT_COLUMNS = ("hypothesis", "metric", "method", "statistic", "p", "p_adjusted", "effect_size", "n1", "n2",
                  "flags")
ADOPTION_COLUMNS = ("repo", "action", "category", "version_ref", "source_file", "t_GA", "commit_id", "evidence",
                    "first_run_time", "prior_tools", "flags")
CENSUS_COLUMNS = ("action", "count", "share_pct")
SERIES_STEP_DAYS = 61


class StageError(BotCollabError):
    """A stage aborted on an invariant violation; names stage and repo."""

    def __init__(self, stage, repo, detail):
        super().__init__(f"{stage}: {repo}: {detail}")
        self.stage = stage
        self.repo = repo


@dataclass
class StageOutcome:
    name: str
    status: str  # computed | cached | partial | failed
    detail: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 3 if self.status == "failed" else 0


def now() -> int:
    """Wall-clock seconds, pinned by SOURCE_DATE_EPOCH for reproducible runs."""
    pinned = os.environ.get("SOURCE_DATE_EPOCH")
    return int(pinned) if pinned else int(time.time())


def sub_seed(seed: int, key: str) -> int:
    return int(hashlib.sha256(f"{seed}:{key}".encode()).hexdigest()[:12], 16)


# --- manifest & stage bookkeeping ---------------------------------------------

class Run:
    def __init__(self, cfg: StudyConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / MANIFEST
        self.manifest = {"stages": {}}
        if path.exists():
            try:
                self.manifest = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                log.warning("unreadable %s, starting afresh", path)
        self.manifest.setdefault("stages", {})

    def rel(self, p) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(self.out.resolve()).as_posix()
        except ValueError:
            return p.name

    def checksums(self, paths) -> dict[str, str]:
        return {self.rel(p): sha256_file(p) for p in sorted(paths, key=str) if Path(p).is_file()}

    def fingerprint(self, name: str, inputs: dict, params=None) -> str:
        return sha256_text(canonical_json({"stage": name, "inputs": inputs, "params": params,
                                           "config": self.cfg.config_hash(), "version": __version__}))

    def fresh(self, name: str, fingerprint: str) -> bool:
        entry = self.manifest["stages"].get(name)
        if not entry or entry.get("fingerprint") != fingerprint or not entry.get("outputs"):
            return False
        for rel, digest in entry["outputs"].items():
            p = self.out / rel
            if not p.is_file() or sha256_file(p) != digest:
                return False
        return True

    def stage_dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def record(self, name: str, fingerprint: str, inputs: dict, outputs, status: str):
        self.manifest["stages"][name] = {
            "fingerprint": fingerprint,
            "inputs": inputs,
            "outputs": self.checksums(outputs),
            "status": status,
            "finished_at": iso(now()),
        }
        self.save()

    def mark_cached(self, name: str):
        self.manifest["stages"][name]["status"] = "cached"
        self.save()

    def save(self):
        self.manifest.update({
            "tool_version": __version__,
            "config_hash": self.cfg.config_hash(),
            "seeds": {"placebo": self.cfg.placebo_seed, "matching": self.cfg.matching_seed},
        })
        atomic_write_text(self.out / MANIFEST, pretty_json(self.manifest))


def _files_in(d: Path) -> list[Path]:
    return sorted(p for p in d.rglob("*") if p.is_file() and not p.name.startswith("."))


def _clear(d: Path):
    for p in _files_in(d):
        p.unlink()


# --- repositories ---------------------------------------------------------------

@dataclass(frozen=True)
class RepoEntry:
    profile: RepoProfile
    path: Path | None

    @property
    def name(self) -> str:
        return self.profile.full_name


def load_repos(cfg: StudyConfig) -> list[RepoEntry]:
    entries = []
    base = Path(cfg.repo_list).parent
    for profile, row in load_repo_list(cfg.repo_list):
        raw = (row.get("path") or "").strip()
        if raw:
            path = Path(raw) if Path(raw).is_absolute() else base / raw
        elif cfg.clone_dir is not None:
            path = Path(cfg.clone_dir) / profile.full_name.replace("/", "__")
        else:
            path = None
        entries.append(RepoEntry(profile, path))
    names = [e.name for e in entries]
    if len(names) != len(set(names)):
        raise BotCollabError("repository list has duplicate full_name entries")
    return sorted(entries, key=lambda e: e.name)


def _head(path) -> str | None:
    try:
        return check_repository(path)
    except (BotCollabError, OSError, subprocess.CalledProcessError):
        return None


# --- mine -----------------------------------------------------------------------

def _mine_one(args):
    name, path, opts, cache_dir = args
    try:
        if path is None:
            raise BotCollabError("no local clone configured")
        elog, status = extract_events_status(path, opts, cache_dir, name)
        return {"repo": name, "status": status, "head_commit": elog.head_commit,
                "coedits": len(elog.coedits), "contributions": len(elog.contributions), "error": ""}
    except (BotCollabError, OSError, subprocess.CalledProcessError, UnicodeDecodeError) as exc:
        return {"repo": name, "status": "failed", "head_commit": "", "coedits": 0, "contributions": 0,
                "error": f"{type(exc).__name__}: {exc}".strip()}


def cmd_mine(cfg: StudyConfig) -> StageOutcome:
    """Extract (or reuse cached) event logs for every listed repository."""
    run = Run(cfg)
    repos = load_repos(cfg)
    jobs = [(r.name, r.path, cfg.ingest, cfg.events_dir) for r in repos]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
            rows = list(pool.map(_mine_one, jobs))
    else:
        rows = [_mine_one(j) for j in jobs]
    d = run.stage_dir("mine")
    ok = [r for r in rows if r["status"] != "failed"]
    failed = [r for r in rows if r["status"] == "failed"]
    for r in failed:
        log.error("mine %s failed: %s", r["repo"], r["error"])
    # the summary describes results, not whether they came from the cache
    summary = [{k: v for k, v in r.items() if k != "status"} | {"ok": r["status"] != "failed"} for r in rows]
    atomic_write_text(d / "summary.json", pretty_json({"repos": summary, "succeeded": len(ok),
                                                      "failed": len(failed)}))
    caches = [cache_path(cfg.events_dir, r["repo"]) for r in ok]
    status = "failed" if repos and not ok else ("partial" if failed else "computed")
    if ok and all(r["status"] == "cached" for r in ok) and not failed:
        status = "cached"
    inputs = {r["repo"]: r["head_commit"] for r in rows}
    run.record("mine", run.fingerprint("mine", inputs), inputs, [d / "summary.json", *caches], status)
    return StageOutcome("mine", status, {"per_repo": {r["repo"]: r["status"] for r in rows},
                                         "failed": {r["repo"]: r["error"] for r in failed}})


def load_event_logs(cfg: StudyConfig) -> dict:
    """Event logs of every repository the mine stage handled successfully."""
    summary = Path(cfg.output_dir) / "mine" / "summary.json"
    if not summary.exists():
        raise BotCollabError("mine stage has not run")
    logs = {}
    for row in json.loads(summary.read_text(encoding="utf-8"))["repos"]:
        if row["ok"]:
            _, elog = read_event_log(cache_path(cfg.events_dir, row["repo"]))
            logs[row["repo"]] = elog
    return logs


# --- detect & census -----------------------------------------------------------

def _catalog(cfg: StudyConfig) -> BotCatalog:
    return BotCatalog.load(cfg.catalog) if cfg.catalog else BotCatalog.default()


def _client(cfg: StudyConfig):
    if cfg.github_mode == "offline":
        return None
    return GitHubClient(mode=cfg.github_mode, fixture_dir=cfg.fixture_dir,
                        cache_dir=Path(cfg.output_dir) / "cache" / "http", requests_per_hour=cfg.requests_per_hour)


def cmd_detect(cfg: StudyConfig, client=None) -> StageOutcome:
    """Adoption table from workflow history (plus runs when online), then the census."""
    run = Run(cfg)
    repos = load_repos(cfg)
    heads = {r.name: _head(r.path) if r.path else None for r in repos}
    fp = run.fingerprint("detect", heads, [cfg.github_mode, _catalog(cfg).entries])
    if run.fresh("detect", fp):
        run.mark_cached("detect")
        outcome = StageOutcome("detect", "cached")
    else:
        outcome = _detect(cfg, run, repos, heads, fp, client)
    census_outcome = cmd_census(cfg)
    outcome.detail["census"] = census_outcome.status
    return outcome


def _detect(cfg, run, repos, heads, fp, client) -> StageOutcome:
    catalog = _catalog(cfg)
    own_client = client is None
    client = client if client is not None else _client(cfg)
    d = run.stage_dir("detect")
    _clear(d)
    rows, errors, failed = [], [], {}
    try:
        for r in repos:
            if heads[r.name] is None:
                failed[r.name] = "not a readable repository"
                continue
            runs, flags = None, []
            if client is not None:
                try:
                    runs = client.fetch_workflow_runs(r.name)
                except (NotFound, RateLimited) as exc:
                    flags.append("runs_unavailable")
                    log.warning("workflow runs for %s unavailable: %s", r.name, exc)
            else:
                flags.append("runs_not_fetched")
            parse_errors: dict = {}
            try:
                records = detect_adoption(r.path, catalog, runs=runs, repo_id=r.name, parse_errors=parse_errors)
            except (BotCollabError, subprocess.CalledProcessError) as exc:
                failed[r.name] = str(exc)
                continue
            errors.extend((r.name, k, v) for k, v in sorted(parse_errors.items()))
            for rec in records:
                rec_flags = list(flags)
                if rec.first_run_time is None and "runs_not_fetched" not in flags:
                    rec_flags.append("first_run_unavailable")
                rows.append((rec.repo, rec.action.key, catalog.category(rec.action), rec.action.version_ref,
                             rec.action.source_file, iso(rec.t_GA), rec.commit_id, rec.evidence,
                             iso(rec.first_run_time), ";".join(rec.prior_tools), ";".join(rec_flags)))
    finally:
        if own_client and client is not None:
            client.close()
    outputs = [
        write_csv(d / "adoptions.csv", ADOPTION_COLUMNS, rows),
        write_csv(d / "parse_errors.csv", ("repo", "file", "error"), errors),
        write_csv(d / "failures.csv", ("repo", "error"), sorted(failed.items())),
    ]
    status = "failed" if repos and len(failed) == len(repos) else ("partial" if failed else "computed")
    run.record("detect", fp, heads, outputs, status)
    return StageOutcome("detect", status, {"adoptions": len(rows), "failed": failed})


def _census_corpus(cfg: StudyConfig) -> dict:
    if cfg.corpus:
        data = json.loads(Path(cfg.corpus).read_text(encoding="utf-8"))
        return {repo: [parse_uses(u) or u for u in uses] for repo, uses in sorted(data.items())}
    corpus = {}
    for r in load_repos(cfg):
        if r.path is None or _head(r.path) is None:
            continue
        report = parse_workflow_files(workflow_files_at(r.path))
        corpus[r.name] = report.all_refs()
    return corpus


def cmd_census(cfg: StudyConfig) -> StageOutcome:
    """Action usage census over the configured corpus or the local clones."""
    run = Run(cfg)
    if cfg.corpus:
        inputs = {"corpus": sha256_file(cfg.corpus)}
    else:
        inputs = {r.name: _head(r.path) if r.path else None for r in load_repos(cfg)}
    fp = run.fingerprint("census", inputs)
    if run.fresh("census", fp):
        run.mark_cached("census")
        return StageOutcome("census", "cached")
    c = census(_census_corpus(cfg))
    d = run.stage_dir("census")
    catalog = _catalog(cfg)
    rows = [(r.action, r.count, r.share_pct_1dp) for r in c.rows]
    review = [r for r in c.rows if catalog.category(r.action) == CODE_REVIEW]
    summary = {
        "n_repos": c.n_repos, "n_repos_with_actions": c.n_ga_repos,
        "share_with_actions_pct": round(c.share_with_actions_pct, 6),
        "distinct_actions_per_repo": {"min": c.min_actions, "median": c.median_actions, "max": c.max_actions},
        "code_review_occurrences": sum(r.count for r in review),
        "code_review": [{"action": r.action, "count": r.count, "share_pct": r.share_pct_1dp} for r in review],
    }
    outputs = [
        write_csv(d / "census.csv", CENSUS_COLUMNS, rows),
        write_csv(d / "top20.csv", ("rank",) + CENSUS_COLUMNS,
                  [(i + 1, r.action, r.count, r.share_pct_1dp) for i, r in enumerate(c.top(20))]),
        atomic_write_text(d / "summary.json", pretty_json(summary)),
    ]
    run.record("census", fp, inputs, outputs, "computed")
    return StageOutcome("census", "computed", summary)


def load_adoptions(cfg: StudyConfig, category: str = CODE_REVIEW) -> dict[str, tuple[int, str]]:
    """Earliest adoption time and action per repository for one category."""
    path = Path(cfg.output_dir) / "detect" / "adoptions.csv"
    if not path.exists():
        raise BotCollabError("detect stage has not run")
    out: dict[str, tuple[int, str]] = {}
    for row in read_csv(path):
        if row["category"] != category:
            continue
        t = parse_time(row["t_GA"])
        if row["repo"] not in out or (t, row["action"]) < out[row["repo"]]:
            out[row["repo"]] = (t, row["action"])
    return out


# --- metrics --------------------------------------------------------------------

def metric_values(elog, window: TimeWindow, include_bots=False) -> dict:
    cv = coedit_metrics(build_coedit(elog, window, include_bots))
    bv = bipartite_metrics(build_bipartite(elog, window, include_bots))
    vals = {m: getattr(cv, m) for m in COEDIT_METRICS}
    vals.update({m: float(getattr(bv, m)) for m in BIPARTITE_METRICS})
    return vals


def lifetime_window(elog, days: int) -> TimeWindow:
    times = elog.activity_times
    if not days or not times:
        return TimeWindow.everything()
    return TimeWindow(times[-1] + 1 - days * DAY, times[-1] + 1)


def _delta(before, after):
    if is_undefined(before) or is_undefined(after):
        return None
    return after - before


def _events_inputs(cfg: StudyConfig, names) -> dict:
    return {n: sha256_file(cache_path(cfg.events_dir, n)) for n in sorted(names)}


def cmd_metrics(cfg: StudyConfig) -> StageOutcome:
    """Lifetime networks and metric vectors for every mined repository."""
    run = Run(cfg)
    logs = load_event_logs(cfg)
    inputs = _events_inputs(cfg, logs)
    fp = run.fingerprint("metrics", inputs)
    if run.fresh("metrics", fp):
        run.mark_cached("metrics")
        return StageOutcome("metrics", "cached")
    d = run.stage_dir("metrics")
    _clear(d)
    rows = []
    for name in sorted(logs):
        elog = logs[name]
        window = lifetime_window(elog, cfg.lifetime_window_days)
        stem = d / "networks" / slug(name)
        write_network(build_coedit(elog, window, cfg.include_bots), f"{stem}.coedit")
        write_network(build_bipartite(elog, window, cfg.include_bots), f"{stem}.bipartite")
        vals = metric_values(elog, window, cfg.include_bots)
        rows.append((name, *(vals[m] for m in ALL_METRICS)))
    write_csv(d / "lifetime_metrics.csv", ("repo",) + ALL_METRICS, rows)
    run.record("metrics", fp, inputs, _files_in(d), "computed")
    return StageOutcome("metrics", "computed", {"repos": len(rows)})


# --- study ----------------------------------------------------------------------

def _result_row(h: str, r: TestResult, p_adj) -> tuple:
    return (h, r.metric_name, r.method, r.statistic, r.p_value, p_adj, r.effect_size, r.n1, r.n2,
            ";".join(r.flags))


def _failed_test(metric, method, flag, n1=0, n2=0) -> TestResult:
    return TestResult(metric, method, float("nan"), 1.0, n1, n2, None, False, (flag,))


def cmd_study(cfg: StudyConfig) -> StageOutcome:
    """Filter, match, compute lifetime and phase metrics, and run every test."""
    run = Run(cfg)
    repos = {r.name: r for r in load_repos(cfg)}
    logs = load_event_logs(cfg)
    adoptions = load_adoptions(cfg)
    adopt_path = Path(cfg.output_dir) / "detect" / "adoptions.csv"
    inputs = {"events": _events_inputs(cfg, logs), "adoptions": sha256_file(adopt_path),
              "repo_list": sha256_file(cfg.repo_list)}
    fp = run.fingerprint("study", inputs)
    if run.fresh("study", fp):
        run.mark_cached("study")
        return StageOutcome("study", "cached")
    d = run.stage_dir("study")
    _clear(d)
    outputs, manifest = _study(cfg, repos, logs, adoptions, d)
    run.record("study", fp, inputs, outputs, "computed")
    return StageOutcome("study", "computed", {"treated": len(manifest["treated"]),
                                              "pairs": len(manifest["matches"])})


def _study(cfg: StudyConfig, repos, logs, adoptions, d: Path):
    plan_kw = cfg.plan_kw
    rejections: dict[str, list[str]] = {}
    profiles = []
    for name, entry in sorted(repos.items()):
        elog = logs.get(name)
        if elog is None:
            rejections[name] = ["mine_failed"]
            continue
        p = entry.profile
        # "active" contributors: distinct humans committing in the preceding 12 months
        at = adoptions[name][0] if name in adoptions else p.last_commit_at
        active = active_contributors(elog, at)
        profiles.append(RepoProfile(**{**p.__dict__, "contributors": active}))
    activity = {name: logs[name].activity_times for name in logs}
    t_ga = {name: t for name, (t, _) in adoptions.items()}
    filt = filter_projects(profiles, cfg.criteria, t_ga, activity, plan_kw)
    rejections.update(filt.rejections)
    treated = [p for p in filt.eligible if p.full_name in t_ga]
    pool = [p for p in filt.eligible if p.full_name not in adoptions]
    match = match_controls(treated, pool, seed=cfg.matching_seed, caliper=cfg.caliper)

    write_csv(d / "eligibility.csv", ("repo", "eligible", "role", "active_contributors", "reasons"),
              [(p.full_name, p.full_name not in rejections,
                "treated" if p.full_name in t_ga else "control_pool", p.contributors,
                ";".join(rejections.get(p.full_name, []))) for p in profiles]
              + [(n, False, "", "", ";".join(r)) for n, r in sorted(rejections.items()) if n not in logs])

    results: list[tuple[str, TestResult]] = []

    # inter-project comparison on lifetime networks of matched pairs
    lifetime_rows = []
    treated_vals, control_vals = [], []
    for pair in match.pairs:
        for role, prof, bucket in (("treated", pair.treated, treated_vals), ("control", pair.control, control_vals)):
            elog = logs[prof.full_name]
            vals = metric_values(elog, lifetime_window(elog, cfg.lifetime_window_days), cfg.include_bots)
            bucket.append(vals)
            lifetime_rows.append((prof.full_name, role, *(vals[m] for m in ALL_METRICS)))
    write_csv(d / "lifetime_metrics.csv", ("repo", "role") + ALL_METRICS, lifetime_rows)
    if match.pairs:
        for h, kind, metrics in HYPOTHESES:
            if kind != "inter":
                continue
            for m in metrics:
                try:
                    res = two_sample_test([v[m] for v in treated_vals], [v[m] for v in control_vals], m,
                                          cfg.parametric_if_normal)
                except ValueError:
                    res = _failed_test(m, "mann_whitney_u", "no_defined_values")
                results.append((h, res))

    # intra-project comparison: phases plus placebo time points
    phase_rows, placebo_rows, placebo_points = [], [], {}
    pairs_by_metric = {m: [] for m in ALL_METRICS}
    observed: dict[str, dict] = {}
    placebo_deltas: dict[str, dict[str, list]] = {}
    plans = {}
    for prof in treated:
        name = prof.full_name
        try:
            _intra(cfg, name, logs[name], plan_phases(t_ga[name], **plan_kw), plans, pairs_by_metric, observed,
                   phase_rows, placebo_rows, placebo_points, placebo_deltas)
        except (BotCollabError, ValueError) as exc:
            raise StageError("study", name, exc) from exc
    write_csv(d / "phase_metrics.csv", ("repo", "phase", "start", "end") + ALL_METRICS, phase_rows)
    write_csv(d / "placebo_deltas.csv", ("repo", "timepoint") + ALL_METRICS, placebo_rows)

    per_project = []
    for name in sorted(placebo_deltas):
        for m in ALL_METRICS:
            try:
                r = placebo_pvalue(PlaceboDistribution(tuple(placebo_deltas[name][m]), observed[name][m]), m)
                per_project.append((name, m, observed[name][m], r.n1, r.p_value, ";".join(r.flags)))
            except TooFewPlacebos:
                per_project.append((name, m, observed[name][m], len(placebo_deltas[name][m]), None,
                                    "too_few_placebos"))
    write_csv(d / "placebo_pvalues.csv", ("repo", "metric", "observed_delta", "k", "p", "flags"), per_project)

    if treated:
        for h, kind, metrics in HYPOTHESES:
            if kind != "intra":
                continue
            for m in metrics:
                try:
                    res = paired_test(pairs_by_metric[m], m, cfg.parametric_if_normal)
                except AllZeroDifferences:
                    n = len(pairs_by_metric[m])
                    res = _failed_test(m, "wilcoxon_signed_rank", "all_zero_differences", n, n)
                results.append((h, res))
                results.append((h, _pooled_placebo(m, observed, placebo_deltas)))

    adjusted = {}
    groups: dict[tuple[str, str], list[int]] = {}
    for i, (h, r) in enumerate(results):
        groups.setdefault((h, r.method), []).append(i)
    for idx in groups.values():
        for i, p in zip(idx, bh_adjust([results[i][1].p_value for i in idx])):
            adjusted[i] = p
    rows = [_result_row(h, r, adjusted[i]) for i, (h, r) in enumerate(results)]
    write_csv(d / "results.csv", RESULT_COLUMNS, rows)

    manifest = {
        "tool_version": __version__,
        "seeds": {"matching": cfg.matching_seed, "placebo": cfg.placebo_seed},
        "phase_constants": plan_kw,
        "treated": [{"repo": p.full_name, "action": adoptions[p.full_name][1], **plans[p.full_name].to_dict(),
                     "placebo": placebo_points.get(p.full_name)} for p in treated],
        "matches": [{"treated": m.treated.full_name, "control": m.control.full_name,
                     "distance": round(m.distance, 12),
                     "control_timepoint": iso(aligned_timepoint(m, t_ga[m.treated.full_name]))}
                    for m in match.pairs],
        "unmatched": dict(sorted(match.unmatched.items())),
        "empty_strata": match.empty_strata,
        "control_pool": [p.full_name for p in pool],
        "rejections": dict(sorted(rejections.items())),
        "stars": {"treated": [m.treated.stars for m in match.pairs],
                  "control": [m.control.stars for m in match.pairs]},
    }
    atomic_write_text(d / "study_manifest.json", pretty_json(manifest))
    return _files_in(d), manifest


def _intra(cfg, name, elog, plan, plans, pairs_by_metric, observed, phase_rows, placebo_rows, placebo_points,
           placebo_deltas):
    """Phase metrics, placebo draws and placebo changes of one treated repository."""
    plans[name] = plan
    before = metric_values(elog, plan.phase1, cfg.include_bots)
    after = metric_values(elog, plan.phase2, cfg.include_bots)
    for m in ALL_METRICS:
        pairs_by_metric[m].append((before[m], after[m]))
    observed[name] = {m: _delta(before[m], after[m]) for m in ALL_METRICS}
    phase_rows.append((name, "phase1", iso(plan.phase1.start), iso(plan.phase1.end),
                       *(before[m] for m in ALL_METRICS)))
    phase_rows.append((name, "phase2", iso(plan.phase2.start), iso(plan.phase2.end),
                       *(after[m] for m in ALL_METRICS)))
    times = elog.activity_times
    seed = sub_seed(cfg.placebo_seed, name)
    try:
        pp = draw_placebos(plan, (times[0], times[-1]), k=cfg.placebo_k, seed=seed)
    except (NoFeasiblePlacebo, IndexError) as exc:
        placebo_points[name] = {"seed": seed, "timepoints": [], "shortfall": True, "error": str(exc)}
        return
    placebo_points[name] = {"seed": seed, "timepoints": [iso(t) for t in pp.timepoints],
                            "shortfall": pp.shortfall}
    per_metric = {m: [] for m in ALL_METRICS}
    for t in pp.timepoints:
        sp = plan.shifted(t)
        b = metric_values(elog, sp.phase1, cfg.include_bots)
        a = metric_values(elog, sp.phase2, cfg.include_bots)
        for m in ALL_METRICS:
            per_metric[m].append(_delta(b[m], a[m]))
        placebo_rows.append((name, iso(t), *(_delta(b[m], a[m]) for m in ALL_METRICS)))
    placebo_deltas[name] = per_metric


def _pooled_placebo(metric: str, observed: dict, placebo_deltas: dict) -> TestResult:
    """Mean adoption change across projects against means of placebo changes.

    The j-th pooled placebo change averages every project's j-th placebo
    change, so the pooled distribution has as many entries as the project
    with the fewest placebos.
    """
    names = [n for n in sorted(placebo_deltas) if not is_undefined(observed[n][metric])]
    if not names:
        return _failed_test(metric, "placebo_empirical", "no_placebos")
    k = min(len(placebo_deltas[n][metric]) for n in names)
    obs = sum(observed[n][metric] for n in names) / len(names)
    pooled = []
    for j in range(k):
        vals = [placebo_deltas[n][metric][j] for n in names if not is_undefined(placebo_deltas[n][metric][j])]
        pooled.append(sum(vals) / len(vals) if vals else None)
    try:
        r = placebo_pvalue(PlaceboDistribution(tuple(pooled), obs), metric)
    except TooFewPlacebos:
        return _failed_test(metric, "placebo_empirical", "too_few_placebos", k, len(names))
    return TestResult(metric, r.method, r.statistic, r.p_value, r.n1, len(names), r.effect_size, r.exact,
                      r.flags, r.dropped)


# --- report ---------------------------------------------------------------------

def _fmt_p(value) -> str:
    return "" if value in (None, "") else f"{float(value):.4f}"


def cmd_report(cfg: StudyConfig) -> StageOutcome:
    """Markdown summary plus plot-ready CSVs; no rendering."""
    run = Run(cfg)
    out = Path(cfg.output_dir)
    needed = [out / "study" / "results.csv", out / "study" / "study_manifest.json", out / "census" / "census.csv"]
    missing = [p.name for p in needed if not p.exists()]
    if missing:
        raise BotCollabError(f"report needs earlier stages; missing {missing}")
    inputs = {run.rel(p): sha256_file(p) for p in needed}
    fp = run.fingerprint("report", inputs)
    if run.fresh("report", fp):
        run.mark_cached("report")
        return StageOutcome("report", "cached")
    d = run.stage_dir("report")
    _clear(d)
    manifest = json.loads(needed[1].read_text(encoding="utf-8"))
    results = read_csv(needed[0])
    census_rows = read_csv(needed[2])
    logs = load_event_logs(cfg)

    series = []
    step = SERIES_STEP_DAYS * DAY
    half = (cfg.exclusion_days + cfg.phase_days) * DAY
    anchors = [(t["repo"], "treated", parse_time(t["t_GA"])) for t in manifest["treated"]]
    anchors += [(m["control"], "control", parse_time(m["control_timepoint"])) for m in manifest["matches"]]
    for repo, role, anchor in anchors:
        elog = logs.get(repo)
        if elog is None:
            continue
        for offset in range(-half, half, step):
            w = TimeWindow(anchor + offset, anchor + offset + step)
            vals = metric_values(elog, w, cfg.include_bots)
            series.append((repo, role, iso(w.start), iso(w.end), offset // DAY, *(vals[m] for m in ALL_METRICS)))
    write_csv(d / "plot_timeseries.csv", ("repo", "role", "start", "end", "offset_days") + ALL_METRICS, series)
    write_csv(d / "plot_census.csv", CENSUS_COLUMNS, [(r["action"], r["count"], r["share_pct"])
                                                     for r in census_rows[:20]])

    lines = ["# Study summary", "",
             f"- treated repositories: {len(manifest['treated'])}",
             f"- matched pairs: {len(manifest['matches'])}",
             f"- unmatched treated: {len(manifest['unmatched'])}",
             f"- rejected repositories: {len(manifest['rejections'])}",
             f"- seeds: matching {manifest['seeds']['matching']}, placebo {manifest['seeds']['placebo']}", ""]
    if results:
        lines += ["## Tests", "", "| hypothesis | metric | method | statistic | p | p adjusted | effect | flags |",
                  "|---|---|---|---|---|---|---|---|"]
        for r in results:
            lines.append(f"| {r['hypothesis']} | {r['metric']} | {r['method']} | {r['statistic']} | "
                         f"{_fmt_p(r['p'])} | {_fmt_p(r['p_adjusted'])} | {r['effect_size']} | {r['flags']} |")
    else:
        lines.append("No tests were run: the study has no eligible treated repositories.")
    lines += ["", "## Most used actions", "", "| action | repositories | share % |", "|---|---|---|"]
    lines += [f"| {r['action']} | {r['count']} | {r['share_pct']} |" for r in census_rows[:20]]
    atomic_write_text(d / "summary.md", "\n".join(lines) + "\n")
    run.record("report", fp, inputs, _files_in(d), "computed")
    return StageOutcome("report", "computed", {"tests": len(results)})


def run_all(cfg: StudyConfig) -> list[StageOutcome]:
    """Every stage in order; stops after a stage that failed outright."""
    outcomes = []
    for stage in (cmd_mine, cmd_detect, cmd_metrics, cmd_study, cmd_report):
        res = stage(cfg)
        outcomes.append(res)
        if res.status == "failed":
            break
    return outcomes
