"""Study protocol: eligibility, control matching, phases and placebo time points."""
from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientHistory, NoFeasiblePlacebo
from .ghclient import RepoProfile
from .io import iso, parse_time
from .networks import TimeWindow
from .provenance import EventLog

DAY = 86400
EXCLUSION_DAYS = 15
PHASE_DAYS = 183
MONTH_DAYS = PHASE_DAYS / 6
ADOPTION_HALF_SPAN_DAYS = EXCLUSION_DAYS + PHASE_DAYS  # 198
PLACEBO_MAX_ATTEMPTS = 10_000
DEFAULT_PLACEBOS = 20
CALIPER = 1.0
ACTIVE_WINDOW_DAYS = 365

REASON_CONTRIBUTORS = "min_contributors"
REASON_COMMITS = "min_commits"
REASON_FORK = "fork"
REASON_LAST_COMMIT = "last_commit"
REASON_STARS = "min_stars"
REASON_ACTIVITY = "activity window"


@dataclass(frozen=True)
class SelectionCriteria:
    min_contributors: int = 3
    min_commits: int = 30
    exclude_forks: bool = True
    last_commit_after: str = "2018-10-16"
    min_stars: int = 10
    min_activity_months_each_side: float = 3

    def __post_init__(self):
        if min(self.min_contributors, self.min_commits, self.min_stars, self.min_activity_months_each_side) < 0:
            raise ValueError("selection thresholds must be non-negative")

    @property
    def last_commit_cutoff(self) -> int:
        # "after" the given day: from the following midnight on
        return parse_time(self.last_commit_after) + DAY


@dataclass(frozen=True)
class PhasePlan:
    t_GA: int
    exclusion: TimeWindow
    phase1: TimeWindow
    phase2: TimeWindow

    @property
    def half_span(self) -> int:
        return self.phase2.end - self.t_GA

    def shifted(self, t: int) -> "PhasePlan":
        """The same windows laid around another time point."""
        d = t - self.t_GA
        return PhasePlan(t, *(TimeWindow(w.start + d, w.end + d) for w in (self.exclusion, self.phase1, self.phase2)))

    def to_dict(self) -> dict:
        return {"t_GA": iso(self.t_GA),
                "exclusion": [iso(self.exclusion.start), iso(self.exclusion.end)],
                "phase1": [iso(self.phase1.start), iso(self.phase1.end)],
                "phase2": [iso(self.phase2.start), iso(self.phase2.end)]}


@dataclass(frozen=True)
class MatchedPair:
    treated: RepoProfile
    control: RepoProfile
    distance: float


@dataclass
class MatchResult:
    pairs: list[MatchedPair] = field(default_factory=list)
    unmatched: dict[str, str] = field(default_factory=dict)
    empty_strata: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class PlaceboPlan:
    timepoints: tuple[int, ...]
    seed: int
    requested: int = DEFAULT_PLACEBOS

    @property
    def shortfall(self) -> bool:
        return len(self.timepoints) < self.requested


@dataclass
class FilterResult:
    eligible: list[RepoProfile] = field(default_factory=list)
    rejections: dict[str, list[str]] = field(default_factory=dict)


def plan_phases(t_GA: int, history_span: TimeWindow | tuple[int, int] | None = None,
                exclusion_days: int = EXCLUSION_DAYS, phase_days: int = PHASE_DAYS) -> PhasePlan:
    """Six-month phases either side of adoption, separated by a +-15 day exclusion."""
    t = parse_time(t_GA)
    excl = TimeWindow(t - exclusion_days * DAY, t + exclusion_days * DAY)
    plan = PhasePlan(
        t_GA=t,
        exclusion=excl,
        phase1=TimeWindow(excl.start - phase_days * DAY, excl.start),
        phase2=TimeWindow(excl.end, excl.end + phase_days * DAY),
    )
    if history_span is not None:
        start, end = (history_span.start, history_span.end) if isinstance(history_span, TimeWindow) else history_span
        if start > plan.phase1.start or end < plan.phase2.end:
            raise InsufficientHistory(
                f"history {iso(start)}..{iso(end)} does not cover {iso(plan.phase1.start)}..{iso(plan.phase2.end)}")
    return plan


def _count_in(times: Sequence[int], window: TimeWindow) -> int:
    return bisect.bisect_left(times, window.end) - bisect.bisect_left(times, window.start)


def filter_projects(profiles: Iterable[RepoProfile], criteria: SelectionCriteria | None = None,
                    adoptions: Mapping[str, int | None] | None = None,
                    activity: Mapping[str, Sequence[int]] | None = None, plan_kw: dict | None = None) -> FilterResult:
    """Apply the selection criteria, collecting every failed criterion per repo.

    Repos with an adoption time must also show activity reaching
    ``min_activity_months_each_side`` before and after adoption and at least
    one commit inside each phase. ``activity`` maps repo name to sorted commit
    times; without it the profile's creation and last-commit dates stand in
    and the per-phase commit check is skipped.
    """
    criteria = criteria or SelectionCriteria()
    adoptions = adoptions or {}
    activity = activity or {}
    result = FilterResult()
    for p in profiles:
        reasons = []
        if p.contributors < criteria.min_contributors:
            reasons.append(REASON_CONTRIBUTORS)
        if p.commits < criteria.min_commits:
            reasons.append(REASON_COMMITS)
        if criteria.exclude_forks and p.is_fork:
            reasons.append(REASON_FORK)
        if p.last_commit_at < criteria.last_commit_cutoff:
            reasons.append(REASON_LAST_COMMIT)
        if p.stars < criteria.min_stars:
            reasons.append(REASON_STARS)
        t_ga = adoptions.get(p.full_name)
        if t_ga is not None and not _active_around(p, t_ga, criteria, activity.get(p.full_name), plan_kw):
            reasons.append(REASON_ACTIVITY)
        if reasons:
            result.rejections[p.full_name] = reasons
        else:
            result.eligible.append(p)
    return result


def _active_around(p: RepoProfile, t_ga: int, criteria: SelectionCriteria, times, plan_kw=None) -> bool:
    margin = criteria.min_activity_months_each_side * MONTH_DAYS * DAY
    if times:
        times = sorted(times)
        first, last = times[0], times[-1]
    else:
        first, last = p.created_at, p.last_commit_at
    if first > t_ga - margin or last < t_ga + margin:
        return False
    if times:
        plan = plan_phases(t_ga, **(plan_kw or {}))
        return _count_in(times, plan.phase1) >= 1 and _count_in(times, plan.phase2) >= 1
    return True


def active_contributors(elog: EventLog, at: int, days: int = ACTIVE_WINDOW_DAYS) -> int:
    """Distinct human authors with a commit in the ``days`` before ``at``."""
    lo = at - days * DAY
    return len({c.developer.canonical_key for c in elog.contributions
                if lo <= c.time < at and not c.developer.is_bot})


def _features(p: RepoProfile, reference_time: int) -> list[float]:
    age_days = max(0.0, (reference_time - p.created_at) / DAY)
    return [math.log1p(p.contributors), math.log1p(p.commits), math.log1p(age_days), math.log1p(p.pull_requests)]


def match_controls(treated: Sequence[RepoProfile], pool: Sequence[RepoProfile], seed: int = 0,
                   caliper: float = CALIPER, reference_time: int | None = None) -> MatchResult:
    """Greedy nearest-neighbour matching without replacement inside language strata.

    Distances are Euclidean over z-scored log(1+x) of contributors, commits,
    age in days and pull requests; z-scores use treated and pool together.
    Pairs are taken globally closest-first within a stratum, so the closer of
    two competing treated repos wins; ties follow a seeded random order.
    """
    names_t = {p.full_name for p in treated}
    overlap = names_t & {p.full_name for p in pool}
    if overlap:
        raise ValueError(f"pool overlaps treated: {sorted(overlap)}")
    result = MatchResult()
    if not treated:
        return result
    everyone = list(treated) + list(pool)
    ref = reference_time if reference_time is not None else max(p.last_commit_at for p in everyone)
    feats = np.array([_features(p, ref) for p in everyone])
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    sd[sd == 0] = 1.0
    z = (feats - mu) / sd
    zt, zp = z[:len(treated)], z[len(treated):]
    rng = random.Random(seed)
    t_rank = rng.sample(range(len(treated)), len(treated))
    p_rank = rng.sample(range(len(pool)), len(pool)) if pool else []
    languages = sorted({p.primary_language for p in treated})
    for lang in languages:
        ti = [i for i, p in enumerate(treated) if p.primary_language == lang]
        pi = [j for j, p in enumerate(pool) if p.primary_language == lang]
        if not pi:
            result.empty_strata.append(lang)
            for i in ti:
                result.unmatched[treated[i].full_name] = "stratum_empty"
            continue
        cands = []
        for i in ti:
            for j in pi:
                d = float(np.linalg.norm(zt[i] - zp[j]))
                cands.append((round(d, 12), t_rank[i], p_rank[j], i, j, d))
        cands.sort()
        used_t, used_p = set(), set()
        for _, _, _, i, j, d in cands:
            if i in used_t or j in used_p or d > caliper:
                continue
            used_t.add(i)
            used_p.add(j)
            result.pairs.append(MatchedPair(treated[i], pool[j], d))
        for i in ti:
            if i not in used_t:
                within = any(float(np.linalg.norm(zt[i] - zp[j])) <= caliper for j in pi)
                result.unmatched[treated[i].full_name] = "pool_exhausted" if within else "caliper"
    order = {p.full_name: k for k, p in enumerate(treated)}
    result.pairs.sort(key=lambda m: order[m.treated.full_name])
    return result


def aligned_timepoint(pair: MatchedPair, t_GA: int) -> int:
    """The control's time point at the same project age as the treated adoption."""
    return pair.control.created_at + (t_GA - pair.treated.created_at)


def draw_placebos(plan: PhasePlan, history_span: TimeWindow | tuple[int, int], k: int = DEFAULT_PLACEBOS,
                  seed: int = 0) -> PlaceboPlan:
    """Seeded uniform draws of placebo time points by rejection sampling.

    A time point is valid when its own span (+-198 days by default) lies
    inside the history and does not touch the adoption span. Fewer than ``k`` points
    may come back when the feasible region is small (see ``shortfall``).
    """
    start, end = (history_span.start, history_span.end) if isinstance(history_span, TimeWindow) else history_span
    half = plan.half_span
    lo, hi = start + half, end - half
    if lo > hi or not (lo < plan.t_GA - 2 * half or hi > plan.t_GA + 2 * half):
        raise NoFeasiblePlacebo(f"no placebo span fits in {iso(start)}..{iso(end)} around {iso(plan.t_GA)}")
    rng = random.Random(seed)
    points: list[int] = []
    for _ in range(PLACEBO_MAX_ATTEMPTS):
        if len(points) >= k:
            break
        t = rng.randint(lo, hi)
        if abs(t - plan.t_GA) > 2 * half:
            points.append(t)
    if not points:
        raise NoFeasiblePlacebo("rejection sampling found no valid placebo time point")
    return PlaceboPlan(tuple(sorted(points)), seed, k)
