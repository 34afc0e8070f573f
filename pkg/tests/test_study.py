from datetime import date, datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from botcollab.errors import InsufficientHistory, NoFeasiblePlacebo
from botcollab.ghclient import RepoProfile
from botcollab.networks import TimeWindow
from botcollab.study import (DAY, REASON_ACTIVITY, REASON_CONTRIBUTORS, REASON_FORK, REASON_LAST_COMMIT,
                             MatchedPair, SelectionCriteria, active_contributors, aligned_timepoint, draw_placebos,
                             filter_projects, match_controls, plan_phases)

from oracles import phase_windows


def ts(d: date) -> int:
    return int(datetime(d.year, d.month, d.day, tzinfo=timezone.utc).timestamp())


def profile(name, lang="Python", stars=100, contributors=10, commits=500, prs=50, fork=False,
            created="2016-01-01", last="2023-01-01"):
    return RepoProfile(name, lang, stars, contributors, commits, prs, fork,
                       ts(date.fromisoformat(created)), ts(date.fromisoformat(last)))


def window_dates(w: TimeWindow):
    return tuple(datetime.fromtimestamp(t, timezone.utc).date() for t in (w.start, w.end))


def test_phase_example_matches_date_oracle():
    plan = plan_phases("2021-07-01")
    p1, p2 = phase_windows(date(2021, 7, 1))
    assert window_dates(plan.phase1) == p1 == (date(2020, 12, 15), date(2021, 6, 16))
    assert window_dates(plan.phase2) == p2 == (date(2021, 7, 16), date(2022, 1, 15))
    assert plan.half_span == 198 * DAY


def test_insufficient_history():
    with pytest.raises(InsufficientHistory):
        plan_phases("2021-07-01", (ts(date(2021, 5, 1)), ts(date(2023, 1, 1))))


def test_history_boundary_fits_exactly():
    t = ts(date(2021, 7, 1))
    plan = plan_phases(t, (t - 198 * DAY, t + 198 * DAY))
    assert plan.phase1.start == t - 198 * DAY and plan.phase2.end == t + 198 * DAY
    with pytest.raises(InsufficientHistory):
        plan_phases(t, (t - 198 * DAY + 1, t + 198 * DAY))


@settings(max_examples=200, deadline=None)
@given(st.dates(date(2000, 1, 1), date(2035, 12, 31)))
def test_phase_ordering_property(d):
    plan = plan_phases(ts(d))
    assert plan.phase1.end <= plan.exclusion.start and plan.exclusion.end <= plan.phase2.start
    assert plan.phase1.end - plan.phase1.start == plan.phase2.end - plan.phase2.start == 183 * DAY
    assert (window_dates(plan.phase1), window_dates(plan.phase2)) == phase_windows(d)


def test_filter_reasons():
    t_ga = ts(date(2021, 7, 1))
    res = filter_projects(
        [profile("ok"), profile("tiny", contributors=2), profile("forked", stars=500, fork=True),
         profile("stale", last="2018-10-16"), profile("young", created="2021-05-01"),
         profile("fresh", last="2018-10-17")],
        adoptions={"ok": t_ga, "young": t_ga})
    assert [p.full_name for p in res.eligible] == ["ok", "fresh"]
    assert res.rejections == {"tiny": [REASON_CONTRIBUTORS], "forked": [REASON_FORK],
                              "stale": [REASON_LAST_COMMIT], "young": [REASON_ACTIVITY]}


def test_filter_requires_commits_in_both_phases():
    t_ga = ts(date(2021, 7, 1))
    before = [t_ga - 300 * DAY, t_ga - 100 * DAY]
    after_gap = before + [t_ga + 400 * DAY]  # long enough overall, nothing in phase 2
    res = filter_projects([profile("a"), profile("b")], adoptions={"a": t_ga, "b": t_ga},
                          activity={"a": before + [t_ga + 100 * DAY, t_ga + 300 * DAY], "b": after_gap})
    assert [p.full_name for p in res.eligible] == ["a"] and res.rejections == {"b": [REASON_ACTIVITY]}


def test_criteria_validation():
    with pytest.raises(ValueError):
        SelectionCriteria(min_stars=-1)


def test_identical_stats_match_at_zero():
    res = match_controls([profile("t")], [profile("c"), profile("d", commits=5000)])
    assert [(m.control.full_name, m.distance) for m in res.pairs] == [("c", 0.0)]


def test_empty_stratum_is_reported():
    res = match_controls([profile("t", lang="Rust"), profile("u")], [profile("c")])
    assert res.empty_strata == ["Rust"] and res.unmatched == {"t": "stratum_empty"}
    assert [m.treated.full_name for m in res.pairs] == ["u"]


def test_competition_closer_pair_wins():
    # t1 is a near twin of c1; t2 sits a bit further from c1 and further still from c2
    t1 = profile("t1", commits=1000)
    t2 = profile("t2", commits=1400)
    c1 = profile("c1", commits=1050)
    c2 = profile("c2", commits=2500)
    res = match_controls([t2, t1], [c2, c1], caliper=10.0)
    assert {(m.treated.full_name, m.control.full_name) for m in res.pairs} == {("t1", "c1"), ("t2", "c2")}
    far = match_controls([profile("t", commits=40)], [profile("c", commits=20000)], caliper=0.5)
    assert far.pairs == [] and far.unmatched == {"t": "caliper"}
    tight = match_controls([t2, t1], [c2, c1], caliper=1.0)
    assert [m.control.full_name for m in tight.pairs] == ["c1"] and tight.unmatched == {"t2": "pool_exhausted"}


def test_pool_exhaustion_and_overlap():
    res = match_controls([profile("t1"), profile("t2")], [profile("c")])
    assert len(res.pairs) == 1 and list(res.unmatched.values()) == ["pool_exhausted"]
    with pytest.raises(ValueError):
        match_controls([profile("x")], [profile("x")])


profiles = st.builds(lambda i, lang, c, k, p, age: profile(f"r{i}", lang, 100, c, k, p,
                                                           created=f"{2010 + age}-01-01"),
                     st.integers(0, 10**6), st.sampled_from(["Python", "Go"]), st.integers(3, 200),
                     st.integers(30, 20000), st.integers(0, 500), st.integers(0, 10))


@settings(max_examples=80, deadline=None)
@given(st.lists(profiles, max_size=8, unique_by=lambda p: p.full_name),
       st.lists(profiles, max_size=8, unique_by=lambda p: p.full_name), st.integers(0, 99))
def test_matching_is_a_partial_injection(treated, pool, seed):
    pool = [p for p in pool if p.full_name not in {t.full_name for t in treated}]
    res = match_controls(treated, pool, seed=seed)
    controls = [m.control.full_name for m in res.pairs]
    assert len(controls) == len(set(controls)) and len(res.pairs) <= len(treated)
    assert all(m.treated.primary_language == m.control.primary_language and m.distance <= 1.0 for m in res.pairs)
    assert len(res.pairs) + len(res.unmatched) == len(treated)
    assert match_controls(treated, pool, seed=seed).pairs == res.pairs


def test_aligned_timepoint_keeps_project_age():
    pair = MatchedPair(profile("t", created="2015-01-01"), profile("c", created="2017-01-01"), 0.0)
    t = aligned_timepoint(pair, ts(date(2020, 6, 1)))
    assert t - pair.control.created_at == ts(date(2020, 6, 1)) - pair.treated.created_at


def check_placebos(pp, plan, start, end):
    half = 198 * DAY
    for t in pp.timepoints:
        assert start <= t - half and t + half <= end
        assert t + half < plan.t_GA - half or t - half > plan.t_GA + half


def test_five_year_history_gives_twenty_placebos():
    start = ts(date(2016, 1, 1))
    end = start + 5 * 365 * DAY
    plan = plan_phases((start + end) // 2)
    pp = draw_placebos(plan, (start, end), k=20, seed=3)
    assert len(pp.timepoints) == 20 and not pp.shortfall
    check_placebos(pp, plan, start, end)
    assert draw_placebos(plan, (start, end), k=20, seed=3) == pp
    assert draw_placebos(plan, (start, end), k=20, seed=4) != pp


def test_adoption_window_only_history_is_infeasible():
    t = ts(date(2021, 7, 1))
    with pytest.raises(NoFeasiblePlacebo):
        draw_placebos(plan_phases(t), (t - 198 * DAY, t + 198 * DAY))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 4000), st.integers(0, 4000), st.integers(0, 10**6))
def test_placebo_invariants(before_days, after_days, seed):
    t = ts(date(2020, 1, 1))
    start, end = t - (198 + before_days) * DAY, t + (198 + after_days) * DAY
    plan = plan_phases(t)
    try:
        pp = draw_placebos(plan, (start, end), seed=seed)
    except NoFeasiblePlacebo:
        assert max(before_days, after_days) <= 396
        return
    assert 1 <= len(pp.timepoints) <= 20
    check_placebos(pp, plan, start, end)


def test_active_contributors_excludes_bots_and_old_commits():
    from botcollab.ingest import AuthorId
    from botcollab.provenance import ContributionEvent, EventLog
    a, b, bot = AuthorId("a@x", "A"), AuthorId("b@x", "B"), AuthorId("bot@x", "ci[bot]", is_bot=True)
    at = 1000 * DAY
    evs = [ContributionEvent(b, "f", "1" * 40, at - 400 * DAY, 1, 0),
           ContributionEvent(a, "f", "2" * 40, at - 10 * DAY, 1, 0),
           ContributionEvent(bot, "f", "3" * 40, at - 5 * DAY, 1, 0),
           ContributionEvent(a, "f", "4" * 40, at - 1 * DAY, 1, 0)]
    assert active_contributors(EventLog("r", (), tuple(evs), "h"), at) == 1
