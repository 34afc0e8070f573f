import json

import pytest
from hypothesis import given, settings, strategies as st

from botcollab.ingest import AuthorId
from botcollab.metrics import count_components
from botcollab.networks import (BipartiteNetwork, CoEditNetwork, TimeWindow, build_bipartite, build_coedit,
                                network_csv, project_to_files, symmetrize, write_network)
from botcollab.provenance import CoEditEvent, ContributionEvent, EventLog

from oracles import brute_components

PEOPLE = {k: AuthorId(f"{k.lower()}@x.org", k) for k in "ABCDE"}
BOT = AuthorId("ci[bot]@x.org", "ci[bot]", is_bot=True)


def co(editor, orig, t, lines=1, file="f"):
    return CoEditEvent(editor, orig, file, f"{t:040d}", t, lines)


def ct(dev, t, file="f", added=1, removed=0):
    return ContributionEvent(dev, file, f"{t:040d}", t, added, removed)


def log_of(coedits=(), contributions=()):
    key = lambda e: (e.time, e.commit_id)
    return EventLog("r", tuple(sorted(coedits, key=key)), tuple(sorted(contributions, key=key)), "h")


A, B, C = PEOPLE["A"], PEOPLE["B"], PEOPLE["C"]


def test_coedit_weights_sum_within_window():
    elog = log_of([co(A, B, 10, 3), co(A, B, 20, 2)])
    assert build_coedit(elog, TimeWindow(0, 100)).edges == {("a@x.org", "b@x.org"): 5}
    assert build_coedit(elog, TimeWindow(0, 20)).edges == {("a@x.org", "b@x.org"): 3}
    assert build_coedit(elog, TimeWindow(20, 21)).edges == {("a@x.org", "b@x.org"): 2}


def test_bots_dropped_unless_requested():
    elog = log_of([co(A, BOT, 10, 3)], [ct(BOT, 5), ct(A, 10)])
    assert build_coedit(elog, TimeWindow(0, 100)).edges == {}
    assert build_coedit(elog, TimeWindow(0, 100)).nodes == {"a@x.org"}
    assert build_coedit(elog, TimeWindow(0, 100), include_bots=True).edges == {("a@x.org", "ci[bot]@x.org"): 3}
    assert build_bipartite(elog, TimeWindow(0, 100)).dev_nodes == {"a@x.org"}


def test_isolated_active_developers_are_nodes():
    elog = log_of([co(A, B, 10)], [ct(A, 10), ct(C, 11)])
    net = build_coedit(elog, TimeWindow(0, 100))
    assert net.nodes == {"a@x.org", "b@x.org", "c@x.org"}


def test_empty_window_is_flagged():
    elog = log_of([co(A, B, 10)], [ct(A, 10)])
    net = build_coedit(elog, TimeWindow(50, 60))
    assert net.empty_window and net.nodes == set() and net.edges == {}
    assert build_bipartite(elog, TimeWindow(50, 60)).empty_window


def test_bipartite_weights_and_shape():
    elog = log_of(contributions=[ct(A, 1, "f", 1, 0), ct(A, 2, "f", 1, 1)])
    assert build_bipartite(elog, TimeWindow(0, 10)).edges == {("a@x.org", "f"): 3}
    touches = [ct(A, 1, "f"), ct(A, 2, "g"), ct(B, 3, "g"), ct(B, 4, "h")]
    b = build_bipartite(log_of(contributions=touches), TimeWindow(0, 10))
    assert len(b.edges) == 4 and b.file_nodes == {"f", "g", "h"}
    assert all(d in b.dev_nodes and f in b.file_nodes for d, f in b.edges)
    assert not b.dev_nodes & b.file_nodes


def test_window_rejects_empty_interval():
    with pytest.raises(ValueError):
        TimeWindow(5, 5)


def test_projection_examples():
    w = TimeWindow(0, 1)
    one = BipartiteNetwork({"A"}, {"f", "g", "h"}, {("A", "f"): 1, ("A", "g"): 1, ("A", "h"): 1}, w)
    assert set(project_to_files(one).edges) == {frozenset(p) for p in [("f", "g"), ("f", "h"), ("g", "h")]}
    two = BipartiteNetwork({"A", "B"}, {"f", "g", "h"}, {("A", "f"): 1, ("A", "g"): 1, ("B", "h"): 1}, w)
    g = project_to_files(two)
    assert set(g.edges) == {frozenset(("f", "g"))} and g.nodes == {"f", "g", "h"}
    empty = project_to_files(BipartiteNetwork(set(), set(), {}, w))
    assert empty.nodes == set() and empty.edges == {}


def test_symmetrize_examples():
    w = TimeWindow(0, 1)
    assert symmetrize(CoEditNetwork({"A", "B"}, {("A", "B"): 3, ("B", "A"): 2}, w)).edges == {frozenset("AB"): 5}
    assert symmetrize(CoEditNetwork({"A", "B"}, {("A", "B"): 3}, w)).edges == {frozenset("AB"): 3}
    g = symmetrize(CoEditNetwork({"A", "B"}, {}, w))
    assert g.nodes == {"A", "B"} and g.edges == {}


def test_serialization(tmp_path):
    net = build_coedit(log_of([co(A, B, 10, 2), co(B, C, 11)]), TimeWindow(0, 100))
    assert network_csv(net).splitlines() == ["source,target,weight", "a@x.org,b@x.org,2", "b@x.org,c@x.org,1"]
    write_network(net, tmp_path / "n")
    side = json.loads((tmp_path / "n.json").read_text())
    assert side["type"] == "coedit" and side["nodes"] == sorted(net.nodes)
    assert side["window"] == {"start": "1970-01-01T00:00:00Z", "end": "1970-01-01T00:01:40Z"}


events = st.lists(st.tuples(st.sampled_from("ABCDE"), st.sampled_from("ABCDE"), st.integers(0, 99),
                            st.integers(1, 5), st.sampled_from("fgh")), max_size=40)


@settings(max_examples=80, deadline=None)
@given(events, st.integers(1, 98))
def test_window_additivity(evs, cut):
    elog = log_of([co(PEOPLE[a], PEOPLE[b], t, n, f) for a, b, t, n, f in evs if a != b],
                  [ct(PEOPLE[a], t, f, n) for a, _, t, n, f in evs])
    whole = build_coedit(elog, TimeWindow(0, 100)).edges
    left = build_coedit(elog, TimeWindow(0, cut)).edges
    right = build_coedit(elog, TimeWindow(cut, 100)).edges
    summed = dict(left)
    for k, v in right.items():
        summed[k] = summed.get(k, 0) + v
    assert summed == whole
    assert all(u != v and w >= 1 for (u, v), w in whole.items())
    b = build_bipartite(elog, TimeWindow(0, 100))
    by_dev = {}
    for d, f in b.edges:
        by_dev.setdefault(d, set()).add(f)
    proj = project_to_files(b)
    assert len(proj.edges) <= sum(len(fs) * (len(fs) - 1) // 2 for fs in by_dev.values())
    assert count_components(proj) == brute_components(proj.nodes, [tuple(e) for e in proj.edges])
