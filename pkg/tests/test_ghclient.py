import base64
import json

import httpx
import pytest

from botcollab.errors import AuthFailure, NotFound, RateLimited
from botcollab.ghclient import GitHubClient, fixture_name, load_repo_list, profile_from_row

REPO = {"full_name": "octo/demo", "language": "Python", "stargazers_count": 42, "fork": False,
        "created_at": "2019-01-01T00:00:00Z", "pushed_at": "2022-05-01T00:00:00Z"}


def last_link(path, n):
    return {"link": f'<https://api.github.com{path}&page=2>; rel="next", <https://api.github.com{path}&page={n}>; rel="last"'}


def api(handler_map):
    """MockTransport answering from ``{path_with_query: (status, body, headers)}``."""
    calls = []

    def handle(request):
        key = request.url.raw_path.decode()
        calls.append(key)
        entry = handler_map.get(key)
        if entry is None:
            return httpx.Response(404, json={"message": "Not Found"})
        if callable(entry):
            entry = entry()
        status, body, headers = entry
        return httpx.Response(status, json=body, headers=headers)

    return httpx.MockTransport(handle), calls


def client(transport, **kw):
    kw.setdefault("requests_per_hour", 0)
    return GitHubClient("live", transport=transport, token="t", sleep=lambda s: None, **kw)


def test_profile_uses_link_header_counts():
    transport, _ = api({
        "/repos/octo/demo": (200, REPO, {}),
        "/repos/octo/demo/commits?per_page=1": (200, [{"commit": {"author": {"date": "2022-04-30T12:00:00Z"}}}],
                                                last_link("/repos/octo/demo/commits?per_page=1", 1234)),
        "/repos/octo/demo/contributors?per_page=1&anon=true": (200, [{}], last_link("/x?per_page=1", 17)),
        "/repos/octo/demo/pulls?state=all&per_page=1": (200, [], {}),
    })
    p = client(transport).fetch_repo_profile("octo/demo")
    assert (p.commits, p.contributors, p.pull_requests, p.stars) == (1234, 17, 0, 42)
    assert p.last_commit_at == 1651320000 and p.primary_language == "Python"


def test_rate_limit_is_retried_with_retry_after():
    state = {"n": 0}

    def flaky():
        state["n"] += 1
        if state["n"] < 3:
            return 429, {"message": "slow down"}, {"retry-after": "7"}
        return 200, REPO, {}

    transport, calls = api({"/repos/octo/demo": flaky})
    slept = []
    gh = GitHubClient("live", transport=transport, token="t", sleep=slept.append, requests_per_hour=0)
    assert gh.get("/repos/octo/demo")["body"]["full_name"] == "octo/demo"
    assert slept == [7.0, 7.0] and len(calls) == 3


def test_rate_limit_exhaustion_and_backoff():
    transport, calls = api({"/r": (403, {}, {"x-ratelimit-remaining": "0"})})
    slept = []
    gh = GitHubClient("live", transport=transport, token="t", sleep=slept.append, requests_per_hour=0,
                      max_attempts=3, backoff_base=0.5)
    with pytest.raises(RateLimited):
        gh.get("/r")
    assert slept == [0.5, 1.0, 2.0] and len(calls) == 3


def test_not_found_and_auth():
    transport, _ = api({"/private": (401, {}, {})})
    gh = client(transport)
    with pytest.raises(AuthFailure):
        gh.get("/private")
    with pytest.raises(NotFound):
        gh.get("/missing")
    assert gh.fetch_workflow_dir("octo/none") == []


def test_workflow_dir_decodes_contents():
    listing = [{"type": "file", "name": "ci.yml", "path": ".github/workflows/ci.yml"},
               {"type": "file", "name": "README.md", "path": ".github/workflows/README.md"},
               {"type": "dir", "name": "sub", "path": ".github/workflows/sub"}]
    text = "jobs: {}\n"
    transport, _ = api({
        "/repos/o/r/contents/.github/workflows": (200, listing, {}),
        "/repos/o/r/contents/.github/workflows/ci.yml":
            (200, {"encoding": "base64", "content": base64.b64encode(text.encode()).decode()}, {}),
    })
    assert client(transport).fetch_workflow_dir("o/r") == [(".github/workflows/ci.yml", text)]


def test_workflow_runs_paginate():
    def page(ids):
        return {"total_count": 5, "workflow_runs": [
            {"path": ".github/workflows/ci.yml@refs/heads/main", "run_started_at": f"2022-01-0{i}T00:00:00Z",
             "conclusion": "success"} for i in ids]}

    transport, calls = api({
        "/repos/o/r/actions/runs?per_page=2&page=1": (200, page([5, 4]), {}),
        "/repos/o/r/actions/runs?per_page=2&page=2": (200, page([3, 2]), {}),
        "/repos/o/r/actions/runs?per_page=2&page=3": (200, page([1]), {}),
    })
    runs = client(transport, per_page=2).fetch_workflow_runs("o/r")
    assert len(runs) == 5 and len(calls) == 3
    assert [r.run_started_at for r in runs] == sorted(r.run_started_at for r in runs)
    assert runs[0].workflow_file == ".github/workflows/ci.yml"


def test_record_then_replay(tmp_path):
    transport, calls = api({"/repos/octo/demo": (200, REPO, {})})
    rec = GitHubClient("record", fixture_dir=tmp_path / "fx", cache_dir=tmp_path / "cache", transport=transport,
                       token="t", requests_per_hour=0)
    rec.get("/repos/octo/demo")
    rec.get("/repos/octo/demo")  # served from the cache
    assert len(calls) == 1
    assert (tmp_path / "fx" / fixture_name("/repos/octo/demo")).exists()
    replay = GitHubClient("replay", fixture_dir=tmp_path / "fx")
    assert replay.get("/repos/octo/demo")["body"] == REPO
    with pytest.raises(NotFound):
        replay.get("/repos/octo/other")


def test_replay_fixture_envelope(tmp_path):
    (tmp_path / fixture_name("/gone")).write_text(json.dumps({"status": 404, "headers": {}, "body": None}))
    with pytest.raises(NotFound):
        GitHubClient("replay", fixture_dir=tmp_path).get("/gone")


def test_mode_validation():
    with pytest.raises(ValueError):
        GitHubClient("replay")
    with pytest.raises(ValueError):
        GitHubClient("bogus")


def test_repo_list_parsing(tmp_path):
    path = tmp_path / "repos.csv"
    path.write_text("full_name,language,stars,contributors,commits,is_fork,created_at,last_commit_at,pull_requests,extra\n"
                    "o/r,Go,5,3,100,True,2020-01-01,2021-01-01,,x\n")
    [(profile, row)] = load_repo_list(path)
    assert profile.is_fork and profile.pull_requests == 0 and row["extra"] == "x"
    (tmp_path / "bad.csv").write_text("full_name,stars\n")
    with pytest.raises(ValueError):
        load_repo_list(tmp_path / "bad.csv")
    with pytest.raises(ValueError):
        profile_from_row({"full_name": "o/r", "stars": "-1", "contributors": "1", "commits": "1",
                          "is_fork": "0", "created_at": "2020-01-01", "last_commit_at": "2020-01-02"})
