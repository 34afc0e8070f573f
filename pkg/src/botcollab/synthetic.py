"""Scripted git repositories built through ``git fast-import``.

Two generators live here. ``random_history`` produces messy multi-author
histories (branches, merges, renames, deletions) for checking line ownership
against ``git blame``. ``study_repo`` produces a long-lived team repository
whose co-editing pattern can change at a planted adoption time, with a
workflow file that introduces a Code Review action at that moment.
"""
from __future__ import annotations

import random
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

DAY = 86400


@dataclass
class Person:
    name: str
    email: str


class FastImport:
    """Accumulates a fast-import stream for a single ``main`` branch graph."""

    def __init__(self):
        self._chunks: list[bytes] = []
        self._mark = 0

    def commit(self, author: Person, when: int, message: str, parents=(), changes=None,
               deletes=(), ref="refs/heads/main") -> int:
        self._mark += 1
        out = [f"commit {ref}\nmark :{self._mark}\n".encode()]
        ident = f"{author.name} <{author.email}> {when} +0000\n"
        out.append(b"author " + ident.encode())
        out.append(b"committer " + ident.encode())
        msg = message.encode()
        out.append(b"data %d\n%s\n" % (len(msg), msg))
        if parents:
            out.append(f"from :{parents[0]}\n".encode())
            for p in parents[1:]:
                out.append(f"merge :{p}\n".encode())
        for path in deletes:
            out.append(f"D {path}\n".encode())
        for path, content in (changes or {}).items():
            data = content.encode() if isinstance(content, str) else content
            out.append(f"M 100644 inline {path}\n".encode())
            out.append(b"data %d\n%s\n" % (len(data), data))
        self._chunks.append(b"".join(out))
        return self._mark

    def write(self, path, branch="main") -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        subprocess.run(["git", "init", "-q", "-b", branch, str(path)], check=True)
        stream = b"".join(self._chunks) + b"done\n"
        subprocess.run(["git", "-C", str(path), "fast-import", "--quiet", "--done"],
                       input=stream, check=True)
        subprocess.run(["git", "-C", str(path), "reset", "-q", "--hard", branch], check=True)
        return path


def _text(lines: list[str]) -> str:
    return "".join(line + "\n" for line in lines)


@dataclass
class _Branch:
    head: int
    files: dict[str, list[str]] = field(default_factory=dict)
    touched: set[str] = field(default_factory=set)


def random_history(path, seed: int, n_commits: int = 200, n_authors: int = 5,
                   branch_prob: float = 0.08, start: int = 1_500_000_000) -> Path:
    """A random multi-author history with side branches merged back into main.

    Side branches only touch files main leaves alone while they are open, so
    every merge is conflict-free; a share of merges also edit a few lines
    themselves.
    """
    rng = random.Random(seed)
    people = [Person(f"Dev {i}", f"dev{i}@example.org") for i in range(n_authors)]
    fi = FastImport()
    counter = [0]

    def fresh_line():
        counter[0] += 1
        # a few repeated lines exercise diff slider ambiguity
        if rng.random() < 0.05:
            return rng.choice(["", "}", "pass"])
        return f"line {counter[0]} {rng.randrange(10**6)}"

    def mutate(files: dict[str, list[str]], allowed: set[str] | None):
        changes, deletes = {}, []
        candidates = sorted(p for p in files if allowed is None or p in allowed)
        action = rng.random()
        if not candidates or action < 0.12:
            name = f"src/f{counter[0]}_{rng.randrange(1000)}.txt"
            files[name] = [fresh_line() for _ in range(rng.randint(3, 25))]
            changes[name] = _text(files[name])
            return changes, deletes, {name}
        target = rng.choice(candidates)
        if action < 0.16 and len(files) > 2:
            del files[target]
            return changes, [target], {target}
        if action < 0.20:
            new = target.replace(".txt", "") + f"_r{counter[0]}.txt"
            files[new] = files.pop(target)
            deletes.append(target)
            changes[new] = _text(files[new])
            return changes, deletes, {target, new}
        lines = files[target]
        for _ in range(rng.randint(1, 3)):
            op = rng.random()
            i = rng.randrange(len(lines) + 1)
            if op < 0.4 and lines:
                j = min(len(lines), i + rng.randint(1, 3))
                lines[i:j] = [fresh_line() for _ in range(rng.randint(1, 3))]
            elif op < 0.7 or not lines:
                lines[i:i] = [fresh_line() for _ in range(rng.randint(1, 4))]
            else:
                del lines[i:i + rng.randint(1, 2)]
        changes[target] = _text(lines)
        return changes, deletes, {target}

    t = start
    first_files = {"README.md": ["readme " + str(seed)], "src/base.txt": [fresh_line() for _ in range(10)]}
    root = fi.commit(people[0], t, "root", changes={p: _text(v) for p, v in first_files.items()})
    main = _Branch(root, {p: list(v) for p, v in first_files.items()})
    side: _Branch | None = None
    for i in range(1, n_commits):
        t += rng.randint(600, 3 * DAY)
        author = rng.choice(people)
        if side is None and rng.random() < branch_prob and len(main.files) > 3:
            side = _Branch(main.head, {p: list(v) for p, v in main.files.items()})
            reserved = set(rng.sample(sorted(main.files), k=max(1, len(main.files) // 3)))
            side.touched = reserved
        if side is not None and rng.random() < 0.45:
            changes, deletes, _ = mutate(side.files, side.touched)
            if changes or deletes:
                side.touched |= set(changes)
                side.head = fi.commit(author, t, f"side {i}", parents=(side.head,), changes=changes,
                                      deletes=deletes)
            continue
        if side is not None and rng.random() < 0.25:
            # merge: main's files plus the side branch's versions of its reserved files
            merged = {p: list(v) for p, v in main.files.items() if p not in side.touched}
            merged.update({p: list(v) for p, v in side.files.items() if p in side.touched})
            changes = {p: _text(v) for p, v in merged.items() if main.files.get(p) != v}
            deletes = [p for p in main.files if p not in merged]
            if rng.random() < 0.3 and merged:
                target = rng.choice(sorted(merged))
                merged[target].append(fresh_line())
                changes[target] = _text(merged[target])
            main = _Branch(fi.commit(author, t, f"merge {i}", parents=(main.head, side.head),
                                     changes=changes, deletes=deletes), merged)
            side = None
            continue
        allowed = None if side is None else set(main.files) - side.touched
        changes, deletes, _ = mutate(main.files, allowed)
        if side is not None:
            side.touched |= set(changes) | set(deletes)
        main.head = fi.commit(author, t, f"main {i}", parents=(main.head,), changes=changes, deletes=deletes)
    if side is not None:
        merged = {p: list(v) for p, v in main.files.items() if p not in side.touched}
        merged.update({p: list(v) for p, v in side.files.items() if p in side.touched})
        changes = {p: _text(v) for p, v in merged.items() if main.files.get(p) != v}
        deletes = [p for p in main.files if p not in merged]
        fi.commit(people[0], t + 60, "final merge", parents=(main.head, side.head), changes=changes,
                  deletes=deletes)
    return fi.write(path)


CODECOV_WORKFLOW = """name: ci
on: [push, pull_request]
jobs:
  test:
    runs-on: ubuntu-latest
    steps:
      - uses: actions/checkout@v3
      - uses: actions/setup-python@v4
      - run: pytest --cov
      - uses: codecov/codecov-action@v3
"""

BASE_WORKFLOW = """name: ci
on: [push]
jobs:
  test:
    runs-on: ubuntu-latest
    steps:
      - uses: actions/checkout@v3
      - run: make test
"""


def study_repo(path, seed: int, start: int, days: int, t_ga: int | None, effect: bool,
               n_devs: int = 8, commits_per_day: float = 1.0, partners_before: int = 2,
               partners_after: int = 4, noise: float = 0.03) -> Path:
    """A team repository whose co-editing density changes at ``t_ga``.

    Each developer co-edits a fixed set of partners: ``partners_before``
    partners before ``t_ga`` and ``partners_after`` afterwards when ``effect``
    is set, so directed density roughly doubles. With a small probability an
    edit hits a random other developer. When ``t_ga`` is given a workflow file
    adding ``codecov/codecov-action`` is committed at that time; otherwise only
    a plain CI workflow exists.
    """
    rng = random.Random(seed)
    devs = [Person(f"Dev{i}", f"dev{i}@team{seed}.org") for i in range(n_devs)]
    fi = FastImport()
    files: dict[str, list[tuple[int, str]]] = {}
    counter = [0]

    def line(owner: int) -> tuple[int, str]:
        counter[0] += 1
        return owner, f"{counter[0]} {rng.randrange(10**9)}"

    def partners(dev: int, k: int) -> list[int]:
        return [(dev + j) % n_devs for j in range(1, k + 1)]

    # every developer starts with an owned file so partners always have lines to edit
    for d in range(n_devs):
        files[f"mod/d{d}_0.py"] = [line(d) for _ in range(30)]
    init = {p: _text([s for _, s in v]) for p, v in files.items()}
    init[".github/workflows/build.yml"] = BASE_WORKFLOW
    head = fi.commit(devs[0], start, "initial import", changes=init)
    t = start + 3600
    end = start + days * DAY
    workflow_done = t_ga is None
    mean_gap = DAY / commits_per_day
    while True:
        t += max(60, int(rng.expovariate(1.0 / mean_gap)))
        if not workflow_done and t >= t_ga:
            head = fi.commit(devs[rng.randrange(n_devs)], t_ga, "add coverage upload", parents=(head,),
                             changes={".github/workflows/build.yml": CODECOV_WORKFLOW})
            workflow_done = True
        if t >= end:
            break
        dev = rng.randrange(n_devs)
        after = t_ga is not None and t >= t_ga
        k = partners_after if (effect and after) else partners_before
        if rng.random() < noise:
            target = rng.choice([d for d in range(n_devs) if d != dev])
        else:
            target = rng.choice(partners(dev, k))
        owned = [(p, i) for p in sorted(files) for i, (o, _) in enumerate(files[p]) if o == target]
        changes = {}
        if owned:
            p, i = rng.choice(owned)
            files[p][i] = line(dev)
            changes[p] = p
        # fresh lines keep every developer's pool of owned lines from drying up
        mine = [p for p in sorted(files) if p.startswith(f"mod/d{dev}_")]
        p = mine[-1]
        if len(files[p]) > 200:
            p = f"mod/d{dev}_{len(mine)}.py"
            files[p] = []
        files[p].extend(line(dev) for _ in range(rng.randint(1, 3)))
        changes[p] = p
        head = fi.commit(devs[dev], t, f"work {counter[0]}", parents=(head,),
                         changes={q: _text([s for _, s in files[q]]) for q in changes})
    return fi.write(path)


REPO_LIST_HEADER = ("full_name", "language", "stars", "contributors", "commits", "is_fork", "created_at",
                    "last_commit_at", "pull_requests", "path")


def study_corpus(root, seed: int, effect: bool, n_treated: int = 8, n_controls: int = 4, days: int = 1460,
                 start: int = 1_546_300_800, language: str = "Python", **repo_kw) -> Path:
    """A directory of study repositories plus the matching ``repos.csv``.

    Treated repositories adopt the Code Review action halfway through their
    history (with a few days of jitter); controls never do. Returns the path
    of the repository list, whose ``path`` column points at each clone.
    """
    import csv

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    rows = []
    for i in range(n_treated + n_controls):
        treated = i < n_treated
        name = f"{'treated' if treated else 'control'}-{i:02d}"
        t_ga = start + (days // 2 + rng.randint(-20, 20)) * DAY if treated else None
        path = study_repo(root / name, seed * 1000 + i, start, days, t_ga, effect and treated, **repo_kw)
        commits = int(subprocess.run(["git", "-C", str(path), "rev-list", "--count", "HEAD"],
                                     capture_output=True, text=True, check=True).stdout)
        last = int(subprocess.run(["git", "-C", str(path), "log", "-1", "--format=%at"],
                                  capture_output=True, text=True, check=True).stdout)
        rows.append((f"synth/{name}", language, 50 + rng.randint(0, 50), repo_kw.get("n_devs", 8), commits,
                     "false", start, last, 20 + rng.randint(0, 20), name))
    repo_list = root / "repos.csv"
    with open(repo_list, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPO_LIST_HEADER)
        w.writerows(rows)
    return repo_list
