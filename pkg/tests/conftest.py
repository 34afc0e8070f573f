import random
import subprocess
from pathlib import Path

import pytest

from botcollab.synthetic import FastImport, Person

ALICE = Person("Alice", "alice@x.org")
BOB = Person("Bob", "bob@x.org")
CAROL = Person("Carol", "carol@x.org")
T0 = 1_600_000_000


def lines(*items):
    return "".join(f"{x}\n" for x in items)


def build_repo(path, steps):
    """steps: (person, changes, deletes) applied linearly, one hour apart."""
    fi = FastImport()
    head = None
    for i, step in enumerate(steps):
        person, changes, *rest = step
        deletes = rest[0] if rest else ()
        head = fi.commit(person, T0 + 3600 * i, f"c{i + 1}", parents=(head,) if head else (),
                         changes=changes, deletes=deletes)
    return fi.write(path)


def git(repo, *args) -> str:
    return subprocess.run(["git", "-C", str(repo), *args], capture_output=True, text=True, check=True).stdout


def blame_lines(repo, rev, path) -> list[tuple[str, str]]:
    """``(commit, author e-mail)`` per line of ``path`` at ``rev`` according to git blame."""
    out = git(repo, "blame", "--porcelain", rev, "--", path)
    mails, result = {}, []
    current = None
    for line in out.splitlines():
        parts = line.split(" ")
        if len(parts[0]) == 40 and all(c in "0123456789abcdef" for c in parts[0]) and len(parts) >= 3:
            current = parts[0]
        elif line.startswith("author-mail "):
            mails[current] = line[len("author-mail "):].strip("<>").lower()
        elif line.startswith("\t"):
            result.append((current, mails[current]))
    return result


def blame_owners(repo, rev, path) -> list[str]:
    return [mail for _, mail in blame_lines(repo, rev, path)]


def sample_blame_triples(repo, states, n, seed):
    """Random (commit, file, line) triples from replayed states, with the blame verdict."""
    rng = random.Random(seed)
    candidates = [(c, s) for c, s in states if s.files]
    picks = []
    for _ in range(50 * n):
        if len(picks) == n:
            break
        commit, state = rng.choice(candidates)
        path = rng.choice(sorted(state.files))
        if not state.files[path]:
            continue
        i = rng.randrange(len(state.files[path]))
        picks.append((commit, path, i, state.files[path][i].owner.canonical_key))
    return picks


@pytest.fixture
def three_commit_repo(tmp_path) -> Path:
    # c1 Alice writes three lines, c2 Bob rewrites L2, c3 Carol deletes L1 and L3 (both Alice's)
    return build_repo(tmp_path / "three", [
        (ALICE, {"f.txt": lines("a1", "a2", "a3")}),
        (BOB, {"f.txt": lines("a1", "b2", "a3")}),
        (CAROL, {"f.txt": lines("b2")}),
    ])


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
