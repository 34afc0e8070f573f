"""Independent reference implementations used as test oracles.

They deliberately share no code with the package: plain Python loops over
adjacency sets, exhaustive enumeration for the rank tests, and calendar
arithmetic through ``datetime``.
"""
import math
from datetime import date, timedelta
from fractions import Fraction
from itertools import combinations, product

import numpy as np


# --- graphs -------------------------------------------------------------------

def undirected(nodes, directed_edges):
    adj = {v: set() for v in nodes}
    weight = {}
    for (u, v), w in directed_edges.items():
        adj[u].add(v)
        adj[v].add(u)
        key = frozenset((u, v))
        weight[key] = weight.get(key, 0) + w
    return adj, weight


def brute_lambda2(adj):
    order = sorted(adj)
    n = len(order)
    if n <= 1:
        return 0.0
    L = [[0.0] * n for _ in range(n)]
    for i, u in enumerate(order):
        for j, v in enumerate(order):
            if i == j:
                L[i][j] = float(len(adj[u]))
            elif v in adj[u]:
                L[i][j] = -1.0
    # general (non-symmetric) eigensolver, sorted real parts
    vals = sorted(np.linalg.eigvals(np.array(L)).real)
    return max(0.0, vals[1]) if abs(vals[1]) > 1e-9 else 0.0


def brute_clustering(adj):
    if not adj:
        return 0.0
    total = 0.0
    for v, nbrs in adj.items():
        k = len(nbrs)
        if k < 2:
            continue
        links = sum(1 for a, b in combinations(sorted(nbrs), 2) if b in adj[a])
        total += links / (k * (k - 1) / 2)
    return total / len(adj)


def brute_assortativity(adj):
    xs, ys = [], []
    for u in adj:
        for v in adj[u]:
            xs.append(len(adj[u]))
            ys.append(len(adj[v]))
    if not xs:
        return None
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0 or syy == 0:
        return None
    return sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / math.sqrt(sxx * syy)


def brute_coedit_metrics(nodes, directed_edges):
    adj, weight = undirected(nodes, directed_edges)
    n = len(adj)
    if n == 0:
        return dict(avg_degree=0.0, avg_weighted_degree=0.0, density=0.0, algebraic_connectivity=0.0,
                    avg_clustering=0.0, degree_assortativity=None)
    wdeg = {v: 0.0 for v in adj}
    for key, w in weight.items():
        for v in key:
            wdeg[v] += w
    return dict(
        avg_degree=sum(len(s) for s in adj.values()) / n,
        avg_weighted_degree=sum(wdeg.values()) / n,
        density=len(directed_edges) / (n * (n - 1)) if n > 1 else 0.0,
        algebraic_connectivity=brute_lambda2(adj),
        avg_clustering=brute_clustering(adj),
        degree_assortativity=brute_assortativity(adj),
    )


def brute_components(nodes, edges):
    adj = {v: set() for v in nodes}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen, count = set(), 0
    for start in sorted(adj):
        if start in seen:
            continue
        count += 1
        stack = [start]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(adj[v] - seen)
    return count


def brute_bipartite_metrics(dev_file_weights):
    devs = {d for d, _ in dev_file_weights}
    files = {f for _, f in dev_file_weights}
    m = len(dev_file_weights)
    total = sum(dev_file_weights.values())
    proj = set()
    for d in devs:
        mine = sorted(f for dd, f in dev_file_weights if dd == d)
        proj.update(combinations(mine, 2))
    if not devs:
        return dict(avg_degree_devs=0.0, avg_degree_files=0.0, avg_weighted_degree_devs=0.0,
                    avg_weighted_degree_files=0.0, bipartite_density=0.0, file_projection_components=0)
    return dict(avg_degree_devs=m / len(devs), avg_degree_files=m / len(files),
                avg_weighted_degree_devs=total / len(devs), avg_weighted_degree_files=total / len(files),
                bipartite_density=m / (len(devs) * len(files)),
                file_projection_components=brute_components(files, proj))


# --- rank tests -----------------------------------------------------------------

def doubled_midranks(values):
    """Twice the 1-based midrank of each value, so ties stay integral."""
    order = sorted(values)
    out = []
    for v in values:
        lo = order.index(v)
        hi = len(order) - order[::-1].index(v)
        out.append(lo + 1 + hi)
    return out


def enum_mann_whitney_p(a, b):
    """Exact two-sided p over every relabelling of the pooled sample."""
    pooled = list(a) + list(b)
    ranks = doubled_midranks(pooled)
    n1 = len(a)
    # 2 * (rank sum - expected rank sum) for the first sample
    expected2 = n1 * (len(pooled) + 1)
    obs = abs(sum(ranks[:n1]) - expected2)
    hits = total = 0
    for idx in combinations(ranks, n1):
        total += 1
        hits += abs(sum(idx) - expected2) >= obs
    return Fraction(hits, total)


def enum_wilcoxon_p(diffs):
    diffs = [d for d in diffs if d != 0]
    ranks = doubled_midranks([abs(d) for d in diffs])
    total_rank = sum(ranks)
    obs = abs(2 * sum(r for r, d in zip(ranks, diffs) if d > 0) - total_rank)
    hits = total = 0
    for signs in product((0, 1), repeat=len(diffs)):
        total += 1
        hits += abs(2 * sum(r for r, s in zip(ranks, signs) if s) - total_rank) >= obs
    return Fraction(hits, total)


# --- dates ----------------------------------------------------------------------

def phase_windows(t_ga: date, exclusion=15, phase=183):
    lo, hi = t_ga - timedelta(days=exclusion), t_ga + timedelta(days=exclusion)
    return (lo - timedelta(days=phase), lo), (hi, hi + timedelta(days=phase))
