"""Network-level metrics for co-editing and contribution networks.

Structural metrics (degree, clustering, connectivity, assortativity) are taken
on the unweighted symmetrized graph; only the weighted degree uses weights.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .networks import BipartiteNetwork, CoEditNetwork, SimpleGraph, project_to_files, symmetrize

EIG_TOL = 1e-9

COEDIT_METRICS = ("avg_degree", "avg_weighted_degree", "density", "algebraic_connectivity",
                  "avg_clustering", "degree_assortativity")
BIPARTITE_METRICS = ("avg_degree_devs", "avg_degree_files", "avg_weighted_degree_devs",
                     "avg_weighted_degree_files", "bipartite_density", "file_projection_components")


@dataclass(frozen=True)
class MetricVector:
    avg_degree: float
    avg_weighted_degree: float
    density: float
    algebraic_connectivity: float
    avg_clustering: float
    degree_assortativity: float | None  # None when degrees at edge ends do not vary
    n_nodes: int
    n_edges: int

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BipartiteMetricVector:
    avg_degree_devs: float
    avg_degree_files: float
    avg_weighted_degree_devs: float
    avg_weighted_degree_files: float
    bipartite_density: float
    file_projection_components: int

    def as_dict(self) -> dict:
        return asdict(self)


def _matrices(g: SimpleGraph):
    order = sorted(g.nodes)
    index = {v: i for i, v in enumerate(order)}
    n = len(order)
    adj = np.zeros((n, n))
    weights = np.zeros((n, n))
    for e, w in g.edges.items():
        u, v = (index[x] for x in e)
        adj[u, v] = adj[v, u] = 1.0
        weights[u, v] = weights[v, u] = w
    return adj, weights


def laplacian_lambda2(g: SimpleGraph) -> float:
    """Second-smallest eigenvalue of the unweighted Laplacian ``D - A``."""
    adj, _ = _matrices(g)
    return _lambda2(adj)


def _lambda2(adj: np.ndarray) -> float:
    n = adj.shape[0]
    if n <= 1:
        return 0.0
    lap = np.diag(adj.sum(axis=1)) - adj
    value = float(np.linalg.eigvalsh(lap)[1])
    return 0.0 if value < EIG_TOL else value


def _clustering(adj: np.ndarray) -> float:
    n = adj.shape[0]
    if n == 0:
        return 0.0
    deg = adj.sum(axis=1)
    closed = np.einsum("ij,jk,ki->i", adj, adj, adj) / 2.0
    possible = deg * (deg - 1) / 2.0
    local = np.divide(closed, possible, out=np.zeros(n), where=deg >= 2)
    return float(local.mean())


def _assortativity(adj: np.ndarray) -> float | None:
    deg = adj.sum(axis=1)
    src, dst = np.nonzero(adj)  # each undirected edge appears in both orientations
    if src.size == 0:
        return None
    x, y = deg[src], deg[dst]
    if np.ptp(x) == 0:
        return None
    r = float(np.corrcoef(x, y)[0, 1])
    return max(-1.0, min(1.0, r))


def coedit_metrics(n: CoEditNetwork) -> MetricVector:
    g = symmetrize(n)
    adj, weights = _matrices(g)
    size = adj.shape[0]
    m_dir = len(n.edges)
    if size == 0:
        return MetricVector(0.0, 0.0, 0.0, 0.0, 0.0, None, 0, 0)
    density = m_dir / (size * (size - 1)) if size > 1 else 0.0
    return MetricVector(
        avg_degree=float(adj.sum(axis=1).mean()),
        avg_weighted_degree=float(weights.sum(axis=1).mean()),
        density=density,
        algebraic_connectivity=_lambda2(adj),
        avg_clustering=_clustering(adj),
        degree_assortativity=_assortativity(adj),
        n_nodes=size,
        n_edges=m_dir,
    )


def count_components(g: SimpleGraph) -> int:
    if not g.nodes:
        return 0
    index = {v: i for i, v in enumerate(sorted(g.nodes))}
    rows = [index[tuple(e)[0]] for e in g.edges]
    cols = [index[tuple(e)[1]] for e in g.edges]
    mat = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(index), len(index)))
    count, _ = connected_components(mat, directed=False)
    return int(count)


def bipartite_metrics(b: BipartiteNetwork) -> BipartiteMetricVector:
    n_dev, n_file = len(b.dev_nodes), len(b.file_nodes)
    m = len(b.edges)
    total = float(sum(b.edges.values()))
    if n_dev == 0 or n_file == 0:
        return BipartiteMetricVector(0.0, 0.0, 0.0, 0.0, 0.0, count_components(project_to_files(b)))
    return BipartiteMetricVector(
        avg_degree_devs=m / n_dev,
        avg_degree_files=m / n_file,
        avg_weighted_degree_devs=total / n_dev,
        avg_weighted_degree_files=total / n_file,
        bipartite_density=m / (n_dev * n_file),
        file_projection_components=count_components(project_to_files(b)),
    )


def is_undefined(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))
