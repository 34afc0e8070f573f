"""Hypothesis tests for the inter- and intra-project comparisons.

Both rank tests enumerate their permutation distribution exactly for small
samples (mid-ranks, so ties are handled exactly too) and fall back to the
normal approximation with tie correction above ``EXACT_MAX_N``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .errors import AllZeroDifferences, TooFewPlacebos
from .metrics import is_undefined

log = logging.getLogger(__name__)

EXACT_MAX_N = 12
MIN_PLACEBOS = 5
_TOL = 1e-9

MANN_WHITNEY = "mann_whitney_u"
WILCOXON = "wilcoxon_signed_rank"
PLACEBO = "placebo_empirical"
WELCH_T = "welch_t"
PAIRED_T = "paired_t"


@dataclass(frozen=True)
class TestResult:
    metric_name: str
    method: str
    statistic: float
    p_value: float
    n1: int
    n2: int
    effect_size: float | None
    exact: bool
    flags: tuple[str, ...] = ()
    dropped: int = 0


@dataclass(frozen=True)
class PlaceboDistribution:
    deltas: tuple[float, ...]
    observed: float


@dataclass
class _Clean:
    values: list = field(default_factory=list)
    dropped: int = 0


def _clean(values) -> _Clean:
    kept = [float(v) for v in values if not is_undefined(v)]
    return _Clean(kept, len(values) - len(kept))


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> float:
    """P(a > b) - P(a < b) over all cross pairs."""
    if not a or not b:
        return 0.0
    a_arr = np.asarray(a, dtype=float)[:, None]
    b_arr = np.asarray(b, dtype=float)[None, :]
    return float(((a_arr > b_arr).sum() - (a_arr < b_arr).sum()) / (a_arr.size * b_arr.size))


def _two_sided_exact(null_stats: np.ndarray, observed: float, center: float) -> float:
    extreme = np.abs(null_stats - center) >= abs(observed - center) - _TOL
    return float(extreme.mean())


def mann_whitney_u(a, b, metric_name: str = "") -> TestResult:
    """Two-sided Mann-Whitney U test with Cliff's delta as effect size.

    The statistic is U for the first sample. Undefined values are dropped
    first and their number reported.
    """
    ca, cb = _clean(list(a)), _clean(list(b))
    xa, xb = ca.values, cb.values
    dropped = ca.dropped + cb.dropped
    n1, n2 = len(xa), len(xb)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples need at least one defined value")
    flags = ("dropped_undefined",) if dropped else ()
    combined = np.asarray(xa + xb)
    ranks = sps.rankdata(combined)
    u_obs = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2)
    center = n1 * n2 / 2
    delta = cliffs_delta(xa, xb)
    if np.ptp(combined) == 0:
        return TestResult(metric_name, MANN_WHITNEY, u_obs, 1.0, n1, n2, delta, False,
                          flags + ("degenerate_sample",), dropped)
    n = n1 + n2
    if n <= EXACT_MAX_N:
        null = np.array([ranks[list(idx)].sum() for idx in combinations(range(n), n1)])
        null -= n1 * (n1 + 1) / 2
        p = _two_sided_exact(null, u_obs, center)
        return TestResult(metric_name, MANN_WHITNEY, u_obs, min(1.0, p), n1, n2, delta, True, flags, dropped)
    _, counts = np.unique(combined, return_counts=True)
    tie_term = float((counts**3 - counts).sum()) / (n * (n - 1))
    sigma = math.sqrt(n1 * n2 / 12.0 * ((n + 1) - tie_term))
    z = max(0.0, abs(u_obs - center) - 0.5) / sigma
    p = min(1.0, 2.0 * float(sps.norm.sf(z)))
    return TestResult(metric_name, MANN_WHITNEY, u_obs, p, n1, n2, delta, False, flags, dropped)


def wilcoxon_signed_rank(pairs, metric_name: str = "") -> TestResult:
    """Two-sided signed-rank test on ``after - before``.

    Zero differences are dropped (count in ``dropped``). The statistic is the
    sum of positive ranks; the effect size is the matched-pairs rank-biserial
    correlation.
    """
    diffs, dropped_undefined, zeros = [], 0, 0
    for before, after in pairs:
        if is_undefined(before) or is_undefined(after):
            dropped_undefined += 1
            continue
        d = float(after) - float(before)
        if abs(d) <= _TOL * max(1.0, abs(float(before)), abs(float(after))):
            zeros += 1
            continue
        diffs.append(d)
    if not diffs:
        raise AllZeroDifferences(f"{metric_name or 'metric'}: every paired difference is zero")
    d = np.asarray(diffs)
    ranks = sps.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    total = float(ranks.sum())
    center = total / 2
    effect = (2 * w_plus - total) / total
    n = len(d)
    flags = []
    if dropped_undefined:
        flags.append("dropped_undefined")
    if zeros:
        flags.append("dropped_zero_differences")
    dropped = dropped_undefined + zeros
    if n <= EXACT_MAX_N:
        signs = np.array(list(product((0.0, 1.0), repeat=n)))
        null = signs @ ranks
        p = _two_sided_exact(null, w_plus, center)
        return TestResult(metric_name, WILCOXON, w_plus, min(1.0, p), n, n, effect, True, tuple(flags), dropped)
    _, counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((counts**3 - counts).sum()) / 48.0
    if var <= 0:
        return TestResult(metric_name, WILCOXON, w_plus, 1.0, n, n, effect, False, tuple(flags), dropped)
    z = abs(w_plus - center) / math.sqrt(var)
    p = min(1.0, 2.0 * float(sps.norm.sf(z)))
    return TestResult(metric_name, WILCOXON, w_plus, p, n, n, effect, False, tuple(flags), dropped)


def _looks_normal(values, alpha=0.05) -> bool:
    if len(values) < 3 or np.ptp(values) == 0:
        return False
    return float(sps.shapiro(values).pvalue) > alpha


def two_sample_test(a, b, metric_name="", parametric_if_normal=False) -> TestResult:
    """Mann-Whitney by default; Welch's t when asked and both samples pass Shapiro."""
    if parametric_if_normal:
        xa, xb = _clean(list(a)), _clean(list(b))
        if _looks_normal(xa.values) and _looks_normal(xb.values):
            res = sps.ttest_ind(xa.values, xb.values, equal_var=False)
            return TestResult(metric_name, WELCH_T, float(res.statistic), float(res.pvalue),
                              len(xa.values), len(xb.values), cliffs_delta(xa.values, xb.values), False,
                              (), xa.dropped + xb.dropped)
    return mann_whitney_u(a, b, metric_name)


def paired_test(pairs, metric_name="", parametric_if_normal=False) -> TestResult:
    if parametric_if_normal:
        kept = [(x, y) for x, y in pairs if not (is_undefined(x) or is_undefined(y))]
        diffs = [y - x for x, y in kept]
        if _looks_normal(diffs):
            res = sps.ttest_rel([y for _, y in kept], [x for x, _ in kept])
            return TestResult(metric_name, PAIRED_T, float(res.statistic), float(res.pvalue),
                              len(kept), len(kept), None, False, (), len(pairs) - len(kept))
    return wilcoxon_signed_rank(pairs, metric_name)


def placebo_pvalue(d: PlaceboDistribution, metric_name: str = "") -> TestResult:
    """Add-one empirical p: share of placebo changes at least as large as the observed one."""
    deltas = [x for x in d.deltas if not is_undefined(x)]
    k = len(deltas)
    if k < MIN_PLACEBOS:
        raise TooFewPlacebos(f"need at least {MIN_PLACEBOS} placebo changes, got {k}")
    if is_undefined(d.observed):
        return TestResult(metric_name, PLACEBO, float("nan"), 1.0, k, 1, None, True, ("undefined_observed",),
                          len(d.deltas) - k)
    obs = abs(float(d.observed))
    hits = sum(1 for x in deltas if abs(x) >= obs - _TOL * max(1.0, obs))
    p = (1 + hits) / (1 + k)
    return TestResult(metric_name, PLACEBO, float(d.observed), p, k, 1, None, True, (), len(d.deltas) - k)


def bh_adjust(pvalues: Sequence[float]) -> list[float]:
    """Benjamini-Hochberg step-up adjustment, returned in input order."""
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    if m == 0:
        return []
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out.tolist()
