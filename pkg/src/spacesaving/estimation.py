"""Subset-sum queries, the variance estimate and normal confidence intervals.

Any summary exposing ``bins()`` (label, adjusted count) and
``variance_estimate(hits)`` (the ``(label, adjusted count)`` pairs that fall
in a subset) can be queried; the Space Saving sketch and the sampling
baselines all do.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .validation import InvalidInputError, check_level


def normal_quantile(p):
    """Standard normal quantile function."""
    if not (0.0 < p < 1.0):
        raise InvalidInputError(f"probability must lie in (0, 1), got {p!r}")
    return float(ndtri(p))


class SubsetQuery:
    """A set of items given explicitly or by a membership predicate."""

    def __init__(self, members=None, predicate: Optional[Callable] = None, name=None):
        if (members is None) == (predicate is None):
            raise InvalidInputError("give exactly one of members or predicate")
        self.members = frozenset(members) if members is not None else None
        self.predicate = predicate
        self.name = name

    def __contains__(self, item):
        if self.members is not None:
            return item in self.members
        return bool(self.predicate(item))

    def __len__(self):
        if self.members is None:
            raise TypeError("predicate queries have no length")
        return len(self.members)

    def __repr__(self):
        if self.members is not None:
            return f"SubsetQuery({len(self.members)} items, name={self.name!r})"
        return f"SubsetQuery(predicate={self.predicate!r}, name={self.name!r})"

    def true_count(self, ground_truth):
        if self.members is not None:
            return sum(ground_truth.count(i) for i in self.members)
        return sum(c for i, c in ground_truth.items() if self.predicate(i))


def as_query(query):
    if isinstance(query, SubsetQuery):
        return query
    if callable(query):
        return SubsetQuery(predicate=query)
    return SubsetQuery(members=query)


@dataclass
class QueryResult:
    estimate: float
    variance: float
    ci_low: float
    ci_high: float
    level: float
    c_s: int

    def to_dict(self):
        return {
            "estimate": float(self.estimate),
            "variance": float(self.variance),
            "ci_low": float(self.ci_low),
            "ci_high": float(self.ci_high),
            "level": float(self.level),
            "c_s": int(self.c_s),
        }

    def covers(self, truth):
        return self.ci_low <= truth <= self.ci_high


def sketch_variance(n_min, c_s):
    """``N_min**2 * C_S`` with ``C_S`` floored at one."""
    return float(n_min) ** 2 * max(1, int(c_s))


def normal_interval(estimate, variance, level=0.95):
    """Two-sided normal interval truncated below at zero."""
    level = check_level(level)
    z = normal_quantile(0.5 + level / 2.0)
    half = z * float(np.sqrt(max(variance, 0.0)))
    return max(0.0, estimate - half), estimate + half


def subset_sum(summary, query, level=0.95):
    """Estimate the total count of the items in ``query``."""
    q = as_query(query)
    hits = [(lab, c) for lab, c in summary.bins() if lab in q]
    estimate = float(sum(c for _, c in hits))
    variance = float(summary.variance_estimate(hits))
    lo, hi = normal_interval(estimate, variance, level)
    return QueryResult(estimate, variance, lo, hi, float(level), max(1, len(hits)))


def pps_variance_bound(n, pi, alpha):
    """Variance bound ``alpha * n * (1 - pi)`` of a fixed-size PPS sample.

    ``alpha`` is the threshold in count units, so that ``pi = min(1, n / alpha)``.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0) or np.any(pi > 1):
        raise InvalidInputError("inclusion probabilities must lie in [0, 1]")
    out = alpha * np.asarray(n, dtype=np.float64) * (1.0 - pi)
    return float(out) if out.ndim == 0 else out


def coverage(results):
    """Fraction of ``(QueryResult, truth)`` pairs whose interval holds the truth."""
    results = list(results)
    if not results:
        raise InvalidInputError("coverage needs at least one result")
    hits = sum(1 for r, truth in results if r.ci_low <= truth <= r.ci_high)
    return hits / len(results)
