"""Size-reduction operators shared by the frequent-item sketch family.

``to_misra_gries`` is the biased soft-threshold view of a Space Saving
sketch. ``reduce_pps`` is the unbiased counterpart: a fixed-size sample with
thresholded PPS inclusion probabilities ``min(1, alpha * n_i)`` whose kept
entries carry Horvitz-Thompson adjusted counts ``n_i / pi_i``.
"""

from dataclasses import dataclass, field
from typing import Any, List, Tuple

import numpy as np

from . import _kernels
from .validation import check_capacity, check_random_state, rng_words

MISRA_GRIES = "misra_gries"
THRESHOLDED_PPS = "thresholded_pps"

_BISECT_TOL = 1e-12
_BISECT_MAX_ITER = 200


@dataclass
class ReducedSummary:
    entries: List[Tuple[Any, float]] = field(default_factory=list)
    reduction_kind: str = THRESHOLDED_PPS

    def as_dict(self):
        return dict(self.entries)

    def __len__(self):
        return len(self.entries)


def to_misra_gries(sketch):
    """Soft-threshold every bin of ``sketch`` by its minimum count.

    Entries are ``(count - min_count)_+`` with zeros dropped. Below capacity
    the minimum count is 0 and the counts pass through unchanged.
    """
    floor = sketch.min_count()
    entries = [(label, c - floor) for label, c in sketch.bins() if c > floor]
    entries.sort(key=lambda e: -e[1])
    return ReducedSummary(entries, MISRA_GRIES)


def solve_threshold(values, target):
    """Find ``alpha`` with ``sum(min(1, alpha * v)) == target``.

    Bisection on ``(0, target / min(v)]`` locates which values are clipped
    at 1; ``alpha`` is then solved in closed form on that partition so the
    residual sits at rounding level. Returns ``(alpha, pi)``.
    """
    v = np.asarray(values, dtype=np.float64)
    n = v.shape[0]
    if n == 0:
        return 0.0, v.copy()
    if target >= n:
        return np.inf, np.ones(n)
    if np.all(v == v[0]):
        alpha = target / (n * v[0])
        return alpha, np.full(n, target / n)
    alpha = _kernels.threshold_alpha(v, float(target), _BISECT_TOL, _BISECT_MAX_ITER)
    pi = np.minimum(1.0, alpha * v)
    return alpha, pi


def threshold_residual(values, target):
    alpha, pi = solve_threshold(values, target)
    if not np.isfinite(alpha):
        return 0.0
    return float(abs(pi.sum() - target))


def systematic_sample(pi, rng_state):
    """Fixed-size sample with exact marginal inclusion probabilities ``pi``.

    Units are visited in a random order; one uniform start ``u`` selects every
    unit whose cumulative interval contains ``u + j`` for integer ``j``.
    """
    pi = np.ascontiguousarray(pi, dtype=np.float64)
    return _kernels.systematic(pi, int(round(pi.sum())), rng_state)


def reduce_pps(entries, target, random_state=None):
    """Shrink ``entries`` to at most ``target`` items without bias.

    Each entry is kept with probability ``min(1, alpha * n_i)`` and, if kept,
    reported as ``n_i / pi_i``; the expected adjusted count of every input
    item equals its input count.
    """
    target = check_capacity(target, "target")
    entries = [(k, float(v)) for k, v in entries if v > 0]
    if not entries:
        return ReducedSummary([], THRESHOLDED_PPS)
    if target >= len(entries):
        return ReducedSummary(list(entries), THRESHOLDED_PPS)
    values = np.array([v for _, v in entries])
    _, pi = solve_threshold(values, target)
    rng = rng_words(check_random_state(random_state), 0x5050)
    keep = systematic_sample(pi, rng)
    kept = [(entries[i][0], entries[i][1] / pi[i]) for i in keep]
    return ReducedSummary(kept, THRESHOLDED_PPS)
