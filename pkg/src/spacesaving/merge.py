"""Merging two sketches into one of capacity ``m``."""

from dataclasses import dataclass

import numpy as np

from .reductions import ReducedSummary, to_misra_gries
from .sampling import PRIORITY_TAG, _priority_from
from .sketch import DETERMINISTIC, REAL, UNBIASED, SpaceSaving, from_bins
from .validation import check_capacity, check_random_state

UNBIASED_KIND = "unbiased"
MISRA_GRIES_KIND = "misra_gries"

MERGE_TAG = 0x4D47


@dataclass
class MergeResult:
    sketch: SpaceSaving
    kind: str


def _combined(a, b):
    totals = {}
    for sk in (a, b):
        for lab, c in sk.bins():
            totals[lab] = totals.get(lab, 0) + c
    return totals


def _rows(a, b):
    return sum(int(getattr(x, "rows_processed", 0)) for x in (a, b))


def merge_unbiased(a, b, m, random_state=None):
    """Sum shared labels, then priority-sample the union down to ``m`` bins.

    Kept entries carry ``max(count, 1 / tau)``, so every item's expected
    merged estimate equals the sum of its two input estimates.
    """
    m = check_capacity(m, "m")
    totals = _combined(a, b)
    labels = [k for k, v in totals.items() if v > 0]
    values = np.array([float(totals[k]) for k in labels])
    seed = check_random_state(random_state)
    if values.shape[0] > m:
        rng = np.random.default_rng(np.random.SeedSequence([seed, MERGE_TAG, PRIORITY_TAG]))
        u = 1.0 - rng.random(values.shape[0])
        sample = _priority_from(labels, values, u / values, m)
        bins = sample.bins()
    else:
        bins = list(zip(labels, values.tolist()))
    sk = from_bins(bins, m, mode=UNBIASED, seed=seed, rows=_rows(a, b), counts=REAL)
    sk.total_ = float(a.total_) + float(b.total_)
    return MergeResult(sk, UNBIASED_KIND)


def _mg_entries(x):
    if isinstance(x, ReducedSummary):
        return x.entries
    if getattr(x, "misra_gries_form_", False):
        return x.bins()
    return to_misra_gries(x).entries


def merge_misra_gries(a, b, m):
    """Soft-threshold the summed Misra-Gries counts by the (m+1)-th largest one.

    A Space Saving input is first converted to its Misra-Gries form
    ``(N_i - N_min)_+``; ``ReducedSummary`` inputs and earlier merge results
    are used as they are. At most ``m`` entries stay positive and none
    exceeds the item's true count.
    """
    m = check_capacity(m, "m")
    totals = {}
    for src in (a, b):
        for lab, c in _mg_entries(src):
            totals[lab] = totals.get(lab, 0) + c
    labels = [k for k, v in totals.items() if v > 0]
    values = np.array([totals[k] for k in labels])
    if values.shape[0] > m:
        cut = np.sort(values)[::-1][m]
        values = values - cut
    counts = REAL if any(isinstance(v, float) for v in totals.values()) else "integer"
    bins = [(k, v.item()) for k, v in zip(labels, values) if v > 0]
    sk = from_bins(bins, m, mode=DETERMINISTIC, seed=0, rows=_rows(a, b), counts=counts)
    sk.total_ = float(_total(a)) + float(_total(b))
    sk.misra_gries_form_ = True
    return MergeResult(sk, MISRA_GRIES_KIND)


def _total(x):
    if isinstance(x, ReducedSummary):
        return sum(c for _, c in x.entries)
    return x.total_
