"""Batched Monte Carlo runs of integer-count sketches over a compiled plan.

Each replicate owns two xoshiro streams derived from the seed and its index
(one for the sketch, one for the stream order), so splitting the replicates
across threads cannot change any result.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .reductions import solve_threshold
from .streams import stream_state
from .validation import check_capacity, rng_words

SKETCH_TAG = 0x534B


def sketch_states(seed, count, *path):
    return np.array([rng_words(seed, SKETCH_TAG, *path, r) for r in range(count)],
                    dtype=np.uint64)


def stream_states(seed, count):
    return np.array([stream_state(seed, r) for r in range(count)], dtype=np.uint64)


@dataclass
class ReplicateRun:
    """Final bins of ``R`` independent sketches.

    ``labels[r, b]`` is the item code on bin ``b`` (-1 if empty) and
    ``counts[r, b]`` its count. ``truth[r]`` holds realized per-code counts
    for i.i.d. plans and is ``None`` when every replicate sees the same
    multiset.
    """

    labels: np.ndarray
    counts: np.ndarray
    n_codes: int
    truth: Optional[np.ndarray] = None

    @property
    def replicates(self):
        return self.labels.shape[0]

    @property
    def m(self):
        return self.labels.shape[1]

    def n_min(self):
        # empty bins carry count 0, so the row minimum is already N_min
        return self.counts.min(axis=1)

    def subset(self, mask):
        """Per-replicate ``(estimate, C_S)`` for the codes where ``mask`` holds."""
        inside = mask[np.maximum(self.labels, 0)] & (self.labels >= 0)
        est = np.where(inside, self.counts, 0).sum(axis=1)
        return est.astype(np.float64), inside.sum(axis=1)

    def subset_variance(self, c_s):
        return self.n_min().astype(np.float64) ** 2 * np.maximum(c_s, 1)

    def inclusion(self):
        """Fraction of replicates in which each code labels a bin."""
        lab = self.labels[self.labels >= 0]
        return np.bincount(lab, minlength=self.n_codes) / self.replicates

    def pps_reference(self, expected):
        """Reference PPS inclusion probabilities matching these replicates.

        With per-replicate counts (i.i.d. plans) this is the average of
        ``min(1, alpha_r n_i^(r))`` over replicates, the inclusion a PPS
        sample of each realized stream would have; otherwise it is the
        reference for the fixed ``expected`` counts.
        """
        if self.truth is None:
            return pps_reference(expected, self.m)[0]
        out = np.zeros(self.n_codes)
        for row in self.truth:
            out += pps_reference(row, self.m)[0]
        return out / self.replicates

    def item_estimates(self, codes):
        """``(R, len(codes))`` matrix of per-item estimates."""
        codes = np.asarray(codes, dtype=np.int64)
        pos = np.full(self.n_codes, -1, np.int64)
        pos[codes] = np.arange(codes.shape[0])
        out = np.zeros((self.replicates, codes.shape[0]))
        r_idx, b_idx = np.nonzero(self.labels >= 0)
        lab = self.labels[r_idx, b_idx]
        sel = pos[lab] >= 0
        out[r_idx[sel], pos[lab[sel]]] = self.counts[r_idx[sel], b_idx[sel]]
        return out


def run_replicates(plan, m, unbiased, replicates, seed, stream_seed=None,
                   threads=1, path=()):
    """Run ``replicates`` fresh sketches over ``plan``.

    ``seed`` drives the sketches; ``stream_seed`` (default ``seed``) drives
    the order of shuffled segments or the i.i.d. draws.
    """
    m = check_capacity(m, "m")
    R = int(replicates)
    n_codes = len(plan.items)
    sk = sketch_states(seed, R, *path)
    st = stream_states(seed if stream_seed is None else stream_seed, R)
    labels = np.empty((R, m), np.int64)
    counts = np.empty((R, m), np.int64)
    truth = np.empty((R, n_codes), np.int64) if plan.is_iid else None

    def block(lo, hi):
        if plan.is_iid:
            K.replicate_iid(plan.prob, plan.alias, plan.codes, plan.iid_rows, n_codes,
                            m, unbiased, sk[lo:hi], st[lo:hi], labels[lo:hi],
                            counts[lo:hi], truth[lo:hi])
        else:
            K.replicate_plan(plan.codes, plan.counts, plan.seg_starts,
                             plan.seg_shuffled, n_codes, m, unbiased, sk[lo:hi],
                             st[lo:hi], labels[lo:hi], counts[lo:hi])

    threads = max(1, int(threads))
    if threads == 1 or R < 2:
        block(0, R)
    else:
        edges = np.linspace(0, R, min(threads, R) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda i: block(edges[i], edges[i + 1]),
                          range(edges.shape[0] - 1)))
    return ReplicateRun(labels, counts, n_codes, truth)


def pps_reference(expected, m):
    """Thresholded PPS inclusion probabilities ``min(1, alpha n_i)`` summing to ``m``."""
    expected = np.asarray(expected, dtype=np.float64)
    pos = expected > 0
    pi = np.zeros_like(expected)
    if pos.sum() <= m:
        pi[pos] = 1.0
        return pi, np.inf
    alpha, pi_pos = solve_threshold(expected[pos], m)
    pi[pos] = pi_pos
    return pi, alpha
