"""Sampling baselines: priority sampling, bottom-k item sampling and
adaptive sample-and-hold.

Each summary exposes ``bins()`` with adjusted counts, ``estimate(item)`` and
``variance_estimate(hits)``, so ``estimation.subset_sum`` treats them the same
way as a Space Saving sketch.
"""

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
from sklearn.base import BaseEstimator

from .estimation import as_query
from .validation import (InvalidInputError, InvalidWeightError, check_capacity,
                         check_items, check_random_state, check_weights)

PRIORITY_TAG = 0x5052
HOLD_TAG = 0x5348


# ----------------------------------------------------------------------
# priority sampling
# ----------------------------------------------------------------------


@dataclass
class PrioritySample:
    """Items with the ``m`` smallest priorities ``U_i / n_i``.

    ``tau`` is the (m+1)-th smallest priority, or ``inf`` when every item was
    kept; a kept item's adjusted value is ``max(n_i, 1 / tau)``.
    """

    items: List[Any] = field(default_factory=list)
    values: np.ndarray = field(default_factory=lambda: np.empty(0))
    priorities: np.ndarray = field(default_factory=lambda: np.empty(0))
    tau: float = math.inf

    @property
    def floor(self):
        return 0.0 if math.isinf(self.tau) else 1.0 / self.tau

    def adjusted(self):
        return np.maximum(self.values, self.floor)

    def bins(self):
        return list(zip(self.items, self.adjusted().tolist()))

    def estimate(self, item):
        for it, v in self.bins():
            if it == item:
                return v
        return 0.0

    def variance_estimate(self, hits):
        """Unbiased variance estimate ``sum floor * (floor - n_i)_+``."""
        if not hits or math.isinf(self.tau):
            return 0.0
        raw = dict(zip(self.items, self.values.tolist()))
        f = self.floor
        return float(sum(f * max(0.0, f - raw[lab]) for lab, _ in hits))

    def __len__(self):
        return len(self.items)


def priority_sample(items, m, seed=None):
    """Priority sample of size ``m`` from ``(item, value)`` pairs."""
    m = check_capacity(m, "m")
    pairs = list(items)
    if not pairs:
        return PrioritySample()
    labels = [k for k, _ in pairs]
    values = np.array([v for _, v in pairs], dtype=np.float64)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise InvalidWeightError("priority sampling needs positive values")
    rng = np.random.default_rng(
        np.random.SeedSequence([check_random_state(seed), PRIORITY_TAG]))
    u = 1.0 - rng.random(values.shape[0])  # (0, 1]
    return _priority_from(labels, values, u / values, m)


def _priority_from(labels, values, prio, m):
    n = values.shape[0]
    if n <= m:
        return PrioritySample(list(labels), values.copy(), prio.copy(), math.inf)
    part = np.argpartition(prio, m)
    keep = part[:m]
    tau = float(prio[part[m]])
    keep = keep[np.argsort(prio[keep], kind="stable")]
    return PrioritySample([labels[j] for j in keep.tolist()], values[keep],
                          prio[keep], tau)


def priority_estimate(sample, subset):
    """Sum of adjusted values of the kept items in ``subset``."""
    q = as_query(subset)
    return float(sum(v for it, v in sample.bins() if it in q))


class PrioritySampler(BaseEstimator):
    """Aggregates a stream exactly, then keeps a priority sample of ``capacity``."""

    def __init__(self, capacity=100, random_state=None):
        self.capacity = capacity
        self.random_state = random_state

    def fit(self, X, y=None, sample_weight=None):
        arr = check_items(X)
        w = (np.ones(arr.shape[0]) if sample_weight is None
             else check_weights(sample_weight, arr.shape[0]))
        totals: Dict[Any, float] = {}
        for item, wt in zip(arr.tolist(), w.tolist()):
            totals[item] = totals.get(item, 0.0) + wt
        self.sample_ = priority_sample(totals.items(), self.capacity,
                                       self.random_state)
        return self

    def bins(self):
        return self.sample_.bins()

    def estimate(self, item):
        return self.sample_.estimate(item)

    def predict(self, X):
        return np.array([self.estimate(x) for x in check_items(X).tolist()])

    def variance_estimate(self, hits):
        return self.sample_.variance_estimate(hits)


# ----------------------------------------------------------------------
# bottom-k
# ----------------------------------------------------------------------


def _item_bytes(item):
    if isinstance(item, bytes):
        return b"b" + item
    if isinstance(item, str):
        return b"s" + item.encode("utf-8")
    if isinstance(item, (int, np.integer)) and not isinstance(item, bool):
        return b"i" + str(int(item)).encode("ascii")
    raise InvalidInputError(f"cannot hash item of type {type(item).__name__}")


def item_hash(item, seed):
    """Seeded hash of ``item`` mapped to a uniform value in (0, 1]."""
    key = int(check_random_state(seed)).to_bytes(8, "little")
    h = hashlib.blake2b(_item_bytes(item), digest_size=8, key=key).digest()
    return (int.from_bytes(h, "little") + 1) / 18446744073709551616.0


@dataclass
class BottomKSample:
    """The ``k`` distinct items with the smallest hashes and their exact counts."""

    k: int
    items: List[Any] = field(default_factory=list)
    counts: List[float] = field(default_factory=list)
    hashes: List[float] = field(default_factory=list)

    @property
    def distinct_estimate(self):
        if len(self.items) < self.k:
            return float(len(self.items))
        return (self.k - 1) / max(self.hashes)

    @property
    def scale(self):
        """Inverse of the estimated per-item sampling rate."""
        if len(self.items) < self.k:
            return 1.0
        return self.distinct_estimate / self.k

    def bins(self):
        s = self.scale
        return [(it, c * s) for it, c in zip(self.items, self.counts)]

    def estimate(self, item):
        for it, c in zip(self.items, self.counts):
            if it == item:
                return c * self.scale
        return 0.0

    def variance_estimate(self, hits):
        """Horvitz-Thompson variance at sampling rate ``1 / scale``."""
        s = self.scale
        if s <= 1.0:
            return 0.0
        return float(sum((v / s) ** 2 * s * (s - 1.0) for _, v in hits))

    def __len__(self):
        return len(self.items)


def bottom_k_sample(stream, k, seed=0):
    """Single pass over ``stream`` keeping the ``k`` smallest-hash items.

    An item's hash is fixed, so once it is displaced it can never return;
    kept items are therefore counted from their first row and exactly.
    """
    k = check_capacity(k, "k")
    seed = check_random_state(seed)
    heap = []  # (-hash, item)
    counts: Dict[Any, int] = {}
    for item in stream:
        if item in counts:
            counts[item] += 1
            continue
        h = item_hash(item, seed)
        if len(heap) < k:
            heapq.heappush(heap, (-h, _Key(item)))
            counts[item] = 1
        elif h < -heap[0][0]:
            _, out = heapq.heapreplace(heap, (-h, _Key(item)))
            del counts[out.item]
            counts[item] = 1
    kept = sorted(((-nh, key.item) for nh, key in heap), key=lambda e: e[0])
    return BottomKSample(k, [it for _, it in kept], [counts[it] for _, it in kept],
                         [h for h, _ in kept])


def bottom_k_from_counts(truth_items, truth_counts, k, seed=0):
    """Bottom-k sample of a pre-aggregated table (same result as streaming)."""
    k = check_capacity(k, "k")
    seed = check_random_state(seed)
    entries = [(item_hash(it, seed), it, c)
               for it, c in zip(truth_items, truth_counts) if c > 0]
    entries.sort(key=lambda e: e[0])
    entries = entries[:k]
    return BottomKSample(k, [e[1] for e in entries], [e[2] for e in entries],
                         [e[0] for e in entries])


def bottom_k_estimate(sample, subset):
    q = as_query(subset)
    return float(sum(v for it, v in sample.bins() if it in q))


class _Key:
    """Heap payload that never takes part in ordering."""

    __slots__ = ("item",)

    def __init__(self, item):
        self.item = item

    def __lt__(self, other):
        return False


# ----------------------------------------------------------------------
# adaptive sample-and-hold
# ----------------------------------------------------------------------


class SampleAndHold(BaseEstimator):
    """Adaptive sample-and-hold with at most ``capacity`` counters.

    The sampling rate starts at 1 and drops by ``decay`` each time the
    counters overflow; on a drop from ``p`` to ``q`` every counter is kept
    as is with probability ``q / p`` and otherwise reduced by a
    Geometric(q) draw on {1, 2, ...}, dropping it if that leaves it at or
    below zero. A held item's estimate adds back ``(1 - p) / p``.
    """

    def __init__(self, capacity=100, decay=0.9, random_state=None):
        self.capacity = capacity
        self.decay = decay
        self.random_state = random_state

    def _reset(self):
        self.capacity_ = check_capacity(self.capacity)
        if not (0.0 < self.decay < 1.0):
            raise InvalidInputError("decay must lie in (0, 1)")
        self.rng_ = np.random.default_rng(
            np.random.SeedSequence([check_random_state(self.random_state), HOLD_TAG]))
        self.rate_ = 1.0
        self.counters_: Dict[Any, int] = {}
        self.n_rows_ = 0
        return self

    def fit(self, X, y=None):
        self._reset()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "rate_"):
            self._reset()
        for item in check_items(X).tolist():
            self.update(item)
        return self

    def update(self, item):
        if not hasattr(self, "rate_"):
            self._reset()
        self.n_rows_ += 1
        counters = self.counters_
        if item in counters:
            counters[item] += 1
            return self
        if self.rate_ < 1.0 and self.rng_.random() >= self.rate_:
            return self
        counters[item] = 1
        while len(counters) > self.capacity_:
            self._lower_rate()
        return self

    def _lower_rate(self):
        p = self.rate_
        q = p * self.decay
        rng = self.rng_
        keep_p = q / p
        for item in list(self.counters_):
            if rng.random() < keep_p:
                continue
            c = self.counters_[item] - int(rng.geometric(q))
            if c <= 0:
                del self.counters_[item]
            else:
                self.counters_[item] = c
        self.rate_ = q

    @property
    def offset(self):
        return (1.0 - self.rate_) / self.rate_

    def bins(self):
        off = self.offset
        return [(it, c + off) for it, c in self.counters_.items()]

    def estimate(self, item):
        c = self.counters_.get(item)
        return 0.0 if c is None else c + self.offset

    def predict(self, X):
        return np.array([self.estimate(x) for x in check_items(X).tolist()])

    def variance_estimate(self, hits):
        """Geometric variance ``(1 - p) / p**2`` per held item in the subset."""
        p = self.rate_
        return len(hits) * (1.0 - p) / (p * p)

    def __len__(self):
        return len(self.counters_)


def sample_and_hold_update(state, item):
    state.update(item)


def sample_and_hold_estimate(state, item):
    return state.estimate(item)

