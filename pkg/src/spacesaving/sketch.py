"""Deterministic and Unbiased Space Saving sketches."""

import base64
import json

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from .estimation import sketch_variance
from .reductions import solve_threshold
from .validation import (InvalidInputError, check_capacity, check_items,
                         check_random_state, check_threshold, check_weight,
                         check_weights, rng_words)

DETERMINISTIC = "deterministic"
UNBIASED = "unbiased"
MODES = (DETERMINISTIC, UNBIASED)

INTEGER = "integer"
REAL = "real"

FORMAT_VERSION = 1


class SpaceSaving(BaseEstimator):
    """Space Saving frequent-item sketch with ``capacity`` bins.

    ``mode="unbiased"`` relabels the incremented minimum bin with probability
    ``1 / (N_min + 1)``, which makes every per-item estimate (and therefore
    every subset sum) unbiased; ``mode="deterministic"`` always relabels.

    ``counts="integer"`` keeps exact integer counts in a stream-summary
    layout with O(1) updates. ``counts="real"`` stores float counts and
    accepts weighted rows; an absent item then enters through a thresholded
    PPS reduction over the minimum bins.

    Parameters
    ----------
    capacity : int
        Number of bins ``m``.
    mode : {"unbiased", "deterministic"}
    counts : {"integer", "real"}
    random_state : int or None
        Seed for label flips and tie-breaks among equal minimum bins.
    """

    def __init__(self, capacity=100, mode=UNBIASED, counts=INTEGER,
                 random_state=None):
        self.capacity = capacity
        self.mode = mode
        self.counts = counts
        self.random_state = random_state

    # ------------------------------------------------------------------
    # state
    # ------------------------------------------------------------------

    def _reset(self):
        m = check_capacity(self.capacity)
        self.misra_gries_form_ = False
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.counts not in (INTEGER, REAL):
            raise InvalidInputError(f"counts must be 'integer' or 'real', got {self.counts!r}")
        self.seed_ = check_random_state(self.random_state)
        self.rng_state_ = rng_words(self.seed_)
        self.n_rows_ = 0
        self.total_ = 0.0
        if self.counts == INTEGER:
            self._S = np.empty(K.state_size(m), np.int64)
            K.init_state(self._S, m)
            self._where = np.full(max(16, 2 * m), -1, np.int64)
            self._codes = {}
            self._items = []
        else:
            self._rlabels = [None] * m
            self._rcounts = np.zeros(m, np.float64)
            self._rwhere = {}
        return self

    def _state(self):
        if not hasattr(self, "seed_"):
            self._reset()
        return self

    @property
    def _rows_slot(self):
        return K.N_ROWS * self.capacity + K.T_ROWS

    def _count_of(self, b):
        m = self.capacity
        return int(self._S[K.GCOUNT * m + self._S[K.BGRP * m + b]])

    @property
    def unbiased(self):
        return self.mode == UNBIASED

    @property
    def rows_processed(self):
        self._state()
        return self.n_rows_

    # ------------------------------------------------------------------
    # item codes (integer mode)
    # ------------------------------------------------------------------

    def _encode(self, arr):
        codes_map = self._codes
        items = self._items
        if arr.dtype.kind in "iu" and arr.shape[0] > 64:
            uniq, inv = np.unique(arr, return_inverse=True)
            ucodes = np.empty(uniq.shape[0], np.int64)
            for j, u in enumerate(uniq.tolist()):
                c = codes_map.get(u)
                if c is None:
                    c = len(items)
                    codes_map[u] = c
                    items.append(u)
                ucodes[j] = c
            out = ucodes[inv]
        else:
            out = np.empty(arr.shape[0], np.int64)
            for j, u in enumerate(arr.tolist()):
                c = codes_map.get(u)
                if c is None:
                    c = len(items)
                    codes_map[u] = c
                    items.append(u)
                out[j] = c
        if len(items) > self._where.shape[0]:
            grown = np.full(max(2 * self._where.shape[0], len(items)), -1, np.int64)
            grown[: self._where.shape[0]] = self._where
            self._where = grown
        return out

    def _compact(self):
        # drop codes of items that are no longer bin labels
        label = self._S[: self.capacity]
        live = label >= 0
        old = label[live]
        new_items = [self._items[c] for c in old.tolist()]
        label[live] = np.arange(old.shape[0])
        self._items = new_items
        self._codes = {item: i for i, item in enumerate(new_items)}
        self._where[:] = -1
        bins = np.flatnonzero(live)
        self._where[label[bins]] = bins

    def _run_codes(self, codes, runs=None):
        args = (self.unbiased, self._S, self.capacity, self._where,
                self.rng_state_)
        if runs is None:
            K.process_rows(codes, *args)
        else:
            K.process_rle(codes, runs, *args)
        self.n_rows_ = int(self._S[self._rows_slot])
        self.total_ = float(self.n_rows_)
        if len(self._items) > 4 * self.capacity + 1024:
            self._compact()

    # ------------------------------------------------------------------
    # updates
    # ------------------------------------------------------------------

    def fit(self, X, y=None, sample_weight=None):
        """Reset the sketch and feed the rows of ``X`` in order."""
        self._reset()
        return self.partial_fit(X, sample_weight=sample_weight)

    def partial_fit(self, X, y=None, sample_weight=None):
        """Feed the rows of ``X`` in order, keeping the current state."""
        self._state()
        arr = check_items(X)
        if self.counts == INTEGER:
            if sample_weight is not None:
                raise InvalidInputError("weighted rows need counts='real'")
            if arr.shape[0]:
                self._run_codes(self._encode(arr))
        else:
            if sample_weight is None:
                weights = np.ones(arr.shape[0])
            else:
                weights = check_weights(sample_weight, arr.shape[0])
            for item, w in zip(arr.tolist(), weights.tolist()):
                self._update_real(item, w)
                self.n_rows_ += 1
        return self

    def update_runs(self, items, runs):
        """Feed ``runs[i]`` consecutive copies of ``items[i]`` (integer mode)."""
        self._state()
        if self.counts != INTEGER:
            raise InvalidInputError("update_runs needs counts='integer'")
        arr = check_items(items)
        runs = np.asarray(runs, dtype=np.int64)
        if runs.shape != arr.shape or np.any(runs < 0):
            raise InvalidInputError("runs must be non-negative and match items")
        self._run_codes(self._encode(arr), runs)
        return self

    def update(self, item):
        """Process a single unit-weight row."""
        return self.partial_fit([item])

    def update_weighted(self, item, weight):
        """Process one row carrying ``weight`` (real-count sketches only)."""
        self._state()
        weight = check_weight(weight)
        if self.counts != REAL:
            raise InvalidInputError("update_weighted needs counts='real'")
        self._update_real(item, weight)
        self.n_rows_ += 1
        return self

    def _update_real(self, item, w):
        self.total_ += w
        b = self._rwhere.get(item)
        if b is not None:
            self._rcounts[b] += w
            return
        labels = self._rlabels
        counts = self._rcounts
        if len(self._rwhere) < len(labels):
            b = labels.index(None)
            labels[b] = item
            counts[b] = w
            self._rwhere[item] = b
            return
        cmin = counts.min()
        J = np.flatnonzero(counts == cmin)
        rng = self.rng_state_
        if not self.unbiased:
            b = int(J[K.rng_below(rng, J.shape[0])])
            self._relabel_real(b, item)
            counts[b] += w
            return
        # thresholded PPS over the minimum bins plus the new item: exactly
        # one of the |J| + 1 candidates is dropped, with probability 1 - pi
        k = J.shape[0]
        values = np.append(np.full(k, cmin), w)
        _, pi = solve_threshold(values, k)
        drop_p = 1.0 - pi
        u = K.rng_uniform(rng) * drop_p.sum()
        drop = int(min(np.searchsorted(np.cumsum(drop_p), u, side="right"), k))
        for j, b in enumerate(J.tolist()):
            if j != drop:
                counts[b] = cmin / pi[j]
        if drop < k:
            b = int(J[drop])
            self._relabel_real(b, item)
            counts[b] = w / pi[k]

    def _relabel_real(self, b, item):
        old = self._rlabels[b]
        if old is not None:
            del self._rwhere[old]
        self._rlabels[b] = item
        self._rwhere[item] = b

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def bins(self):
        """Non-empty bins as ``(label, count)`` in ascending count order."""
        self._state()
        if self.counts == INTEGER:
            m = self.capacity
            labels = self._S[:m]
            counts = K.bin_counts(self._S, m)
            out = []
            for b in self._S[K.ORDER * m: (K.ORDER + 1) * m].tolist():
                lab = labels[b]
                if lab >= 0:
                    out.append((self._items[lab], int(counts[b])))
            return out
        order = np.argsort(self._rcounts, kind="stable")
        return [(self._rlabels[b], float(self._rcounts[b]))
                for b in order.tolist() if self._rlabels[b] is not None]

    def __len__(self):
        self._state()
        if self.counts == INTEGER:
            return int(np.count_nonzero(self._S[: self.capacity] >= 0))
        return len(self._rwhere)

    def __contains__(self, item):
        self._state()
        if self.counts == INTEGER:
            c = self._codes.get(item)
            return c is not None and self._where[c] >= 0
        return item in self._rwhere

    def estimate(self, item):
        """Bin count of ``item`` if it labels a bin, else 0."""
        self._state()
        if self.counts == INTEGER:
            c = self._codes.get(item)
            if c is None:
                return 0
            b = self._where[c]
            return self._count_of(b) if b >= 0 else 0
        b = self._rwhere.get(item)
        return float(self._rcounts[b]) if b is not None else 0.0

    def predict(self, X):
        """Estimated count for each item in ``X``."""
        arr = check_items(X)
        dtype = np.int64 if self.counts == INTEGER else np.float64
        return np.array([self.estimate(x) for x in arr.tolist()], dtype=dtype)

    def min_count(self):
        """Count of the smallest bin, or 0 while some bin is still empty."""
        self._state()
        if self.counts == INTEGER:
            return self._count_of(self._S[K.ORDER * self.capacity])
        if len(self._rwhere) < len(self._rlabels):
            return 0.0
        return float(self._rcounts.min())

    def variance_estimate(self, hits):
        """``N_min**2 * C_S`` where ``C_S = len(hits)`` floored at one."""
        return sketch_variance(self.min_count(), len(hits))

    def frequent_items(self, threshold):
        """Bins with count >= ``threshold * total``, largest first."""
        phi = check_threshold(threshold)
        cut = phi * self.total_
        hits = [(lab, c) for lab, c in self.bins() if c >= cut]
        hits.sort(key=lambda e: -e[1])
        return hits

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self):
        self._state()
        return {
            "format": "spacesaving",
            "version": FORMAT_VERSION,
            "mode": self.mode,
            "counts": self.counts,
            "capacity": int(self.capacity),
            "rows": int(self.n_rows_),
            "total": float(self.total_),
            "seed": int(self.seed_),
            "rng_state": [int(x) for x in self.rng_state_],
            "bins": [[_encode_label(lab), c] for lab, c in self.bins()],
            "misra_gries_form": bool(getattr(self, "misra_gries_form_", False)),
        }

    @classmethod
    def from_dict(cls, record):
        if record.get("format") != "spacesaving":
            raise InvalidInputError("not a serialized spacesaving sketch")
        if record.get("version") != FORMAT_VERSION:
            raise InvalidInputError(f"unsupported sketch version {record.get('version')!r}")
        sk = cls(capacity=record["capacity"], mode=record["mode"],
                 counts=record["counts"], random_state=record["seed"])
        sk._reset()
        bins = [(_decode_label(lab), c) for lab, c in record["bins"]]
        if len(bins) > sk.capacity:
            raise InvalidInputError("more bins than capacity")
        sk._load_bins(bins)
        sk.rng_state_ = np.array(record["rng_state"], dtype=np.uint64)
        sk.n_rows_ = int(record["rows"])
        sk.total_ = float(record["total"])
        if record.get("misra_gries_form"):
            sk.misra_gries_form_ = True
        if sk.counts == INTEGER:
            sk._S[sk._rows_slot] = sk.n_rows_
        return sk

    def _load_bins(self, bins):
        """Install ``bins`` (ascending count order) as the sketch contents."""
        if self.counts == INTEGER:
            labels = self._encode(_object_array([lab for lab, _ in bins]))
            counts = np.array([int(c) for _, c in bins], dtype=np.int64)
            if np.any(counts <= 0):
                raise InvalidInputError("bin counts must be positive")
            K.load_state(labels, counts, self._S, self.capacity, self._where)
        else:
            for b, (lab, c) in enumerate(bins):
                self._rlabels[b] = lab
                self._rcounts[b] = float(c)
                self._rwhere[lab] = b

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())


def new_sketch(m, mode=UNBIASED, seed=0, counts=INTEGER):
    """An empty sketch with ``m`` bins."""
    return SpaceSaving(capacity=check_capacity(m), mode=mode, counts=counts,
                       random_state=seed)._reset()


def from_bins(bins, capacity, mode=UNBIASED, seed=0, rows=None, counts=REAL):
    """Build a sketch directly from ``(label, count)`` pairs."""
    bins = sorted(((lab, c) for lab, c in bins if c > 0), key=lambda e: e[1])
    sk = new_sketch(capacity, mode=mode, seed=seed, counts=counts)
    if len(bins) > sk.capacity:
        raise InvalidInputError(f"{len(bins)} bins exceed capacity {capacity}")
    sk._load_bins(bins)
    total = float(sum(c for _, c in bins))
    sk.total_ = total
    sk.n_rows_ = int(round(total)) if rows is None else int(rows)
    if sk.counts == INTEGER:
        sk._S[sk._rows_slot] = sk.n_rows_
    return sk


def _object_array(values):
    arr = np.empty(len(values), dtype=object)
    arr[:] = values
    return arr


def _encode_label(label):
    if isinstance(label, bytes):
        return {"bytes": base64.b64encode(label).decode("ascii")}
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        return int(label)
    if isinstance(label, str):
        return label
    raise InvalidInputError(f"cannot serialize item label of type {type(label).__name__}")


def _decode_label(label):
    if isinstance(label, dict):
        return base64.b64decode(label["bytes"])
    return label
