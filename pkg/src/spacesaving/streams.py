"""Synthetic streams with exact ground truth.

A stream is described by a count source (a discretized Weibull grid or an
explicit table) and an ordering. ``compile_plan`` turns a spec into segments
of item codes that are either replayed as contiguous runs or as a uniformly
random permutation of their multiset; the same plan drives both ``emit`` and
the compiled replicate loops, so a replicate sees exactly the rows ``emit``
would produce for the same seed.
"""

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from . import _kernels as K
from .estimation import SubsetQuery
from .validation import ConfigError, InvalidInputError, check_capacity, rng_words

SHUFFLED = "shuffled"
SORTED = "sorted"
TWO_HALVES = "two_halves"
ADVERSARIAL = "adversarial"
ALL_UNIQUE = "all_unique"
IID = "iid"
ORDERINGS = (SHUFFLED, SORTED, TWO_HALVES, ADVERSARIAL, ALL_UNIQUE, IID)

STREAM_TAG = 0x5354

_CHUNK = 1 << 16


class GroundTruth:
    """Exact per-item counts of a stream."""

    def __init__(self, items, counts):
        self.items_ = list(items)
        c = np.asarray(counts)
        if c.dtype.kind == "f" and not np.all(c == np.floor(c)):
            self.counts_ = c.astype(np.float64)  # weighted totals
        else:
            self.counts_ = c.astype(np.int64)
        if self.counts_.shape[0] != len(self.items_):
            raise InvalidInputError("items and counts differ in length")
        if np.any(self.counts_ < 0):
            raise InvalidInputError("counts must be non-negative")
        self._index = None

    @classmethod
    def from_mapping(cls, mapping):
        return cls(list(mapping.keys()), list(mapping.values()))

    @property
    def n_tot(self):
        return self.counts_.sum().item()

    @property
    def v(self):
        return len(self.items_)

    def count(self, item):
        if self._index is None:
            self._index = {it: j for j, it in enumerate(self.items_)}
        j = self._index.get(item)
        return 0 if j is None else self.counts_[j].item()

    def items(self):
        return zip(self.items_, self.counts_.tolist())

    def as_dict(self):
        return dict(self.items())

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        a = {k: c for k, c in self.items() if c}
        b = {k: c for k, c in other.items() if c}
        return a == b

    def __repr__(self):
        return f"GroundTruth(v={self.v}, n_tot={self.n_tot})"


def weibull_counts(shape, scale, grid_size=1000):
    """Counts ``round(F^-1((i - 0.5) / grid_size))`` of a Weibull(shape, scale)."""
    if not (shape > 0 and scale > 0):
        raise InvalidInputError("shape and scale must be positive")
    if int(grid_size) < 1:
        raise InvalidInputError("grid_size must be at least 1")
    g = int(grid_size)
    u = (np.arange(1, g + 1) - 0.5) / g
    x = scale * (-np.log1p(-u)) ** (1.0 / shape)
    counts = np.floor(x + 0.5).astype(np.int64)
    return GroundTruth(range(g), counts)


@dataclass
class WeibullGrid:
    shape: float
    scale: float
    grid_size: int = 1000

    def truth(self):
        return weibull_counts(self.shape, self.scale, self.grid_size)


@dataclass
class Explicit:
    counts: Dict[Any, int]

    def truth(self):
        return GroundTruth.from_mapping(self.counts)


@dataclass
class StreamSpec:
    """Count source plus ordering.

    ``rows`` is the stream length for ``iid`` (draws with probability
    ``n_i / n_tot``) and optionally for ``all_unique`` (defaults to
    ``n_tot``). ``m`` lets ``adversarial`` check its precondition.
    """

    source: Any
    ordering: str = SHUFFLED
    seed: int = 0
    rows: Optional[int] = None
    m: Optional[int] = None
    epochs: Optional[int] = None

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        src = d.pop("source", None)
        if not isinstance(src, dict) or "kind" not in src:
            raise ConfigError("stream.source", "expected an object with a 'kind'")
        kind = src["kind"]
        if kind == "weibull":
            try:
                source = WeibullGrid(float(src["shape"]), float(src["scale"]),
                                     int(src.get("grid_size", 1000)))
            except KeyError as e:
                raise ConfigError(f"stream.source.{e.args[0]}", "missing") from None
        elif kind == "explicit":
            counts = src.get("counts")
            if not isinstance(counts, dict):
                raise ConfigError("stream.source.counts", "expected an object")
            source = Explicit({_parse_id(k): int(v) for k, v in counts.items()})
        else:
            raise ConfigError("stream.source.kind", f"unknown source {kind!r}")
        ordering = d.pop("ordering", SHUFFLED)
        if ordering not in ORDERINGS:
            raise ConfigError("stream.ordering", f"unknown ordering {ordering!r}")
        known = {"seed", "rows", "m", "epochs"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"stream.{sorted(extra)[0]}", "unknown field")
        return cls(source=source, ordering=ordering, seed=int(d.get("seed", 0)),
                   rows=d.get("rows"), m=d.get("m"), epochs=d.get("epochs"))

    def to_dict(self):
        if isinstance(self.source, WeibullGrid):
            src = {"kind": "weibull", "shape": self.source.shape,
                   "scale": self.source.scale, "grid_size": self.source.grid_size}
        else:
            src = {"kind": "explicit",
                   "counts": {str(k): int(v) for k, v in self.source.counts.items()}}
        out = {"source": src, "ordering": self.ordering, "seed": self.seed}
        for key in ("rows", "m", "epochs"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


def _parse_id(text):
    try:
        return int(text)
    except (TypeError, ValueError):
        return text


@dataclass
class Plan:
    """Compiled stream: item ids indexed by code plus replay segments."""

    items: list
    counts: np.ndarray
    seg_starts: np.ndarray
    seg_shuffled: np.ndarray
    truth: Optional[GroundTruth]
    iid_rows: int = 0
    prob: Optional[np.ndarray] = None
    alias: Optional[np.ndarray] = None
    codes: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.codes is None:
            self.codes = np.arange(len(self.items), dtype=np.int64)

    @property
    def is_iid(self):
        return self.prob is not None

    @property
    def n_rows(self):
        return self.iid_rows if self.is_iid else int(self.counts.sum())


def _fresh_ids(items, n):
    ints = [i for i in items if isinstance(i, (int, np.integer))]
    if len(ints) != len(items):
        raise ConfigError("stream.source", "this ordering needs integer item ids")
    start = (max(ints) + 1) if ints else 0
    return list(range(start, start + n))


def compile_plan(spec, m=None):
    """Turn ``spec`` into a replayable ``Plan``."""
    if spec.ordering not in ORDERINGS:
        raise ConfigError("stream.ordering", f"unknown ordering {spec.ordering!r}")
    base = spec.source.truth()
    items, counts = base.items_, base.counts_
    nonzero = counts > 0
    if spec.ordering == SHUFFLED:
        return Plan(items, counts.copy(), np.array([0, len(items)]),
                    np.array([True]), base)
    if spec.ordering == SORTED:
        order = np.argsort(counts, kind="stable")
        return Plan([items[j] for j in order], counts[order],
                    np.array([0, len(items)]), np.array([False]), base)
    if spec.ordering == TWO_HALVES:
        second = _fresh_ids(items, len(items))
        all_items = items + second
        all_counts = np.concatenate([counts, counts])
        truth = GroundTruth(all_items, all_counts)
        return Plan(all_items, all_counts, np.array([0, len(items), 2 * len(items)]),
                    np.array([True, True]), truth)
    if spec.ordering == ADVERSARIAL:
        n_tot = int(counts.sum())
        target_m = m if m is not None else spec.m
        if target_m is not None:
            target_m = check_capacity(target_m, "m")
            bad = counts * target_m >= 2 * n_tot
            if np.any(bad):
                raise ConfigError(
                    "stream.m", f"item count {int(counts[bad].max())} is not below "
                    f"2 * n_tot / m = {2 * n_tot / target_m:g}")
        order = np.argsort(-counts, kind="stable")
        order = order[nonzero[order]]
        fresh = _fresh_ids(items, n_tot)
        all_items = [items[j] for j in order] + fresh
        all_counts = np.concatenate([counts[order], np.ones(n_tot, np.int64)])
        truth = GroundTruth(all_items, all_counts)
        return Plan(all_items, all_counts,
                    np.array([0, order.shape[0], order.shape[0] + n_tot]),
                    np.array([False, False]), truth)
    if spec.ordering == ALL_UNIQUE:
        n = int(spec.rows) if spec.rows is not None else int(counts.sum())
        all_items = list(range(n))
        ones = np.ones(n, np.int64)
        return Plan(all_items, ones, np.array([0, n]), np.array([False]),
                    GroundTruth(all_items, ones))
    # iid
    if spec.rows is None or int(spec.rows) < 0:
        raise ConfigError("stream.rows", "iid streams need a non-negative row count")
    if counts.sum() <= 0:
        raise ConfigError("stream.source", "iid streams need a positive total")
    prob, alias = K.alias_table(counts.astype(np.float64))
    return Plan(items, counts.copy(), np.array([0, len(items)]), np.array([True]),
                None, iid_rows=int(spec.rows), prob=prob, alias=alias)


def plan_from_rows(rows):
    """Plan replaying an explicit row sequence exactly, run-length encoded."""
    ids = list(rows)
    index = {}
    items = []
    run_codes = []
    run_lens = []
    for x in ids:
        c = index.get(x)
        if c is None:
            c = index[x] = len(items)
            items.append(x)
        if run_codes and run_codes[-1] == c:
            run_lens[-1] += 1
        else:
            run_codes.append(c)
            run_lens.append(1)
    counts = np.bincount(np.array(run_codes, dtype=np.int64),
                         weights=np.array(run_lens, dtype=np.float64),
                         minlength=len(items)).astype(np.int64) if items else \
        np.zeros(0, np.int64)
    plan = Plan(items, np.array(run_lens, dtype=np.int64),
                np.array([0, len(run_codes)]), np.array([False]),
                GroundTruth(items, counts), codes=np.array(run_codes, dtype=np.int64))
    return plan


def expected_counts(plan):
    """Per-code expected counts (exact counts unless the plan is i.i.d.)."""
    if plan.is_iid:
        return plan.counts * (plan.iid_rows / plan.counts.sum())
    out = np.zeros(len(plan.items))
    np.add.at(out, plan.codes, plan.counts)
    return out


def stream_state(seed, replicate=0):
    return rng_words(seed, STREAM_TAG, replicate)


def iter_codes(plan, seed, replicate=0, chunk=_CHUNK):
    """Yield the rows of ``plan`` as chunks of item codes."""
    srng = stream_state(seed, replicate)
    if plan.is_iid:
        left = plan.iid_rows
        while left > 0:
            out = np.empty(min(chunk, left), np.int64)
            K.draw_iid(plan.prob, plan.alias, srng, out)
            left -= out.shape[0]
            yield out
        return
    for sidx in range(plan.seg_shuffled.shape[0]):
        s, e = int(plan.seg_starts[sidx]), int(plan.seg_starts[sidx + 1])
        seg = plan.counts[s:e]
        if plan.seg_shuffled[sidx]:
            n = e - s
            tree = K.fenwick_build(seg)
            top = K.top_bit(n) if n else 0
            remaining = int(seg.sum())
            while remaining > 0:
                out = np.empty(min(chunk, remaining), np.int64)
                k = K.draw_shuffled(tree, n, top, remaining, srng, out)
                remaining -= k
                yield plan.codes[out[:k] + s]
        else:
            buf = []
            size = 0
            for j in range(s, e):
                c = int(plan.counts[j])
                while c > 0:
                    take = min(c, chunk - size)
                    buf.append(np.full(take, plan.codes[j], np.int64))
                    size += take
                    c -= take
                    if size == chunk:
                        yield np.concatenate(buf)
                        buf, size = [], 0
            if size:
                yield np.concatenate(buf)


def emit(spec, sink, m=None, chunk=_CHUNK):
    """Send the rows of ``spec`` to ``sink`` in order; returns the ground truth.

    ``sink`` is called with successive numpy arrays of item ids (object
    arrays when ids are not all integers).
    """
    plan = compile_plan(spec, m)
    ids = _id_array(plan.items)
    realized = np.zeros(len(plan.items), np.int64) if plan.is_iid else None
    for codes in iter_codes(plan, spec.seed, chunk=chunk):
        if realized is not None:
            realized += np.bincount(codes, minlength=realized.shape[0])
        sink(ids[codes])
    if realized is not None:
        return GroundTruth(plan.items, realized)
    return plan.truth


def rows(spec, m=None):
    """All rows of ``spec`` as one array (convenient for small streams)."""
    parts = []
    emit(spec, parts.append, m)
    if not parts:
        return np.empty(0, np.int64)
    return np.concatenate(parts)


def _id_array(items):
    if all(isinstance(i, (int, np.integer)) for i in items):
        try:
            return np.array(items, dtype=np.int64)
        except OverflowError:
            pass
    arr = np.empty(len(items), dtype=object)
    arr[:] = items
    return arr


def epochs(ground_truth, k=10):
    """Split the universe by ascending count rank into ``k`` near-equal groups."""
    k = int(k)
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    order = np.argsort(ground_truth.counts_, kind="stable")
    groups = np.array_split(order, k)
    items = ground_truth.items_
    return [SubsetQuery(members=[items[j] for j in g.tolist()], name=f"epoch{e + 1}")
            for e, g in enumerate(groups)]


def random_subsets(ground_truth, count, size, seed):
    """``count`` subsets of ``size`` items drawn uniformly without replacement."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5153]))
    items = ground_truth.items_
    size = min(int(size), len(items))
    out = []
    for q in range(int(count)):
        pick = np.sort(rng.choice(len(items), size=size, replace=False))
        out.append(SubsetQuery(members=[items[j] for j in pick.tolist()],
                               name=f"subset{q + 1}"))
    return out


def dump_stream(spec, path, truth_path=None, m=None):
    """Write one item id per line; optionally the ground truth as CSV."""
    with open(path, "w") as fh:
        def sink(chunk):
            fh.write("".join(f"{x}\n" for x in chunk.tolist()))
        truth = emit(spec, sink, m)
    if truth_path is not None:
        write_truth(truth, truth_path)
    return truth


def load_stream(path):
    """Ground truth of a newline-delimited item id file."""
    counts = Counter()
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                counts[_parse_id(line)] += 1
    return GroundTruth.from_mapping(dict(counts))


def write_truth(truth, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "count"])
        for item, c in truth.items():
            w.writerow([item, c])
