"""Experiment runner: streams in, per-query error and inclusion reports out."""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .estimation import SubsetQuery, normal_quantile
from . import _kernels as K
from .replicates import run_replicates, stream_states
from .sampling import HOLD_TAG, PRIORITY_TAG, SampleAndHold, item_hash
from .streams import (GroundTruth, StreamSpec, compile_plan, epochs, expected_counts,
                      iter_codes, random_subsets)
from .validation import (ConfigError, RowError, SchemaError, check_capacity,
                         check_weight, rng_words)

KEY_SEPARATOR = "␟"

REPORT_COLUMNS = ["query_id", "true_count", "estimator", "mean_estimate", "rrmse",
                  "mean_var_est", "emp_variance", "coverage"]
INCLUSION_COLUMNS = ["item_id", "true_count", "incl_freq", "pps_ref"]

SKETCH_KINDS = ("unbiased", "deterministic")
BASELINE_KINDS = ("priority", "bottom_k", "sample_and_hold")


@dataclass
class EstimatorConfig:
    name: str
    kind: str
    m: int

    @classmethod
    def from_dict(cls, d, idx):
        where = f"estimators[{idx}]"
        if not isinstance(d, dict):
            raise ConfigError(where, "expected an object")
        kind = d.get("kind")
        if kind not in SKETCH_KINDS + BASELINE_KINDS:
            raise ConfigError(f"{where}.kind", f"unknown estimator {kind!r}")
        size = d.get("m", d.get("k", d.get("capacity")))
        try:
            size = check_capacity(size, "m")
        except ValueError as e:
            raise ConfigError(f"{where}.m", str(e)) from None
        return cls(str(d.get("name", f"{kind}_m{size}")), kind, size)


@dataclass
class ExperimentConfig:
    stream: StreamSpec
    estimators: List[EstimatorConfig]
    queries: Dict[str, Any] = field(default_factory=lambda: {"kind": "epochs", "k": 10})
    replicates: int = 1
    seed: int = 0
    level: float = 0.95
    inclusion: bool = True
    output: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config", "expected a JSON object")
        if "stream" not in d:
            raise ConfigError("stream", "missing")
        stream = StreamSpec.from_dict(d["stream"])
        ests = d.get("estimators")
        if not isinstance(ests, list) or not ests:
            raise ConfigError("estimators", "configure at least one estimator")
        estimators = [EstimatorConfig.from_dict(e, i) for i, e in enumerate(ests)]
        names = [e.name for e in estimators]
        if len(set(names)) != len(names):
            raise ConfigError("estimators", "estimator names must be unique")
        R = d.get("replicates", 1)
        if isinstance(R, bool) or not isinstance(R, int) or R < 1:
            raise ConfigError("replicates", "must be a positive integer")
        level = float(d.get("level", 0.95))
        if not (0.0 < level < 1.0):
            raise ConfigError("level", "must lie in (0, 1)")
        queries = d.get("queries", {"kind": "epochs", "k": 10})
        if not isinstance(queries, dict) or queries.get("kind") not in (
                "epochs", "random", "explicit"):
            raise ConfigError("queries.kind", "expected epochs, random or explicit")
        known = {"stream", "estimators", "queries", "replicates", "seed", "level",
                 "inclusion", "output"}
        extra = set(d) - known
        if extra:
            raise ConfigError(sorted(extra)[0], "unknown field")
        return cls(stream, estimators, queries, R, int(d.get("seed", 0)), level,
                   bool(d.get("inclusion", True)), dict(d.get("output", {})))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "stream": self.stream.to_dict(),
            "estimators": [{"name": e.name, "kind": e.kind, "m": e.m}
                           for e in self.estimators],
            "queries": self.queries,
            "replicates": self.replicates,
            "seed": self.seed,
            "level": self.level,
            "inclusion": self.inclusion,
            "output": self.output,
        }


@dataclass
class QueryRow:
    query_id: str
    true_count: float
    estimator: str
    mean_estimate: float
    rrmse: float
    mean_var_est: float
    emp_variance: float
    coverage: float
    relative: bool = True

    def values(self):
        return [self.query_id, self.true_count, self.estimator, self.mean_estimate,
                self.rrmse, self.mean_var_est, self.emp_variance, self.coverage]


@dataclass
class InclusionRow:
    item_id: Any
    true_count: float
    incl_freq: float
    pps_ref: float

    def values(self):
        return [self.item_id, self.true_count, self.incl_freq, self.pps_ref]


@dataclass
class EvalReport:
    rows: List[QueryRow] = field(default_factory=list)
    inclusion: List[InclusionRow] = field(default_factory=list)
    sizes: Dict[str, int] = field(default_factory=dict)
    replicates: int = 0

    def row(self, query_id, estimator):
        for r in self.rows:
            if r.query_id == query_id and r.estimator == estimator:
                return r
        raise KeyError((query_id, estimator))

    def to_dict(self):
        return {
            "queries": [dict(zip(REPORT_COLUMNS, r.values()), relative=r.relative)
                        for r in self.rows],
            "inclusion": [dict(zip(INCLUSION_COLUMNS, r.values()))
                          for r in self.inclusion],
            "estimator_sizes": dict(self.sizes),
            "replicates": self.replicates,
        }


# ----------------------------------------------------------------------
# running
# ----------------------------------------------------------------------


def _query_plan(config, truth):
    q = config.queries
    kind = q["kind"]
    if kind == "epochs":
        return epochs(truth, int(q.get("k", 10)))
    if kind == "random":
        return random_subsets(truth, int(q.get("count", 10)), int(q.get("size", 100)),
                              int(q.get("seed", config.seed)))
    sets = q.get("sets")
    if not isinstance(sets, list):
        raise ConfigError("queries.sets", "expected a list of item lists")
    return [SubsetQuery(members=s, name=f"set{i + 1}") for i, s in enumerate(sets)]


def _masks(queries, plan):
    index = {it: j for j, it in enumerate(plan.items)}
    out = np.zeros((len(queries), len(plan.items)), dtype=bool)
    for qi, q in enumerate(queries):
        for it in q.members:
            j = index.get(it)
            if j is not None:
                out[qi, j] = True
    return out


def summarize(name, queries, est, var, truth_s, z, rows):
    """Fold ``(R, nq)`` estimate/variance/truth matrices into report rows."""
    half = z * np.sqrt(np.maximum(var, 0.0))
    lo = np.maximum(est - half, 0.0)
    hi = est + half
    covered = (lo <= truth_s) & (truth_s <= hi)
    for qi, q in enumerate(queries):
        n_s = float(truth_s[:, qi].mean())
        err = est[:, qi] - truth_s[:, qi]
        rmse = math.sqrt(float(np.mean(err ** 2)))
        relative = n_s > 0
        rows.append(QueryRow(
            query_id=q.name, true_count=n_s, estimator=name,
            mean_estimate=float(est[:, qi].mean()),
            rrmse=rmse / n_s if relative else rmse,
            mean_var_est=float(var[:, qi].mean()),
            emp_variance=float(est[:, qi].var(ddof=1)) if est.shape[0] > 1 else 0.0,
            coverage=float(covered[:, qi].mean()), relative=relative))


def _truth_matrix(plan, R, stream_seed):
    """Per-replicate true counts by code (fixed unless the plan is i.i.d.)."""
    if not plan.is_iid:
        per_code = np.rint(expected_counts(plan)).astype(np.int64)
        return np.broadcast_to(per_code, (R, per_code.shape[0]))
    out = np.zeros((R, len(plan.items)), np.int64)
    st = stream_states(stream_seed, R)
    buf = np.empty(plan.iid_rows, np.int64)
    for r in range(R):
        srng = st[r].copy()
        K.draw_iid(plan.prob, plan.alias, srng, buf)
        out[r] = np.bincount(buf, minlength=out.shape[1])
    return out


def _priority_matrix(truth, masks, m, seed, idx):
    R = truth.shape[0]
    nq = masks.shape[0]
    est = np.zeros((R, nq))
    var = np.zeros((R, nq))
    for r in range(R):
        n = truth[r].astype(np.float64)
        pos = np.flatnonzero(n > 0)
        rng = np.random.default_rng(np.random.SeedSequence([seed, PRIORITY_TAG, idx, r]))
        u = 1.0 - rng.random(pos.shape[0])
        prio = u / n[pos]
        if pos.shape[0] <= m:
            keep, floor = pos, 0.0
        else:
            part = np.argpartition(prio, m)
            keep, floor = pos[part[:m]], 1.0 / prio[part[m]]
        adj = np.maximum(n[keep], floor)
        v = floor * np.maximum(floor - n[keep], 0.0)
        inside = masks[:, keep]
        est[r] = inside @ adj
        var[r] = inside @ v
    return est, var


def _bottom_k_matrix(truth, masks, items, k, seed, idx):
    R = truth.shape[0]
    nq = masks.shape[0]
    est = np.zeros((R, nq))
    var = np.zeros((R, nq))
    for r in range(R):
        n = truth[r].astype(np.float64)
        pos = np.flatnonzero(n > 0)
        hseed = int(rng_words(seed, 0x424B, idx, r)[0])
        h = np.array([item_hash(items[j], hseed) for j in pos.tolist()])
        if pos.shape[0] <= k:
            keep, scale = pos, 1.0
        else:
            part = np.argpartition(h, k - 1)[:k]
            keep = pos[part]
            scale = (k - 1) / h[part].max() / k
        adj = n[keep] * scale
        v = n[keep] ** 2 * scale * (scale - 1.0) if scale > 1 else np.zeros(keep.shape[0])
        inside = masks[:, keep]
        est[r] = inside @ adj
        var[r] = inside @ v
    return est, var


def _hold_matrix(plan, masks, m, seed, stream_seed, idx, R):
    nq = masks.shape[0]
    est = np.zeros((R, nq))
    var = np.zeros((R, nq))
    for r in range(R):
        sh = SampleAndHold(capacity=m, random_state=int(rng_words(seed, HOLD_TAG, idx, r)[0]))
        sh._reset()
        for chunk in iter_codes(plan, stream_seed, r):
            for code in chunk.tolist():
                sh.update(code)
        codes = np.fromiter(sh.counters_.keys(), dtype=np.int64, count=len(sh.counters_))
        vals = np.fromiter(sh.counters_.values(), dtype=np.float64,
                           count=len(sh.counters_)) + sh.offset
        inside = masks[:, codes]
        est[r] = inside @ vals
        var[r] = inside.sum(axis=1) * (1.0 - sh.rate_) / sh.rate_ ** 2
    return est, var


def run(config, threads=1):
    """Execute ``config`` and aggregate every estimator over every query."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    spec = config.stream
    m_hint = max(e.m for e in config.estimators if e.kind in SKETCH_KINDS) \
        if any(e.kind in SKETCH_KINDS for e in config.estimators) else None
    plan = compile_plan(spec, spec.m if spec.m is not None else m_hint)
    R = config.replicates
    stream_seed = int(rng_words(config.seed, spec.seed)[0])
    truth_gt = plan.truth if plan.truth is not None else GroundTruth(
        plan.items, np.rint(expected_counts(plan)).astype(np.int64))
    queries = _query_plan(config, truth_gt)
    masks = _masks(queries, plan)
    z = normal_quantile(0.5 + config.level / 2.0)
    truth = _truth_matrix(plan, R, stream_seed)
    truth_s = truth @ masks.T.astype(np.int64)
    report = EvalReport(replicates=R)
    incl_done = False
    for idx, e in enumerate(config.estimators):
        report.sizes[e.name] = e.m
        if e.kind in SKETCH_KINDS:
            runs = run_replicates(plan, e.m, e.kind == "unbiased", R, config.seed,
                                  stream_seed=stream_seed, threads=threads, path=(idx,))
            est = np.empty((R, len(queries)))
            var = np.empty((R, len(queries)))
            for qi in range(len(queries)):
                est[:, qi], c_s = runs.subset(masks[qi])
                var[:, qi] = runs.subset_variance(c_s)
            if config.inclusion and not incl_done and e.kind == "unbiased":
                incl_done = True
                expected = expected_counts(plan)
                ref = runs.pps_reference(expected)
                freq = runs.inclusion()
                report.inclusion = [
                    InclusionRow(plan.items[j], float(expected[j]), float(freq[j]),
                                 float(ref[j]))
                    for j in range(len(plan.items))]
        elif e.kind == "priority":
            est, var = _priority_matrix(truth, masks, e.m, config.seed, idx)
        elif e.kind == "bottom_k":
            est, var = _bottom_k_matrix(truth, masks, plan.items, e.m, config.seed, idx)
        else:
            est, var = _hold_matrix(plan, masks, e.m, config.seed, stream_seed, idx, R)
        summarize(e.name, queries, est, var, truth_s.astype(np.float64), z, report.rows)
    return report


# ----------------------------------------------------------------------
# CSV ingestion
# ----------------------------------------------------------------------


def ingest_csv(path, key_columns, weight_column=None):
    """Yield ``(item_id, weight)`` for each data row of a CSV file, in order.

    Multi-column keys are joined with U+241F.
    """
    if isinstance(key_columns, str):
        key_columns = [key_columns]
    key_columns = list(key_columns)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in key_columns + ([weight_column] if weight_column else []):
            if col not in header:
                raise SchemaError(col, path)
        for row in reader:
            line = reader.line_num
            if any(row.get(c) is None for c in key_columns):
                raise RowError(line, "too few fields")
            item = KEY_SEPARATOR.join(row[c] for c in key_columns)
            if weight_column:
                raw = row[weight_column]
                try:
                    w = check_weight(raw)
                except ValueError:
                    raise RowError(line, f"bad weight {raw!r}") from None
            else:
                w = 1.0
            yield item, w


# ----------------------------------------------------------------------
# writing
# ----------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.10g}"
    return str(x)


def report_csv(report):
    """``(queries_csv, inclusion_csv)`` as text."""
    out = []
    for columns, rows in ((REPORT_COLUMNS, report.rows),
                          (INCLUSION_COLUMNS, report.inclusion)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
        out.append(buf.getvalue())
    return tuple(out)


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return _json_safe(x.item())
    return x


def report_write(report, format, path, inclusion_path=None):
    """Write ``report`` as CSV (queries plus inclusion file) or one JSON document.

    For CSV the inclusion rows go to ``inclusion_path``, defaulting to
    ``<stem>_inclusion.csv`` next to ``path``.
    """
    try:
        if format == "csv":
            queries_txt, incl_txt = report_csv(report)
            with open(path, "w", newline="") as fh:
                fh.write(queries_txt)
            if inclusion_path is None:
                stem = str(path)[:-4] if str(path).endswith(".csv") else str(path)
                inclusion_path = stem + "_inclusion.csv"
            with open(inclusion_path, "w", newline="") as fh:
                fh.write(incl_txt)
        elif format == "json":
            with open(path, "w") as fh:
                json.dump(_json_safe(report.to_dict()), fh, indent=2, sort_keys=True)
                fh.write("\n")
        else:
            raise ValueError(f"unknown report format {format!r}")
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e.strerror or e}") from e
