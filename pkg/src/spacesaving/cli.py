"""Command line entry point: ``spacesaving {generate,run,merge-demo,ingest}``."""

import argparse
import json
import os
import sys

import numpy as np

from .estimation import normal_quantile, subset_sum
from .harness import (EvalReport, ExperimentConfig, InclusionRow, ingest_csv,
                      report_write, run, summarize)
from .merge import merge_misra_gries, merge_unbiased
from .replicates import pps_reference
from .sketch import SpaceSaving
from .streams import GroundTruth, StreamSpec, dump_stream, epochs
from .validation import SketchError


def _out_dir(path):
    path = path or "."
    os.makedirs(path, exist_ok=True)
    return path


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def cmd_generate(args):
    cfg = _load_json(args.config)
    spec = StreamSpec.from_dict(cfg.get("stream", cfg))
    if args.seed is not None:
        spec.seed = args.seed
    out = _out_dir(args.out)
    truth = dump_stream(spec, os.path.join(out, "stream.txt"),
                        os.path.join(out, "truth.csv"))
    print(f"wrote {truth.n_tot} rows over {truth.v} items to {out}")
    return 0


def cmd_run(args):
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = run(config, threads=args.threads)
    out = _out_dir(args.out)
    fmt = args.format
    path = os.path.join(out, f"report.{fmt}")
    report_write(report, fmt, path, os.path.join(out, "inclusion.csv"))
    print(f"wrote {path}")
    return 0


def cmd_merge_demo(args):
    a = SpaceSaving.load(args.a)
    b = SpaceSaving.load(args.b)
    m = args.m if args.m is not None else max(a.capacity, b.capacity)
    if args.kind == "unbiased":
        seed = args.seed if args.seed is not None else 0
        res = merge_unbiased(a, b, m, random_state=seed)
    else:
        res = merge_misra_gries(a, b, m)
    text = res.sketch.dumps()
    if args.out:
        target = args.out
        if os.path.isdir(target):
            target = os.path.join(target, "merged.json")
        with open(target, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {target}")
    else:
        print(text)
    return 0


def cmd_ingest(args):
    keys = [k for k in args.key.split(",") if k]
    weighted = args.weight is not None
    sk = SpaceSaving(capacity=args.m, mode=args.mode,
                     counts="real" if weighted else "integer",
                     random_state=args.seed if args.seed is not None else 0)
    sk._reset()
    totals = {}
    batch = []
    for item, w in ingest_csv(args.input, keys, args.weight):
        totals[item] = totals.get(item, 0.0) + w
        if weighted:
            sk.update_weighted(item, w)
        else:
            batch.append(item)
            if len(batch) >= 65536:
                sk.partial_fit(batch)
                batch = []
    if batch:
        sk.partial_fit(batch)
    truth = GroundTruth(list(totals), list(totals.values()))
    report = ingest_report(sk, truth, args.mode, args.m, args.epochs)
    out = _out_dir(args.out)
    path = os.path.join(out, f"report.{args.format}")
    report_write(report, args.format, path, os.path.join(out, "inclusion.csv"))
    sk.save(os.path.join(out, "sketch.json"))
    print(f"ingested {truth.n_tot:g} weight over {truth.v} items; wrote {path}")
    return 0


def ingest_report(sketch, truth, name, m, k=10, level=0.95):
    """Single-run report of a sketch against the exact totals of its input."""
    queries = epochs(truth, k)
    est = np.zeros((1, len(queries)))
    var = np.zeros((1, len(queries)))
    exact = np.zeros((1, len(queries)))
    for qi, q in enumerate(queries):
        res = subset_sum(sketch, q, level)
        est[0, qi], var[0, qi] = res.estimate, res.variance
        exact[0, qi] = q.true_count(truth)
    report = EvalReport(replicates=1, sizes={name: m})
    summarize(name, queries, est, var, exact, normal_quantile(0.5 + level / 2),
              report.rows)
    ref, _ = pps_reference(truth.counts_, m)
    report.inclusion = [InclusionRow(it, float(c), float(it in sketch), float(p))
                        for (it, c), p in zip(truth.items(), ref)]
    return report


def build_parser():
    p = argparse.ArgumentParser(prog="spacesaving", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--threads", type=int, default=1)

    g = sub.add_parser("generate", help="dump a synthetic stream and its ground truth")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment config")
    common(r)
    r.set_defaults(func=cmd_run)

    md = sub.add_parser("merge-demo", help="merge two serialized sketches")
    md.add_argument("a")
    md.add_argument("b")
    md.add_argument("--m", type=int, default=None, help="target capacity")
    md.add_argument("--kind", choices=("unbiased", "misra_gries"), default="unbiased")
    common(md, config=False)
    md.set_defaults(func=cmd_merge_demo)

    ing = sub.add_parser("ingest", help="sketch a CSV event log and report")
    ing.add_argument("input")
    ing.add_argument("--key", required=True, help="comma-separated key columns")
    ing.add_argument("--weight", default=None, help="optional weight column")
    ing.add_argument("--m", type=int, default=100)
    ing.add_argument("--mode", choices=("unbiased", "deterministic"), default="unbiased")
    ing.add_argument("--epochs", type=int, default=10)
    common(ing, config=False)
    ing.set_defaults(func=cmd_ingest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SketchError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
