"""Command line entry point: ``skewlab {fit,bench,mardia-max,ari}``.

Exit codes: 0 success, 2 invalid input, 3 a sweep finished with failed fits.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import List

import numpy as np

from . import bench
from .distributions import canonical_family
from .exceptions import SkewlabError
from .mixtures import FitConfig, fit
from .moments import MaximizeConfig, maximize_sdb_mardia

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_PARTIAL = 3


def parse_int_list(text: str) -> List[int]:
    """``"1..10"``, ``"2,3"`` or a mix such as ``"1..3,7"``."""
    out: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise SkewlabError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise SkewlabError(f"no integers in {text!r}")
    return out


def _load(path: str, schema: str | None) -> bench.Dataset:
    if schema is None:
        schema = os.path.splitext(os.path.basename(path))[0]
    return bench.ingest_csv(path, schema)


def _read_labels(path: str) -> np.ndarray:
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        return np.asarray(json.loads(text))
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if rows and len(rows[0]) > 1:
        raise SkewlabError(f"{path}: expected one label per line")
    return np.asarray([r[0].strip() for r in rows])


def cmd_fit(args) -> int:
    ds = _load(args.data, args.schema)
    cols = [c.strip() for c in args.columns.split(",")]
    unknown = [c for c in cols if c not in ds.continuous]
    if unknown:
        raise SkewlabError(f"not continuous columns of {ds.name}: {unknown}")
    x = ds.matrix(cols)
    if not args.raw:
        x = bench.standardize(x)
    cfg = FitConfig(g=args.g, seed=args.seed, max_iter=args.max_iter)
    res = fit(x, canonical_family(args.family), cfg)
    out = res.to_dict()
    out["ari"] = bench.ari(res.labels, ds.labels)
    out["columns"] = cols
    print(json.dumps(out, indent=None if args.compact else 2))
    return EXIT_OK


def cmd_bench(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    sizes = parse_int_list(args.sizes)
    seeds = parse_int_list(args.seeds)
    families = [canonical_family(f) for f in args.families.split(",")]
    cfg = FitConfig(g=args.g, max_iter=args.max_iter)
    path = os.path.join(args.out, "reports.jsonl")
    if not args.append and os.path.exists(path):
        os.remove(path)
    reports = []
    for data in args.data:
        ds = _load(data, args.schema if len(args.data) == 1 else None)
        logging.info("%s: %d rows, %d continuous columns", ds.name, ds.n, len(ds.continuous))
        reports += bench.run_experiment(ds, sizes, seeds, families, cfg, out=path,
                                        workers=args.workers, reuse=not args.no_reuse)
    if args.append:
        reports = bench.read_reports(path)
    summary = bench.summarize(reports)
    summary.write(args.out)
    with open(os.path.join(args.out, "run_config.json"), "w") as fh:
        json.dump({"data": args.data, "sizes": sizes, "seeds": seeds, "families": families,
                   "g": args.g, "max_iter": args.max_iter, "preprocessing": "standardized"},
                  fh, indent=2)
    failed = sum(1 for r in reports for v in r.family_results.values() if v.get("failed"))
    print(json.dumps({"reports": len(reports), "failed": failed, "winloss": summary.winloss}))
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_mardia_max(args) -> int:
    cfg = MaximizeConfig(n_starts=args.starts, seed=args.seed)
    res = maximize_sdb_mardia(d=args.d, which=args.which, cfg=cfg)
    print(json.dumps(res.to_dict()))
    return EXIT_OK


def cmd_ari(args) -> int:
    print(json.dumps({"ari": bench.ari(_read_labels(args.pred), _read_labels(args.truth))}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skewlab", description="Skew-normal and skew-t mixture tools.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a mixture to columns of a CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", help="schema JSON or bundled name (default: file stem)")
    p.add_argument("--columns", required=True)
    p.add_argument("--family", required=True, help="csn, ssn, cst or sst")
    p.add_argument("--g", type=int, default=2)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--raw", action="store_true", help="do not standardise columns")
    p.add_argument("--compact", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="all-subsets clustering sweep")
    p.add_argument("--data", required=True, action="append", help="CSV file; repeat for several")
    p.add_argument("--schema")
    p.add_argument("--sizes", default="2,3")
    p.add_argument("--seeds", default="1")
    p.add_argument("--families", default="csn,ssn")
    p.add_argument("--g", type=int, default=2)
    p.add_argument("--max-iter", type=int, default=500, help="per-fit ECM iteration cap")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--append", action="store_true", help="add to an existing reports.jsonl")
    p.add_argument("--no-reuse", action="store_true", help="refit tasks with identical starts")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("mardia-max", help="maximise SDB Mardia skewness or kurtosis")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--which", choices=["skewness", "kurtosis"], default="skewness")
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mardia_max)

    p = sub.add_parser("ari", help="adjusted Rand index of two label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=cmd_ari)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SkewlabError, OSError, KeyError, ValueError) as exc:
        print(f"skewlab: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
