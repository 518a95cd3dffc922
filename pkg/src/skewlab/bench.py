"""
All-subsets clustering benchmark.

Every pair and triplet of a dataset's continuous columns is standardised and
clustered with a two-component mixture of each family; the partitions are
scored against the dataset's reference label with the adjusted Rand index
and fit times are recorded.  Reports are appended to a JSON-lines file as
they complete, and :func:`summarize` reduces them to the scatter of ARI pairs,
the SDB/classical fit-time ratios and win/loss/tie counts.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .distributions import canonical_family
from .exceptions import SkewlabError
from .mixtures import FitConfig, fit, initial_responsibilities

logger = logging.getLogger(__name__)

DEFAULT_FAMILIES = ("classical-SN", "SDB-SN")
ARI_TIE_TOL = 1e-6
_MISSING = {"", "na", "nan", "null", "none", "?"}


# ---------------------------------------------------------------------------
# Adjusted Rand index
# ---------------------------------------------------------------------------

def _pairs(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=float)
    return float(np.sum(counts * (counts - 1.0)) / 2.0)


def ari(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index between two partitions.

    When the expected and maximum index coincide (both partitions a single
    cluster, or both all singletons) the index is 1 for identical partitions
    and 0 otherwise.
    """
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.size != b.size:
        raise SkewlabError(f"label vectors differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        raise SkewlabError("need at least two labels")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    index = _pairs(table)
    sa = _pairs(table.sum(axis=1))
    sb = _pairs(table.sum(axis=0))
    expected = sa * sb / (n * (n - 1) / 2.0)
    top = 0.5 * (sa + sb)
    if math.isclose(top, expected, rel_tol=0.0, abs_tol=1e-12):
        same = np.count_nonzero(table) == table.shape[0] == table.shape[1]
        return 1.0 if same else 0.0
    return (index - expected) / (top - expected)


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Typed table: continuous columns as floats, categorical ones as strings."""

    name: str
    columns: List[Tuple[str, str]]
    rows: Dict[str, np.ndarray]
    reference_label: str
    dropped_rows: int = 0

    def __post_init__(self):
        kinds = dict(self.columns)
        if kinds.get(self.reference_label) != "categorical":
            raise SkewlabError(f"reference label {self.reference_label!r} must be a categorical column")
        for col in self.continuous:
            if np.any(~np.isfinite(self.rows[col])):
                raise SkewlabError(f"column {col!r} has missing values")

    @property
    def n(self) -> int:
        return len(self.rows[self.reference_label])

    @property
    def continuous(self) -> List[str]:
        return [c for c, kind in self.columns if kind == "continuous"]

    @property
    def labels(self) -> np.ndarray:
        return self.rows[self.reference_label]

    def matrix(self, cols: Sequence[str]) -> np.ndarray:
        return np.column_stack([self.rows[c] for c in cols])


def load_schema(schema) -> dict:
    """A schema given as a dict, a JSON path, or the name of a bundled schema."""
    if isinstance(schema, dict):
        return schema
    text = str(schema)
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    bundled = resources.files("skewlab").joinpath("schemas", f"{text.lower()}.json")
    if bundled.is_file():
        return json.loads(bundled.read_text())
    raise SkewlabError(f"no schema file or bundled schema named {text!r}")


def ingest_csv(path, schema) -> Dataset:
    """Read ``path`` into a :class:`Dataset` described by ``schema``.

    Rows with a missing continuous value are dropped and counted; a cell that
    is present but not numeric is an error naming its file line.
    """
    spec = load_schema(schema)
    columns = [(c["name"], c["kind"]) for c in spec["columns"]]
    for name, kind in columns:
        if kind not in ("continuous", "categorical"):
            raise SkewlabError(f"column {name!r}: unknown kind {kind!r}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [c for c, _ in columns if c not in header]
        if absent:
            raise SkewlabError(f"{path}: missing declared columns {absent}")
        data: Dict[str, list] = {c: [] for c, _ in columns}
        bad = []
        dropped = 0
        for line, rec in enumerate(reader, start=2):
            parsed = {}
            missing = False
            for c, kind in columns:
                raw = (rec[c] or "").strip()
                if kind == "categorical":
                    parsed[c] = raw
                    continue
                if raw.lower() in _MISSING:
                    missing = True
                    continue
                try:
                    parsed[c] = float(raw)
                except ValueError:
                    bad.append(f"line {line}, column {c!r}: {raw!r}")
            if missing:
                dropped += 1
                continue
            for c, _ in columns:
                data[c].append(parsed.get(c))
        if bad:
            raise SkewlabError(f"{path}: unparseable numeric cells: " + "; ".join(bad))
    if dropped:
        logger.warning("%s: dropped %d rows with missing continuous values", path, dropped)
    rows = {
        c: np.asarray(data[c], dtype=float if kind == "continuous" else object)
        for c, kind in columns
    }
    return Dataset(
        name=spec.get("name", os.path.splitext(os.path.basename(str(path)))[0]),
        columns=columns,
        rows=rows,
        reference_label=spec["reference_label"],
        dropped_rows=dropped,
    )


def enumerate_subsets(columns: Sequence[str], sizes: Iterable[int] = (2, 3)) -> List[Tuple[str, ...]]:
    """Combinations of ``columns`` by increasing size, each in column order."""
    cols = list(columns)
    if len(set(cols)) != len(cols):
        raise SkewlabError("duplicate column names")
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes or sizes[0] < 1:
        raise SkewlabError("subset sizes must be positive")
    if len(cols) < sizes[-1]:
        raise SkewlabError(f"{len(cols)} columns cannot form subsets of size {sizes[-1]}")
    return [combo for k in sizes for combo in itertools.combinations(cols, k)]


def standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std(axis=0)
    return (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ExperimentReport:
    """One fit: a dataset, a column subset, a sweep seed and one family."""

    dataset: str
    subset: List[str]
    seed: int
    family_results: Dict[str, dict]
    timestamp: str
    task_seed: int = 0
    preprocessing: str = "standardized"
    reused: bool = False

    @property
    def family(self) -> str:
        return next(iter(self.family_results))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def task_seed(seed: int, subset_index: int) -> int:
    """Fit seed for one (sweep seed, subset) task; shared by both families."""
    return int(np.random.SeedSequence([int(seed), int(subset_index)]).generate_state(1, np.uint64)[0])


def _fit_task(x: np.ndarray, labels: np.ndarray, family: str, cfg: FitConfig) -> dict:
    t0 = time.perf_counter()
    try:
        res = fit(x, family, cfg)
    except Exception as exc:  # a failed fit is recorded, never fatal
        return {
            "ari": 0.0, "wall_time": max(time.perf_counter() - t0, 1e-9), "converged": False,
            "failed": True, "loglik": None, "iterations": 0, "notes": [f"error: {exc}"],
        }
    return {
        "ari": float(ari(res.labels, labels)),
        "wall_time": float(res.wall_time),
        "converged": bool(res.converged),
        "failed": bool(res.failed),
        "loglik": float(res.loglik),
        "iterations": int(res.iterations),
        "notes": list(res.notes),
    }


def _uses_rng_after_start(result: dict) -> bool:
    return any("reseeded" in note or note.startswith("error") for note in result["notes"])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_experiment(
    dataset: Dataset,
    sizes: Iterable[int] = (2, 3),
    seeds: Iterable[int] = (1,),
    families: Iterable[str] = DEFAULT_FAMILIES,
    cfg: Optional[FitConfig] = None,
    out=None,
    workers: int = 1,
    reuse: bool = True,
) -> List[ExperimentReport]:
    """Fit every (subset, seed, family) task and return one report per task.

    ``cfg`` supplies everything but the seed (``max_iter`` caps each fit).
    Reports are appended to the JSON-lines file ``out`` as they complete.

    With ``reuse`` a task whose starting partition, data and settings equal
    those of a finished task, where that fit drew nothing from its random
    generator after the start, takes that task's result: the fit is
    deterministic given its start, so the outcome is the same as refitting.
    Such reports carry ``reused=True`` and the original fit time.
    """
    cfg = cfg or FitConfig()
    families = [canonical_family(f) for f in families]
    seeds = [int(s) for s in seeds]
    subsets = enumerate_subsets(dataset.continuous, sizes)
    labels = dataset.labels
    sink = open(out, "a") if out is not None else None
    reports: List[ExperimentReport] = []
    done: Dict[str, dict] = {}
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    pending = {}
    waiting: Dict[str, list] = {}

    def emit(meta, result, reused):
        subset, seed, tseed, family = meta
        rep = ExperimentReport(
            dataset=dataset.name, subset=list(subset), seed=seed,
            family_results={family: result}, timestamp=_now(), task_seed=tseed, reused=reused,
        )
        reports.append(rep)
        if sink is not None:
            sink.write(json.dumps(rep.to_dict()) + "\n")
            sink.flush()

    def settle(key, meta, result, reused=False):
        emit(meta, result, reused)
        if key is None:
            return
        if not _uses_rng_after_start(result):
            done[key] = result
            for other in waiting.pop(key, []):
                emit(other, result, True)
        else:
            for other in waiting.pop(key, []):
                submit(None, other)

    def submit(key, meta):
        subset, seed, tseed, family = meta
        x = standardize(dataset.matrix(subset))
        task_cfg = dataclasses.replace(cfg, seed=tseed)
        if pool is None:
            settle(key, meta, _fit_task(x, labels, family, task_cfg))
        else:
            pending[pool.submit(_fit_task, x, labels, family, task_cfg)] = (key, meta)

    def drain(block_all=False):
        while pending and (block_all or len(pending) >= 2 * workers):
            finished, _ = wait(list(pending), return_when=FIRST_COMPLETED)
            for fut in finished:
                key, meta = pending.pop(fut)
                settle(key, meta, fut.result())

    try:
        for idx, subset in enumerate(subsets):
            x = standardize(dataset.matrix(subset))
            for seed in seeds:
                tseed = task_seed(seed, idx)
                start = None
                if reuse:
                    z0 = initial_responsibilities(x, dataclasses.replace(cfg, seed=tseed))
                    start = hashlib.sha256(z0.tobytes() + x.tobytes()).hexdigest()
                for family in families:
                    meta = (subset, seed, tseed, family)
                    key = None
                    if reuse:
                        key = f"{family}|{','.join(subset)}|{start}|{_cfg_key(cfg)}"
                        if key in done:
                            emit(meta, done[key], True)
                            continue
                        if key in waiting:
                            waiting[key].append(meta)
                            continue
                        waiting[key] = []
                    submit(key, meta)
                    drain()
        drain(block_all=True)
    finally:
        if pool is not None:
            pool.shutdown()
        if sink is not None:
            sink.close()
    return reports


def _cfg_key(cfg: FitConfig) -> str:
    d = dataclasses.asdict(cfg)
    d.pop("seed")
    return json.dumps(d, sort_keys=True, default=str)


def read_reports(path) -> List[ExperimentReport]:
    with open(path) as fh:
        return [ExperimentReport.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class Summary:
    """Scatter rows, fit-time ratio table and win/loss/tie counts."""

    scatter: List[dict]
    ratios: List[dict]
    winloss: Dict[str, dict] = field(default_factory=dict)

    def write(self, outdir) -> None:
        os.makedirs(outdir, exist_ok=True)
        _write_csv(os.path.join(outdir, "figure1_scatter.csv"), self.scatter,
                   ["dataset", "kind", "subset", "size", "seed", "ari_classical", "ari_sdb"])
        _write_csv(os.path.join(outdir, "table1_ratios.csv"), self.ratios,
                   ["dataset", "kind", "d", "n", "mean_ratio", "sd_ratio"])
        with open(os.path.join(outdir, "winloss.json"), "w") as fh:
            json.dump(self.winloss, fh, indent=2, sort_keys=True)


def _write_csv(path, rows, header):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for row in rows:
            w.writerow(row)


def summarize(reports: Iterable[ExperimentReport], tie_tol: float = ARI_TIE_TOL) -> Summary:
    """Pair classical and SDB fits of the same kind (SN or ST) per subset and seed.

    Ratios are SDB over classical wall time; ``sd_ratio`` is the sample
    standard deviation (zero for a single pair).  A pair is a tie when the
    ARIs differ by at most ``tie_tol``.  Errored fits are left out.
    """
    table: Dict[tuple, dict] = {}
    for rep in reports:
        for family, res in rep.family_results.items():
            if res.get("loglik") is None:
                continue
            form, kind = family.split("-")
            key = (rep.dataset, kind, tuple(rep.subset), int(rep.seed))
            table.setdefault(key, {})[form] = res
    scatter, ratio_groups = [], {}
    counts: Dict[str, dict] = {}
    for key in sorted(table):
        pair = table[key]
        if "classical" not in pair or "SDB" not in pair:
            continue
        dataset, kind, subset, seed = key
        c, s = pair["classical"], pair["SDB"]
        scatter.append({
            "dataset": dataset, "kind": kind, "subset": "+".join(subset), "size": len(subset),
            "seed": seed, "ari_classical": c["ari"], "ari_sdb": s["ari"],
        })
        ratio_groups.setdefault((dataset, kind, len(subset)), []).append(s["wall_time"] / c["wall_time"])
        tally = counts.setdefault(kind, {"classical_wins": 0, "sdb_wins": 0, "ties": 0})
        diff = s["ari"] - c["ari"]
        if abs(diff) <= tie_tol:
            tally["ties"] += 1
        elif diff > 0:
            tally["sdb_wins"] += 1
        else:
            tally["classical_wins"] += 1
    ratios = []
    for (dataset, kind, d), vals in sorted(ratio_groups.items()):
        v = np.asarray(vals)
        ratios.append({
            "dataset": dataset, "kind": kind, "d": d, "n": v.size, "mean_ratio": float(v.mean()),
            "sd_ratio": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        })
    for tally in counts.values():
        total = tally["classical_wins"] + tally["sdb_wins"] + tally["ties"]
        tally["total"] = total
        tally["max_win_share"] = max(tally["classical_wins"], tally["sdb_wins"]) / total if total else 0.0
    return Summary(scatter=scatter, ratios=ratios, winloss=counts)
