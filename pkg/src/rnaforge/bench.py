"""Evaluation harness: metric tables, best-of-N curves, validity sweeps, timing fits."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoding import DecodeRequest, best_of_n, sample
from .errors import EvaluationFailed, InvalidDesign
from .folding import fold, fold_summary
from .structure import Structure, as_structure, is_valid_design
from .thermo import EnergyParams

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ROW_FIELDS = ("structure_id", "length", "best_prob", "best_ned", "is_mfe", "is_umfe",
              "samples", "failures", "status", "sequence", "wall_time")
TIMING_FIELDS = ("wall_time",)


def resolve_workers(workers: int | None = None) -> int:
    """Worker count; the ``RNAFORGE_THREADS`` environment variable wins."""
    env = os.environ.get("RNAFORGE_THREADS")
    if env:
        workers = int(env)
    return max(1, int(workers or 1))


def _ordered_map(fn, items, workers: int):
    # results come back in input order whatever the worker count
    if workers <= 1:
        return [fn(i, v) for i, v in enumerate(items)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, range(len(items)), items))


@dataclass
class BenchRow:
    structure_id: int
    length: int
    best_prob: float | None
    best_ned: float | None
    is_mfe: bool
    is_umfe: bool
    samples: int
    failures: int
    status: str = "ok"
    sequence: str = ""
    wall_time: float = 0.0


def aggregate_rows(rows) -> dict:
    ok = [r for r in rows if r.status == "ok"]
    return {
        "n_structures": len(rows),
        "n_evaluated": len(ok),
        "mean_prob": float(np.mean([r.best_prob for r in ok])) if ok else None,
        "mean_ned": float(np.mean([r.best_ned for r in ok])) if ok else None,
        "mfe_count": sum(int(r.is_mfe) for r in ok),
        "umfe_count": sum(int(r.is_umfe) for r in ok),
        "failures": sum(r.failures for r in rows),
    }


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass
class BenchReport:
    rows: list
    aggregate: dict
    curves: dict = field(default_factory=dict)  # structure_id -> [(N, best)]
    config: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows, curves=None, config=None) -> "BenchReport":
        return cls(list(rows), aggregate_rows(rows), dict(curves or {}), dict(config or {}))

    def check_aggregate(self) -> bool:
        return aggregate_rows(self.rows) == self.aggregate

    def to_tsv(self, timing: bool = True) -> str:
        fields = [f for f in ROW_FIELDS if timing or f not in TIMING_FIELDS]
        out = io.StringIO()
        w = csv.writer(out, delimiter="\t", lineterminator="\n")
        w.writerow(fields)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, f)) for f in fields])
        return out.getvalue()

    def curves_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["structure_id", "n", "best"])
        for sid in sorted(self.curves):
            for n, best in self.curves[sid]:
                w.writerow([sid, n, _fmt(best)])
        return out.getvalue()

    def to_json(self, timing: bool = True) -> str:
        doc = {"schema_version": SCHEMA_VERSION, "config": self.config,
               "aggregate": self.aggregate}
        if timing:
            doc["timing"] = {"total_wall_time": sum(r.wall_time for r in self.rows)}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def write(self, prefix) -> list[str]:
        """Write ``<prefix>.tsv``, ``<prefix>.curves.csv`` and ``<prefix>.json``."""
        paths = [f"{prefix}.tsv", f"{prefix}.curves.csv", f"{prefix}.json"]
        for path, text in zip(paths, (self.to_tsv(), self.curves_csv(), self.to_json())):
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return paths


def _row_from_eval(sid: int, y: Structure, ev, samples: int, failures: int,
                   seconds: float) -> BenchRow:
    return BenchRow(sid, len(y), ev.prob, ev.ned, bool(ev.is_mfe), bool(ev.is_umfe), samples,
                    failures, "ok", ev.sequence, seconds)


def evaluate_designs(pairs, params: EnergyParams, workers: int = 1) -> BenchReport:
    """One full evaluation per ``(structure, sequence)`` pair."""
    items = [(as_structure(y, params.h_min), x.upper().replace("T", "U")) for y, x in pairs]
    for i, (y, x) in enumerate(items):
        if not is_valid_design(x, y):
            raise InvalidDesign(f"row {i}: {x} is not a valid design for {y.text}")

    def run(i, item):
        y, x = item
        start = time.perf_counter()
        try:
            ev = fold_summary(x, y, params)
        except EvaluationFailed as exc:
            log.warning("row %d: %s", i, exc)
            return BenchRow(i, len(y), None, None, False, False, 1, 1, "failed", x,
                            time.perf_counter() - start)
        return _row_from_eval(i, y, ev, 1, 0, time.perf_counter() - start)

    rows = _ordered_map(run, items, resolve_workers(workers))
    return BenchReport.from_rows(rows, config={"mode": "eval", "params": params.to_text()})


def benchmark(policy, structures, n: int, metric: str = "prob", seed: int = 0,
              params: EnergyParams | None = None, workers: int = 1, constrained: bool = True,
              temperature: float = 1.0, sampler=None) -> BenchReport:
    """Best-of-``n`` per structure with running-best curves.

    Each structure draws from its own seed-keyed sample stream, so the report
    does not depend on ``workers``. A structure whose samples all fail is
    marked and the run continues.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    params = params or EnergyParams()
    items = [as_structure(y, params.h_min) for y in structures]

    def run(i, y):
        start = time.perf_counter()
        res = best_of_n(policy, y, n, metric, params, seed, constrained, temperature, sampler)
        curve = res.curve
        if res.best_sequence is None:
            row = BenchRow(i, len(y), None, None, False, False, n, res.failures + res.invalid,
                           "failed", "", time.perf_counter() - start)
            return row, curve
        ev = res.best_evaluation
        if ev.ned is None:
            ev = fold_summary(res.best_sequence, y, params)
        row = _row_from_eval(i, y, ev, n, res.failures + res.invalid, time.perf_counter() - start)
        return row, curve

    results = _ordered_map(run, items, resolve_workers(workers))
    config = {"mode": "bench", "n": n, "metric": metric, "seed": seed,
              "constrained": constrained, "temperature": temperature,
              "params": params.to_text()}
    return BenchReport.from_rows([r for r, _ in results],
                                 {i: c for i, (_, c) in enumerate(results)}, config)


# -- validity sweep -------------------------------------------------------------------


@dataclass
class SweepRow:
    bucket: int
    len_min: int
    len_max: int
    n_structures: int
    unconstrained_invalid: float
    constrained_invalid: float
    time_unconstrained: float
    time_constrained: float

    @property
    def overhead(self) -> float:
        if self.time_unconstrained <= 0:
            return float("nan")
        return self.time_constrained / self.time_unconstrained - 1.0


@dataclass
class StructureValidity:
    structure: Structure
    n_pairs: int
    samples: int
    unconstrained_invalid: int
    constrained_invalid: int


@dataclass
class ValiditySweep:
    rows: list
    per_structure: list

    def to_tsv(self, timing: bool = True) -> str:
        out = io.StringIO()
        w = csv.writer(out, delimiter="\t", lineterminator="\n")
        head = ["bucket", "len_min", "len_max", "n_structures", "unconstrained_invalid",
                "constrained_invalid"]
        if timing:
            head += ["time_unconstrained", "time_constrained", "overhead"]
        w.writerow(head)
        for r in self.rows:
            vals = [r.bucket, r.len_min, r.len_max, r.n_structures, r.unconstrained_invalid,
                    r.constrained_invalid]
            if timing:
                vals += [r.time_unconstrained, r.time_constrained, r.overhead]
            w.writerow([_fmt(v) for v in vals])
        return out.getvalue()


def length_buckets(lengths, n_buckets: int = 4) -> list[int]:
    """Bucket index per item: equal-count groups in order of (length, input index)."""
    order = sorted(range(len(lengths)), key=lambda i: (lengths[i], i))
    out = [0] * len(lengths)
    for rank, i in enumerate(order):
        out[i] = min(rank * n_buckets // max(len(lengths), 1), n_buckets - 1)
    return out


def validity_sweep(policy, structures, samples_per_structure: int, seed: int = 0,
                   n_buckets: int = 4) -> ValiditySweep:
    """Invalidity rate and decode time of unconstrained vs constrained sampling per length bucket."""
    if samples_per_structure < 1:
        raise ValueError("samples_per_structure must be at least 1")
    items = [as_structure(y) for y in structures]
    per = []
    times = []
    for y in items:
        free = sample(policy, DecodeRequest(y, samples_per_structure, 1.0, seed, False))
        masked = sample(policy, DecodeRequest(y, samples_per_structure, 1.0, seed, True))
        per.append(StructureValidity(y, y.n_pairs, samples_per_structure,
                                     free.validity.count(False), masked.validity.count(False)))
        times.append((free.seconds, masked.seconds))
    buckets = length_buckets([len(y) for y in items], n_buckets)
    rows = []
    for b in range(n_buckets):
        idx = [i for i, v in enumerate(buckets) if v == b]
        if not idx:
            continue
        total = len(idx) * samples_per_structure
        rows.append(SweepRow(
            bucket=b,
            len_min=min(len(items[i]) for i in idx),
            len_max=max(len(items[i]) for i in idx),
            n_structures=len(idx),
            unconstrained_invalid=sum(per[i].unconstrained_invalid for i in idx) / total,
            constrained_invalid=sum(per[i].constrained_invalid for i in idx) / total,
            time_unconstrained=sum(times[i][0] for i in idx) / total,
            time_constrained=sum(times[i][1] for i in idx) / total,
        ))
    return ValiditySweep(rows, per)


# -- timing ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingRecord:
    phase: str
    length: int
    wall_time: float


def loglog_slope(lengths, times) -> float:
    """Least-squares slope of log(time) against log(length)."""
    x, t = np.log(np.asarray(lengths, float)), np.log(np.asarray(times, float))
    return float(np.polyfit(x, t, 1)[0])


def timing_report(records) -> tuple[str, dict]:
    """CSV ``phase,length,wall_time`` plus a fitted log-log slope per phase.

    Phases with fewer than two distinct lengths get no slope.
    """
    records = list(records)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["phase", "length", "wall_time"])
    for r in records:
        w.writerow([r.phase, r.length, repr(r.wall_time)])
    slopes = {}
    for phase in sorted({r.phase for r in records}):
        sel = [r for r in records if r.phase == phase and r.wall_time > 0]
        if len({r.length for r in sel}) >= 2:
            slopes[phase] = loglog_slope([r.length for r in sel], [r.wall_time for r in sel])
    return out.getvalue(), slopes


def time_folding(lengths, params: EnergyParams | None = None, seed: int = 0,
                 repeats: int = 3) -> list[TimingRecord]:
    """Best-of-``repeats`` wall time of a full fold (MFE, partition function, pair probabilities)."""
    params = params or EnergyParams()
    rng = np.random.default_rng(seed)
    fold("GGGAAACCC", params)  # compile outside the timed region
    out = []
    for n in lengths:
        x = "".join(rng.choice(list("ACGU"), size=n))
        best = float("inf")
        for _ in range(repeats):
            start = time.perf_counter()
            fold(x, params)
            best = min(best, time.perf_counter() - start)
        out.append(TimingRecord("fold", int(n), best))
    return out


def time_decoding(policy, structures, n_samples: int = 16, seed: int = 0) -> list[TimingRecord]:
    out = []
    for y in structures:
        y = as_structure(y)
        for mode, constrained in (("decode_constrained", True), ("decode_unconstrained", False)):
            b = sample(policy, DecodeRequest(y, n_samples, 1.0, seed, constrained))
            out.append(TimingRecord(mode, len(y), b.seconds))
    return out


def rows_as_dicts(report: BenchReport) -> list[dict]:
    return [asdict(r) for r in report.rows]
