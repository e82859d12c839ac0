"""Corpus construction: random-sequence structures, teacher designs, filtering, RL selection."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoding import DecodeRequest, sample
from .errors import EvaluationFailed, InvalidDesign, StructureError
from .folding import _inside, mfe
from .policy import _PAIR_CHOICES, _PAIR_WEIGHTS, Policy, target_init_sample
from .structure import NUCLEOTIDES, Structure, StructureSet, as_structure, d_min_norm, \
    is_valid_design
from .thermo import EnergyParams, energy

AON_MIN = 0.1
NSD_MIN = 0.5


@dataclass(frozen=True)
class PairRecord:
    target: Structure
    design: str
    teacher_score: float


@dataclass(frozen=True)
class RLStats:
    target: Structure
    aon: float
    sd: float
    nsd: float
    kept: bool


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) < 2:
        return [fn(v) for v in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _child_seed(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *key])


def gen_random_sequences(count: int, len_min: int, len_max: int, seed: int) -> list[str]:
    """``count`` i.i.d. uniform sequences with lengths uniform on [len_min, len_max]."""
    if not 1 <= len_min <= len_max:
        raise ValueError("need 1 <= len_min <= len_max")
    rng = np.random.default_rng(seed)
    lengths = rng.integers(len_min, len_max + 1, size=count)
    alphabet = np.array(list(NUCLEOTIDES))
    return ["".join(alphabet[rng.integers(0, 4, size=n)]) for n in lengths]


def build_structure_corpus(seqs, params: EnergyParams, workers: int = 1,
                           with_witnesses: bool = False):
    """Fold each sequence to its MFE structure, keeping the first witness per structure.

    Returns a deduplicated :class:`StructureSet`, or ``(set, witnesses)``
    with ``with_witnesses=True``.
    """
    folded = _map(lambda x: mfe(x, params)[1], list(seqs), workers)
    seen = {}
    for x, y in zip(seqs, folded):
        seen.setdefault(y.text, (y, x))
    structs = StructureSet([v[0] for v in seen.values()], source_tag="random-mfe")
    if with_witnesses:
        return structs, [v[1] for v in seen.values()]
    return structs


def _log_prob(x: str, y: Structure, params: EnergyParams) -> float:
    return -energy(x, y, params) / params.rt_deci - _inside(x, params)[4]


def teacher_design(y: Structure, budget: int = 500, seed=0,
                   params: EnergyParams | None = None) -> str:
    """Hill-climbing designer starting from a target-initialization sample.

    Each iteration mutates one unpaired site or one pair (jointly, to a
    valid pair) and keeps the proposal only if p(y|x) strictly increases.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    params = params or EnergyParams()
    y = as_structure(y, params.h_min)
    rng = np.random.default_rng(seed)
    x = list(target_init_sample(y, rng))
    best = _log_prob("".join(x), y, params)
    sites = [(i,) for i in y.unpaired] + list(y.pairs)
    if not sites:
        return "".join(x)
    for _ in range(budget):
        site = sites[rng.integers(len(sites))]
        cand = x.copy()
        if len(site) == 1:
            cand[site[0]] = NUCLEOTIDES[rng.integers(4)]
        else:
            cand[site[0]], cand[site[1]] = _PAIR_CHOICES[rng.choice(6, p=_PAIR_WEIGHTS)]
        if cand == x:
            continue
        try:
            lp = _log_prob("".join(cand), y, params)
        except EvaluationFailed:
            continue
        if lp > best:
            x, best = cand, lp
    return "".join(x)


def build_sl_dataset(corpus, designs_per_structure: int = 10, budget: int = 500, seed: int = 0,
                     params: EnergyParams | None = None, workers: int = 1) -> list[PairRecord]:
    """``designs_per_structure`` teacher runs per structure, ordered by structure index."""
    if designs_per_structure < 1:
        raise ValueError("designs_per_structure must be at least 1")
    params = params or EnergyParams()
    jobs = [(i, k, y) for i, y in enumerate(corpus) for k in range(designs_per_structure)]

    def run(job):
        i, k, y = job
        x = teacher_design(y, budget, _child_seed(seed, i, k), params)
        p = math.exp(min(_log_prob(x, y, params), 0.0))
        return PairRecord(y, x, p)

    return _map(run, jobs, workers)


def filter_by_distance(candidates, testset, threshold: float = 0.2) -> StructureSet:
    """Keep candidates whose normalized edit distance to every test structure exceeds ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    tests = list(testset)
    kept = [y for y in candidates if d_min_norm(y, tests) > threshold]
    tag = getattr(candidates, "source_tag", "")
    return StructureSet(kept, source_tag=f"{tag}|d>{threshold}" if tag else f"d>{threshold}")


def rl_stats(target: Structure, probs) -> RLStats:
    """AoN, population SD and NSD of the sampled probabilities, plus the selection verdict."""
    p = np.asarray(probs, dtype=float)
    aon = float(p.mean())
    sd = float(p.std())
    nsd = sd / aon if aon > 0 else 0.0
    return RLStats(target, aon, sd, nsd, bool(aon >= AON_MIN and nsd > NSD_MIN))


def select_rl_subset(candidates, policy: Policy, k_samples: int = 16,
                     params: EnergyParams | None = None, seed: int = 0,
                     temperature: float = 1.0, workers: int = 1):
    """Score each candidate with ``k_samples`` constrained policy samples.

    Returns ``(stats, retained)``; evaluation failures count as probability 0.
    """
    if k_samples < 2:
        raise ValueError("k_samples must be at least 2")
    params = params or EnergyParams()
    stats = []
    for y in candidates:
        seqs = sample(policy, DecodeRequest(y, k_samples, temperature, seed)).sequences

        def prob(x, y=y):
            try:
                return math.exp(min(_log_prob(x, y, params), 0.0))
            except EvaluationFailed:
                return 0.0

        stats.append(rl_stats(y, _map(prob, seqs, workers)))
    kept = StructureSet([s.target for s in stats if s.kept], source_tag="rl-selected")
    return stats, kept


# -- file formats ---------------------------------------------------------------------


def write_sl_corpus(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for r in records:
            w.writerow([r.target.text, r.design])


def read_sl_corpus(path, params: EnergyParams | None = None, score: bool = False) -> list[PairRecord]:
    """Read ``structure<TAB>sequence`` lines; ``score=True`` recomputes teacher scores."""
    params = params or EnergyParams()
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) < 2:
            raise StructureError(f"{path}:{lineno}: expected structure<TAB>sequence")
        y = as_structure(cols[0].strip(), params.h_min)
        x = cols[1].strip().upper().replace("T", "U")
        if not is_valid_design(x, y):
            raise InvalidDesign(f"{path}:{lineno}: {x} is not a valid design for {y.text}")
        p = math.exp(min(_log_prob(x, y, params), 0.0)) if score else float("nan")
        out.append(PairRecord(y, x, p))
    return out


def write_rl_stats(stats, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["structure", "aon", "sd", "nsd", "kept"])
        for s in stats:
            w.writerow([s.target.text, repr(s.aon), repr(s.sd), repr(s.nsd), int(s.kept)])


def read_rl_stats(path) -> list[RLStats]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out.append(RLStats(as_structure(row["structure"]), float(row["aon"]),
                               float(row["sd"]), float(row["nsd"]), row["kept"] == "1"))
    return out
