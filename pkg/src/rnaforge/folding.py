"""Exact thermodynamic evaluation under the pair+stack energy model.

Everything is computed by interval dynamic programming (see ``_kernels``):
minimum free energy with a deterministic traceback, the number of co-optimal
structures, the partition function, base-pair probabilities (inside-outside)
and the normalized ensemble defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .errors import EvaluationFailed, InvalidDesign
from .structure import NUCLEOTIDES, Structure, check_sequence, is_valid_design
from .thermo import EnergyParams, energy

_NUC_INDEX = {c: i for i, c in enumerate(NUCLEOTIDES)}
_INF = int(_kernels.INF)
# above this the int64 co-optimal counts may have wrapped
_COUNT_EXACT_LIMIT = 2.0**62
# unscaled inside values beyond this trigger a rescaled recomputation
_SCALE_TRIGGER = 1e250


@dataclass(frozen=True)
class _Tables:
    """Per-parameter-set lookup tables shared by every kernel call."""

    e_pair: np.ndarray
    can_pair: np.ndarray
    w_pair: np.ndarray
    e_stack: int
    w_stack: float
    h_min: int
    rt_deci: float


@lru_cache(maxsize=32)
def _tables(p: EnergyParams) -> _Tables:
    e_pair = np.zeros((4, 4), dtype=np.int64)
    can_pair = np.zeros((4, 4), dtype=np.bool_)
    w_pair = np.zeros((4, 4))
    for kind, e in p.e_pair.items():
        a, b = _NUC_INDEX[kind[0]], _NUC_INDEX[kind[1]]
        e_pair[a, b] = e
        can_pair[a, b] = True
        w_pair[a, b] = math.exp(-e / p.rt_deci)
    return _Tables(e_pair, can_pair, w_pair, p.e_stack, math.exp(-p.e_stack / p.rt_deci),
                   p.h_min, p.rt_deci)


def encode(x: str) -> np.ndarray:
    return np.array([_NUC_INDEX[c] for c in x], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FoldSummary:
    """Thermodynamic summary of one sequence.

    ``log_q`` is the natural log of the partition function; ``q`` may be
    ``inf`` for long, strongly pairing sequences even when ``log_q`` is fine.
    """

    sequence: str
    mfe_value: int
    mfe_structure: Structure
    mfe_count: int
    log_q: float
    pair_prob: np.ndarray | None = None

    @property
    def q(self) -> float:
        return math.exp(self.log_q) if self.log_q < 709 else math.inf

    @property
    def unpaired_prob(self) -> np.ndarray | None:
        if self.pair_prob is None:
            return None
        return 1.0 - self.pair_prob.sum(axis=1)


@dataclass(frozen=True, eq=False)
class DesignEvaluation:
    """Per-design metrics: the fold summary plus target-specific values."""

    summary: FoldSummary
    target: Structure
    energy: int
    prob: float
    ned: float | None
    is_mfe: bool
    is_umfe: bool

    @property
    def sequence(self) -> str:
        return self.summary.sequence


# -- minimum free energy --------------------------------------------------------


def _mfe_raw(x: str, p: EnergyParams):
    t = _tables(p)
    return _kernels.mfe_tables(encode(x), t.e_pair, t.can_pair, t.e_stack, t.h_min)


def _traceback(x: str, E, Ex, Eb, p: EnergyParams) -> Structure:
    """Deterministic argmin: at each left end prefer pairing, smallest partner first."""
    n = len(x)
    h = p.h_min
    chars = ["."] * n
    todo = [(0, n, None)]
    while todo:
        i, j, bonus = todo.pop()
        if i >= j:
            continue
        if bonus is None:
            target = E[i, j]
        else:
            stacked = Eb[i, j] + bonus if Eb[i, j] < _INF else _INF
            target = min(Ex[i, j], stacked)
        chosen = None
        for k in range(i + h + 1, j):
            if Eb[i, k + 1] >= _INF:
                continue
            if k < j - 1:
                v = Eb[i, k + 1] + E[k + 1, j]
            else:
                v = Eb[i, j] + (bonus or 0)
            if v == target:
                chosen = k
                break
        if chosen is None:
            if E[i + 1, j] != target:
                raise EvaluationFailed(f"traceback inconsistency at [{i},{j})")
            todo.append((i + 1, j, None))
            continue
        chars[i], chars[chosen] = "(", ")"
        todo.append((chosen + 1, j, None))
        todo.append((i + 1, chosen, p.e_stack))
    return Structure("".join(chars), p.h_min)


def _exact_count(x: str, E, Ex, Eb, p: EnergyParams) -> int:
    """Co-optimal count with Python integers; used when int64 could overflow."""
    n = len(x)
    h = p.h_min
    C = {}
    Cx = {}
    Cb = {}
    for i in range(n + 1):
        C[i, i] = Cx[i, i] = 1
    for length in range(1, n + 1):
        for i in range(n - length + 1):
            j = i + length
            cb = 0
            if Eb[i, j] < _INF:
                a = Ex[i + 1, j - 1]
                b = Eb[i + 1, j - 1] + p.e_stack if Eb[i + 1, j - 1] < _INF else _INF
                m = min(a, b)
                if a == m:
                    cb += Cx[i + 1, j - 1]
                if b == m:
                    cb += Cb.get((i + 1, j - 1), 0)
            Cb[i, j] = cb
            cx = C[i + 1, j] if E[i + 1, j] == Ex[i, j] else 0
            for k in range(i + h + 1, j - 1):
                if Eb[i, k + 1] < _INF and Eb[i, k + 1] + E[k + 1, j] == Ex[i, j]:
                    cx += Cb[i, k + 1] * C[k + 1, j]
            Cx[i, j] = cx
            c = 0
            if Ex[i, j] == E[i, j]:
                c += cx
            if Eb[i, j] == E[i, j]:
                c += cb
            C[i, j] = c
    return C[0, n]


def _mfe_full(x: str, p: EnergyParams):
    E, Ex, Eb, C, F = _mfe_raw(x, p)
    n = len(x)
    value = int(E[0, n])
    if F[0, n] < _COUNT_EXACT_LIMIT:
        count = int(C[0, n])
    else:
        count = _exact_count(x, E, Ex, Eb, p)
    return value, count, (E, Ex, Eb)


def mfe(x: str, p: EnergyParams) -> tuple[int, Structure]:
    x = check_sequence(x)
    E, Ex, Eb, _, _ = _mfe_raw(x, p)
    return int(E[0, len(x)]), _traceback(x, E, Ex, Eb, p)


def count_mfe(x: str, p: EnergyParams) -> int:
    x = check_sequence(x)
    return _mfe_full(x, p)[1]


# -- partition function ----------------------------------------------------------


def _inside(x: str, p: EnergyParams, mfe_value: int | None = None):
    """Inside tables and the scale used; returns (Z, Zx, Zb, lam, log_q)."""
    t = _tables(p)
    seq = encode(x)
    n = len(x)
    lam = 1.0
    if mfe_value is not None:
        lam = math.exp(mfe_value / (t.rt_deci * n))
    Z, Zx, Zb = _kernels.inside_tables(seq, t.w_pair, t.can_pair, t.w_stack, t.h_min, lam)
    total = Z[0, n]
    if mfe_value is None and not (np.isfinite(total) and total < _SCALE_TRIGGER):
        value = int(_mfe_raw(x, p)[0][0, n])
        return _inside(x, p, value)
    if not (np.isfinite(total) and total > 0):
        raise EvaluationFailed(f"partition function not finite for length-{n} sequence")
    return Z, Zx, Zb, lam, math.log(total) - n * math.log(lam)


def log_partition_function(x: str, p: EnergyParams) -> float:
    x = check_sequence(x)
    return _inside(x, p)[4]


def partition_function(x: str, p: EnergyParams) -> float:
    """Q(x); may be ``inf`` where only :func:`log_partition_function` is finite."""
    log_q = log_partition_function(x, p)
    return math.exp(log_q) if log_q < 709 else math.inf


def _require_design(x: str, y: Structure):
    if not is_valid_design(x, y):
        raise InvalidDesign(f"{x} is not a valid design for {y.text}")


def boltzmann_prob(x: str, y: Structure, p: EnergyParams) -> float:
    x = check_sequence(x)
    _require_design(x, y)
    log_q = _inside(x, p)[4]
    return _prob(energy(x, y, p), log_q, p)


def _prob(e: int, log_q: float, p: EnergyParams) -> float:
    v = math.exp(-e / p.rt_deci - log_q)
    if not math.isfinite(v):
        raise EvaluationFailed("non-finite Boltzmann probability")
    return min(v, 1.0)


def _pair_probs(x: str, p: EnergyParams, inside=None) -> np.ndarray:
    t = _tables(p)
    seq = encode(x)
    Z, Zx, Zb, lam, _ = inside if inside is not None else _inside(x, p)
    n = len(x)
    _, _, Ob = _kernels.outside_tables(seq, t.w_pair, t.can_pair, t.w_stack, t.h_min, lam,
                                       Z, Zx, Zb)
    P = _kernels.pair_matrix(Zb, Ob, Z[0, n])
    if not np.all(np.isfinite(P)):
        raise EvaluationFailed("non-finite pair probabilities")
    return P


def pair_probabilities(x: str, p: EnergyParams) -> np.ndarray:
    """Symmetric matrix of base-pair probabilities ``P[i, j]``."""
    x = check_sequence(x)
    return _pair_probs(x, p)


def forced_pair_probability(x: str, i: int, j: int, p: EnergyParams) -> float:
    """P(i pairs with j) from a constrained partition function; independent of the outside pass."""
    x = check_sequence(x)
    t = _tables(p)
    Z, _, _, lam, _ = _inside(x, p)
    forced = _kernels.forced_pair_total(encode(x), t.w_pair, t.can_pair, t.w_stack, t.h_min,
                                        lam, min(i, j), max(i, j))
    return forced / Z[0, len(x)]


def ned_from_pair_probs(P: np.ndarray, y: Structure) -> float:
    n = len(y)
    unpaired = 1.0 - P.sum(axis=1)
    correct = 2.0 * sum(P[i, j] for i, j in y.pairs) + float(sum(unpaired[i] for i in y.unpaired))
    return float(min(max(1.0 - correct / n, 0.0), 1.0))


def ned(x: str, y: Structure, p: EnergyParams) -> float:
    x = check_sequence(x)
    _require_design(x, y)
    return ned_from_pair_probs(_pair_probs(x, p), y)


def fold(x: str, p: EnergyParams, with_pair_probs: bool = True) -> FoldSummary:
    x = check_sequence(x)
    value, count, (E, Ex, Eb) = _mfe_full(x, p)
    structure = _traceback(x, E, Ex, Eb, p)
    inside = _inside(x, p, value)
    P = _pair_probs(x, p, inside) if with_pair_probs else None
    return FoldSummary(x, value, structure, count, inside[4], P)


def fold_summary(x: str, y: Structure, p: EnergyParams,
                 with_pair_probs: bool = True) -> DesignEvaluation:
    """All per-design metrics from one evaluation.

    With ``with_pair_probs=False`` the outside pass is skipped and ``ned`` is
    ``None``; that is all a reward computation needs.
    """
    x = check_sequence(x)
    _require_design(x, y)
    s = fold(x, p, with_pair_probs)
    e = energy(x, y, p)
    prob = _prob(e, s.log_q, p)
    is_mfe = e == s.mfe_value
    return DesignEvaluation(
        summary=s,
        target=y,
        energy=e,
        prob=prob,
        ned=ned_from_pair_probs(s.pair_prob, y) if with_pair_probs else None,
        is_mfe=is_mfe,
        is_umfe=is_mfe and s.mfe_count == 1,
    )
