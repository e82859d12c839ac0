"""Exhaustive-enumeration oracle for short sequences.

Nothing here shares code with the dynamic programs in ``folding``: structures
are listed explicitly, energies come from :func:`rnaforge.thermo.energy`, and
every ensemble quantity is a plain sum over the list.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import TooLong
from .structure import VALID_PAIRS, Structure, d_struct
from .thermo import EnergyParams, energy

MAX_ENUMERATION_LENGTH = 18


@lru_cache(maxsize=None)
def _shapes(n: int, h_min: int) -> tuple[str, ...]:
    if n <= 0:
        return ("",)
    out = [("." + rest) for rest in _shapes(n - 1, h_min)]
    for k in range(h_min + 1, n):
        for inner in _shapes(k - 1, h_min):
            for rest in _shapes(n - k - 1, h_min):
                out.append("(" + inner + ")" + rest)
    return tuple(out)


def enumerate_structures(n: int, h_min: int = 3) -> list[Structure]:
    """Every dot-bracket string of length ``n`` obeying the hairpin rule.

    Ordered lexicographically with ``'.' < '(' < ')'``.
    """
    if n > MAX_ENUMERATION_LENGTH:
        raise TooLong(f"enumeration capped at n={MAX_ENUMERATION_LENGTH}")
    key = str.maketrans(".()", "012")
    texts = sorted(_shapes(n, h_min), key=lambda s: s.translate(key))
    return [Structure(t, h_min) for t in texts]


def count_structures(n: int, h_min: int = 3) -> int:
    """Number of shapes from the recurrence S(n) = S(n-1) + sum_k S(k-1) S(n-k-1)."""
    s = [1] * (n + 1)
    for m in range(1, n + 1):
        total = s[m - 1]
        for k in range(h_min + 1, m):
            total += s[k - 1] * s[m - k - 1]
        s[m] = total
    return s[n]


def pairable(x: str, y: Structure) -> bool:
    return all(x[i] + x[j] in VALID_PAIRS for i, j in y.pairs)


@dataclass
class BruteForceFold:
    structures: list
    energies: list
    weights: np.ndarray
    q: float
    mfe_value: int
    mfe_count: int
    pair_prob: np.ndarray

    def prob(self, y: Structure) -> float:
        for s, w in zip(self.structures, self.weights):
            if s.text == y.text:
                return w / self.q
        return 0.0

    def ned(self, y: Structure) -> float:
        total = sum(w * d_struct(y, s) for s, w in zip(self.structures, self.weights))
        return total / self.q / len(y)


def brute_force_fold(x: str, p: EnergyParams) -> BruteForceFold:
    n = len(x)
    structs = [s for s in enumerate_structures(n, p.h_min) if pairable(x, s)]
    energies = [energy(x, s, p) for s in structs]
    weights = np.array([math.exp(-e / p.rt_deci) for e in energies])
    q = float(weights.sum())
    lowest = min(energies)
    P = np.zeros((n, n))
    for s, w in zip(structs, weights):
        for i, j in s.pairs:
            P[i, j] += w
            P[j, i] += w
    return BruteForceFold(
        structures=structs,
        energies=energies,
        weights=weights,
        q=q,
        mfe_value=lowest,
        mfe_count=sum(1 for e in energies if e == lowest),
        pair_prob=P / q,
    )
