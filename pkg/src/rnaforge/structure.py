"""Dot-bracket secondary structures, design-space predicates and distances."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from numba import njit

from .errors import (
    EmptyTestSet,
    HairpinTooSmall,
    IllegalCharacter,
    InputTooLong,
    InvalidSequence,
    LengthMismatch,
    UnbalancedBrackets,
)

NUCLEOTIDES = "ACGU"
VALID_PAIRS = frozenset({"CG", "GC", "AU", "UA", "GU", "UG"})
DEFAULT_HMIN = 3
MAX_EDIT_LENGTH = 2000


@dataclass(frozen=True)
class Structure:
    """A validated pseudoknot-free secondary structure.

    Construct through :func:`parse_structure`; ``pairs``, ``unpaired`` and
    ``partner`` are derived from ``text`` in one stack pass.
    """

    text: str
    h_min: int = DEFAULT_HMIN
    pairs: tuple[tuple[int, int], ...] = field(init=False, repr=False, compare=False)
    unpaired: tuple[int, ...] = field(init=False, repr=False, compare=False)
    partner: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pairs, partner = _scan(self.text, self.h_min)
        object.__setattr__(self, "pairs", tuple(sorted(pairs)))
        object.__setattr__(self, "partner", tuple(partner))
        object.__setattr__(
            self, "unpaired", tuple(i for i, p in enumerate(partner) if p < 0)
        )

    def __len__(self):
        return len(self.text)

    def __str__(self):
        return self.text

    @property
    def length(self) -> int:
        return len(self.text)

    @property
    def pair_set(self) -> frozenset:
        return frozenset(self.pairs)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def _scan(text: str, h_min: int):
    if h_min < 0:
        raise ValueError("h_min must be non-negative")
    stack = []
    partner = [-1] * len(text)
    pairs = []
    for i, ch in enumerate(text):
        if ch == "(":
            stack.append(i)
        elif ch == ")":
            if not stack:
                raise UnbalancedBrackets(f"unmatched ')' at position {i}")
            j = stack.pop()
            partner[i], partner[j] = j, i
            pairs.append((j, i))
        elif ch != ".":
            raise IllegalCharacter(f"illegal character {ch!r} at position {i}")
    if stack:
        raise UnbalancedBrackets(f"unmatched '(' at position {stack[-1]}")
    # balance errors take precedence over the hairpin rule
    for j, i in pairs:
        if i - j <= h_min:
            raise HairpinTooSmall(
                f"pair ({j},{i}) encloses {i - j - 1} nt; at least {h_min} required")
    return pairs, partner


def parse_structure(text: str, h_min: int = DEFAULT_HMIN) -> Structure:
    text = text.strip()
    if not text:
        raise IllegalCharacter("empty structure")
    return Structure(text, h_min)


def as_structure(y, h_min: int = DEFAULT_HMIN) -> Structure:
    if isinstance(y, Structure):
        return y
    return parse_structure(str(y), h_min)


def check_sequence(x: str) -> str:
    """Return ``x`` upper-cased with T mapped to U; reject anything else."""
    x = x.strip().upper().replace("T", "U")
    if not x:
        raise InvalidSequence("empty sequence")
    bad = set(x) - set(NUCLEOTIDES)
    if bad:
        raise InvalidSequence(f"non-nucleotide characters {sorted(bad)}")
    return x


def is_valid_design(x: str, y: Structure) -> bool:
    if len(x) != len(y):
        return False
    return all(x[i] + x[j] in VALID_PAIRS for i, j in y.pairs)


def design_space_size(y: Structure) -> int:
    return 6 ** len(y.pairs) * 4 ** len(y.unpaired)


def d_struct(y: Structure, y2: Structure) -> int:
    if len(y) != len(y2):
        raise LengthMismatch(f"lengths {len(y)} and {len(y2)} differ")
    shared_pairs = len(y.pair_set & y2.pair_set)
    shared_unpaired = len(set(y.unpaired) & set(y2.unpaired))
    return len(y) - 2 * shared_pairs - shared_unpaired


@njit(cache=True)
def _levenshtein(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            best = sub
            if ins < best:
                best = ins
            if dele < best:
                best = dele
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


def _codes(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8)


def d_edit(a, b) -> int:
    """Character-level Levenshtein distance (unit costs)."""
    a, b = str(a), str(b)
    if len(a) > MAX_EDIT_LENGTH or len(b) > MAX_EDIT_LENGTH:
        raise InputTooLong(f"d_edit inputs are capped at {MAX_EDIT_LENGTH} characters")
    if not a or not b:
        return len(a) + len(b)
    return int(_levenshtein(_codes(a), _codes(b)))


def d_min_norm(y, testset: Iterable) -> float:
    y = str(y)
    best = None
    for other in testset:
        other = str(other)
        d = d_edit(y, other) / min(len(y), len(other))
        if best is None or d < best:
            best = d
            if best == 0.0:
                break
    if best is None:
        raise EmptyTestSet("d_min_norm needs a nonempty test set")
    return best


class StructureSet:
    """Ordered collection of structures with a free-text source label."""

    def __init__(self, items: Iterable = (), source_tag: str = "", dedup: bool = False,
                 h_min: int = DEFAULT_HMIN):
        structs = [as_structure(s, h_min) for s in items]
        if dedup:
            seen = set()
            unique = []
            for s in structs:
                if s.text not in seen:
                    seen.add(s.text)
                    unique.append(s)
            structs = unique
        self.items = tuple(structs)
        self.source_tag = source_tag

    def __len__(self):
        return len(self.items)

    def __iter__(self) -> Iterator[Structure]:
        return iter(self.items)

    def __getitem__(self, idx):
        return self.items[idx]

    def __repr__(self):
        return f"StructureSet({len(self.items)} items, source_tag={self.source_tag!r})"

    def texts(self) -> list[str]:
        return [s.text for s in self.items]

    def deduplicated(self) -> "StructureSet":
        return StructureSet(self.items, self.source_tag, dedup=True)


def read_structures(path, h_min: int = DEFAULT_HMIN, dedup: bool = False) -> StructureSet:
    """Read one dot-bracket string per line; blank and '#' lines are skipped."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    texts = [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    return StructureSet(texts, source_tag=str(path), dedup=dedup, h_min=h_min)


def write_structures(structures: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in structures:
            fh.write(f"{s}\n")
