"""Simplified nearest-neighbour energy model (pair + stack terms).

Energies are integers in deci-kcal/mol so that ties between structures are
exact. Floats only appear once energies are turned into Boltzmann factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import InvalidDesign, MissingPairType, ParseError, UnknownKey
from .structure import DEFAULT_HMIN, VALID_PAIRS, Structure

PAIR_TYPES = ("CG", "GC", "AU", "UA", "GU", "UG")
DEFAULT_PAIR_ENERGY = MappingProxyType(
    {"CG": -30, "GC": -30, "AU": -20, "UA": -20, "GU": -10, "UG": -10}
)
DEFAULT_STACK_ENERGY = -10
DEFAULT_RT = 0.61633  # kcal/mol at 310.15 K


@dataclass(frozen=True)
class EnergyParams:
    e_pair: Mapping[str, int] = field(default_factory=lambda: dict(DEFAULT_PAIR_ENERGY))
    e_stack: int = DEFAULT_STACK_ENERGY
    h_min: int = DEFAULT_HMIN
    rt: float = DEFAULT_RT

    def __post_init__(self):
        if set(self.e_pair) != set(PAIR_TYPES):
            missing = sorted(set(PAIR_TYPES) - set(self.e_pair))
            extra = sorted(set(self.e_pair) - set(PAIR_TYPES))
            raise MissingPairType(f"pair table mismatch: missing {missing}, unknown {extra}")
        if not self.rt > 0:
            raise ValueError("rt must be positive")
        if self.h_min < 0:
            raise ValueError("h_min must be non-negative")
        object.__setattr__(
            self, "e_pair", MappingProxyType({k: int(self.e_pair[k]) for k in PAIR_TYPES})
        )
        object.__setattr__(self, "e_stack", int(self.e_stack))

    def __hash__(self):
        return hash((tuple(self.e_pair.items()), self.e_stack, self.h_min, self.rt))

    def __eq__(self, other):
        if not isinstance(other, EnergyParams):
            return NotImplemented
        return (dict(self.e_pair), self.e_stack, self.h_min, self.rt) == (
            dict(other.e_pair), other.e_stack, other.h_min, other.rt)

    @property
    def rt_deci(self) -> float:
        return self.rt * 10.0

    def scaled(self, factor: int) -> "EnergyParams":
        """All energies and RT multiplied by ``factor``."""
        return replace(
            self,
            e_pair={k: v * factor for k, v in self.e_pair.items()},
            e_stack=self.e_stack * factor,
            rt=self.rt * factor,
        )

    def to_text(self) -> str:
        lines = [f"pair {k} {self.e_pair[k]}" for k in PAIR_TYPES]
        lines += [f"stack {self.e_stack}", f"hmin {self.h_min}", f"rt {self.rt!r}"]
        return "\n".join(lines) + "\n"


def zero_params(h_min: int = DEFAULT_HMIN, rt: float = DEFAULT_RT) -> EnergyParams:
    """Every structure has energy 0: the uniform-ensemble limit."""
    return EnergyParams({k: 0 for k in PAIR_TYPES}, 0, h_min, rt)


def parse_params(text: str, source: str = "<string>") -> EnergyParams:
    pairs = dict(DEFAULT_PAIR_ENERGY)
    stack, h_min, rt = DEFAULT_STACK_ENERGY, DEFAULT_HMIN, DEFAULT_RT
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key == "pair":
                if len(args) != 2:
                    raise ParseError(f"{source}:{lineno}: expected 'pair <XY> <int>'")
                kind = args[0].upper()
                if kind not in VALID_PAIRS:
                    raise MissingPairType(f"{source}:{lineno}: unknown pair type {args[0]!r}")
                pairs[kind] = int(args[1])
            elif key in ("stack", "hmin", "rt"):
                if len(args) != 1:
                    raise ParseError(f"{source}:{lineno}: expected '{key} <value>'")
                if key == "stack":
                    stack = int(args[0])
                elif key == "hmin":
                    h_min = int(args[0])
                else:
                    rt = float(args[0])
            else:
                raise UnknownKey(f"{source}:{lineno}: unknown directive {key!r}")
        except ValueError as exc:
            if isinstance(exc, (ParseError, UnknownKey, MissingPairType)):
                raise
            raise ParseError(f"{source}:{lineno}: {exc}") from None
    try:
        return EnergyParams(pairs, stack, h_min, rt)
    except ValueError as exc:
        if isinstance(exc, MissingPairType):
            raise
        raise ParseError(f"{source}: {exc}") from None


def load_params(path) -> EnergyParams:
    path = Path(path)
    return parse_params(path.read_text(encoding="utf-8"), source=str(path))


def energy(x: str, y: Structure, p: EnergyParams) -> int:
    """Free energy of ``x`` folded into ``y`` in deci-kcal/mol."""
    if len(x) != len(y):
        raise InvalidDesign(f"sequence length {len(x)} != structure length {len(y)}")
    total = 0
    partner = y.partner
    for i, j in y.pairs:
        kind = x[i] + x[j]
        if kind not in VALID_PAIRS:
            raise InvalidDesign(f"{kind} at ({i},{j}) is not a valid pair")
        total += p.e_pair[kind]
        if partner[i + 1] == j - 1 and i + 1 < j - 1:
            total += p.e_stack
    return total
