"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from .errors import InvalidDesign, LengthMismatch, NotFittedError
from .structure import DEFAULT_HMIN, Structure, as_structure, check_sequence, is_valid_design


def check_structures(Y, h_min: int = DEFAULT_HMIN, allow_empty: bool = False) -> list[Structure]:
    """Parse a single structure or an iterable of them into a list of :class:`Structure`."""
    if isinstance(Y, (str, Structure)):
        Y = [Y]
    out = [as_structure(y, h_min) for y in Y]
    if not out and not allow_empty:
        raise ValueError("no structures given")
    return out


def check_sequences(X) -> list[str]:
    if isinstance(X, str):
        X = [X]
    return [check_sequence(x) for x in X]


def check_design_pairs(Y, X, h_min: int = DEFAULT_HMIN):
    """Aligned structures and sequences where every sequence is a valid design."""
    ys = check_structures(Y, h_min)
    xs = check_sequences(X)
    if len(ys) != len(xs):
        raise LengthMismatch(f"{len(ys)} structures but {len(xs)} sequences")
    for i, (y, x) in enumerate(zip(ys, xs)):
        if not is_valid_design(x, y):
            raise InvalidDesign(f"row {i}: {x} is not a valid design for {y.text}")
    return ys, xs


def check_positive_int(name: str, value) -> int:
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_is_fitted(estimator, attributes=("policy_",)) -> None:
    if isinstance(attributes, str):
        attributes = (attributes,)
    missing = [a for a in attributes if getattr(estimator, a, None) is None]
    if missing:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit before using it")
