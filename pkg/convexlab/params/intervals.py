"""Outward-rounded interval helpers on top of ``mpmath.iv``."""

import math
import numbers
from contextlib import contextmanager
from fractions import Fraction
from typing import Iterator, Literal, Optional, Tuple, Union

from mpmath import iv, libmp

Verdict = Literal["green", "red", "undecided"]
Relation = Literal["<", "<=", "=="]

Number = Union[int, float, Fraction, str]


@contextmanager
def interval_precision(bits: int) -> Iterator[object]:
    """Run a block with ``iv.prec`` set to ``bits``; the old value is restored."""
    old = iv.prec
    try:
        iv.prec = int(bits)
        yield iv
    finally:
        iv.prec = old


def exact(value: Number) -> Fraction:
    """Rational reading of a parameter.

    Floats are read through their shortest repr, so 0.5001 is 5001/10000. The
    certificate therefore certifies the decimal a user typed.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, numbers.Integral):
        return Fraction(int(value))
    if isinstance(value, float):
        # numpy scalars subclass float but carry their type in repr
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"cannot enclose non-finite value {value}")
        return Fraction(repr(value))
    return Fraction(value)


def enclose(value: Number):
    """Tightest interval at the current precision containing ``value``."""
    if hasattr(value, "_mpi_"):
        return value
    q = exact(value)
    if q.denominator == 1:
        return iv.mpf(q.numerator)
    return iv.mpf(q.numerator) / iv.mpf(q.denominator)


def ipow(base, exponent):
    """base**exponent for a positive interval base, through exp(exponent log base)."""
    return iv.exp(exponent * iv.log(base))


def imax(*values):
    """Interval enclosure of the maximum of several intervals."""
    lo, hi = values[0].a, values[0].b
    for v in values[1:]:
        # endpoints are degenerate, so these comparisons are always decided
        if v.a > lo:
            lo = v.a
        if v.b > hi:
            hi = v.b
    return iv.mpf([lo, hi])


def float_bounds(value) -> Tuple[float, float]:
    """Endpoints rounded outward to doubles (may be +-inf on overflow)."""
    a, b = value._mpi_
    return (
        libmp.to_float(a, rnd=libmp.round_floor),
        libmp.to_float(b, rnd=libmp.round_ceiling),
    )


def upper_float(value) -> float:
    return float_bounds(value)[1]


def lower_float(value) -> float:
    return float_bounds(value)[0]


def decide(lhs, rhs, relation: Relation) -> Verdict:
    """Three-valued verdict for ``lhs relation rhs`` on enclosures."""
    if relation == "==":
        outcome: Optional[bool] = lhs == rhs
    elif relation == "<":
        outcome = lhs < rhs
    else:
        outcome = lhs <= rhs
    if outcome is True:
        return "green"
    if outcome is False:
        return "red"
    return "undecided"
