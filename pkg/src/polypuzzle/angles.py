"""Exact rational angles mod 1 and their symbolic itineraries.

All combinatorial decisions in the library (ray periods, puzzle labels,
co-landing tests) are made on exact rationals; floats appear only when a ray
tracer needs a seed. Angles are `Fraction`-backed and hashable.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Optional, Sequence, Tuple, Union

from .errors import DAdicAngle, EmptyWord

AngleLike = Union["RationalAngle", Fraction, int, str, Tuple[int, int]]


@dataclass(frozen=True, order=True)
class RationalAngle:
    """A reduced rational p/q taken mod 1, so 0 <= p/q < 1."""

    numerator: int
    denominator: int

    def __init__(self, numerator, denominator: Optional[int] = None):
        if denominator is None:
            frac = Fraction(numerator)
        else:
            frac = Fraction(numerator, denominator)
        frac -= frac.__floor__()  # reduce mod 1, keeps exactness
        object.__setattr__(self, "numerator", frac.numerator)
        object.__setattr__(self, "denominator", frac.denominator)

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    def __float__(self) -> float:
        return self.numerator / self.denominator

    def __str__(self) -> str:
        return f"{self.numerator}/{self.denominator}"

    def __repr__(self) -> str:
        return f"RationalAngle({self.numerator}/{self.denominator})"

    def is_dadic(self, d: int) -> bool:
        """True when the base-d expansion terminates.

        That happens exactly when every prime factor of the denominator
        divides d.
        """
        q = self.denominator
        while q > 1:
            g = gcd(q, d)
            if g == 1:
                return False
            while q % g == 0:
                q //= g
        return True


def as_angle(value: AngleLike) -> RationalAngle:
    """Coerce strings like "1/3", ints, Fractions or pairs to RationalAngle."""
    if isinstance(value, RationalAngle):
        return value
    if isinstance(value, str):
        return RationalAngle(Fraction(value))
    if isinstance(value, tuple):
        return RationalAngle(value[0], value[1])
    return RationalAngle(Fraction(value))


def times_base(theta: AngleLike, base: int) -> RationalAngle:
    """Multiply the angle by an integer base, mod 1 (exact)."""
    if base < 2:
        raise ValueError("base must be >= 2")
    theta = as_angle(theta)
    return RationalAngle(theta.numerator * base, theta.denominator)


def orbit(theta: AngleLike, base: int, length: int) -> list[RationalAngle]:
    """First `length` angles of the forward orbit under multiplication."""
    theta = as_angle(theta)
    out = [theta]
    for _ in range(length - 1):
        out.append(times_base(out[-1], base))
    return out


def orbit_type(theta: AngleLike, base: int) -> Tuple[int, int]:
    """Minimal (preperiod l, period k) with base^(l+k) * theta == base^l * theta.

    Terminates because denominators never grow along the orbit. The walk runs
    on integer numerators mod the fixed denominator; equality of angles with
    the same denominator is equality of numerators, so this stays exact.
    """
    theta = as_angle(theta)
    q = theta.denominator
    seen: dict[int, int] = {}
    current = theta.numerator
    index = 0
    while current not in seen:
        seen[current] = index
        current = (current * base) % q
        index += 1
    l = seen[current]
    k = index - l
    return l, k


@dataclass(frozen=True)
class ItineraryWord:
    """A finite window of a symbol sequence over {0, ..., d-1}.

    `symbols` is the explicit window. For eventually periodic sequences the
    exact structure is carried in `preperiod` and `period`; both are None for
    plain finite words.
    """

    symbols: Tuple[int, ...]
    preperiod: Optional[Tuple[int, ...]] = None
    period: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.period is not None and len(self.period) == 0:
            raise ValueError("periodic part must be nonempty when set")

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def symbol_at(self, j: int) -> int:
        """Symbol at position j, using periodic structure beyond the window."""
        if j < len(self.symbols):
            return self.symbols[j]
        if self.period is None:
            raise IndexError(f"position {j} beyond finite word of length {len(self.symbols)}")
        pre = self.preperiod if self.preperiod is not None else ()
        if j < len(pre):
            return pre[j]
        return self.period[(j - len(pre)) % len(self.period)]


def shift(word: ItineraryWord) -> ItineraryWord:
    """Drop the first symbol, maintaining the periodic metadata.

    Shifting a purely periodic word rotates its period; shifting an
    eventually periodic word shortens the preperiod.
    """
    if len(word.symbols) == 0 and word.period is None:
        raise EmptyWord("cannot shift an empty word")
    symbols = word.symbols[1:] if word.symbols else ()
    preperiod = word.preperiod
    period = word.period
    if period is not None:
        if preperiod:
            preperiod = preperiod[1:]
        else:
            preperiod = () if preperiod is not None else None
            period = period[1:] + period[:1]
        if not symbols:
            # keep the window nonempty so repeated shifts stay well defined
            symbols = period
    elif not symbols:
        raise EmptyWord("cannot shift an empty word")
    return ItineraryWord(symbols, preperiod, period)


def angle_to_itinerary(
    theta: AngleLike,
    d: int,
    n: int,
    dadic_convention: Optional[str] = None,
) -> ItineraryWord:
    """First n digits of the base-d expansion of theta, with exact structure.

    For d-adic angles two expansions exist (trailing 0s or trailing d-1s);
    the caller must pick one via `dadic_convention` in {"low", "high"},
    otherwise DAdicAngle is raised.
    """
    if d < 2:
        raise ValueError("base must be >= 2")
    theta = as_angle(theta)
    if theta.is_dadic(d):
        if dadic_convention not in ("low", "high"):
            raise DAdicAngle(
                f"{theta} is {d}-adic; pass dadic_convention='low' or 'high'"
            )
        # exact terminating length: smallest j with theta * d^j an integer
        j = 0
        scaled = theta.fraction
        while scaled.denominator != 1:
            scaled *= d
            j += 1
        low = []
        current = theta.fraction
        for _ in range(j):
            current *= d
            digit = int(current)
            current -= digit
            low.append(digit)
        if dadic_convention == "low":
            pre = _strip_trailing(tuple(low), 0)
            word = tuple(low[:n]) + tuple([0] * max(0, n - j))
            return ItineraryWord(word, pre, (0,))
        # high: ...e,(0 repeated)  ->  ...(e-1),(d-1 repeated); theta = 0
        # degenerates to (d-1) repeated since 0.(d-1)... == 1 == 0 mod 1
        if j == 0:
            return ItineraryWord(tuple([d - 1] * n), (), (d - 1,))
        high = list(low)
        high[-1] -= 1
        pre = _strip_trailing(tuple(high), d - 1)
        word = tuple(high[:n]) + tuple([d - 1] * max(0, n - j))
        return ItineraryWord(word, pre, (d - 1,))
    l, k = orbit_type(theta, d)
    all_digits = []
    current = theta.fraction
    for _ in range(max(n, l + k)):
        current *= d
        digit = int(current)
        current -= digit
        all_digits.append(digit)
    preperiod = tuple(all_digits[:l])
    period = tuple(all_digits[l : l + k])
    window = [
        preperiod[j] if j < l else period[(j - l) % k] for j in range(n)
    ]
    return ItineraryWord(tuple(window), preperiod, period)


def _strip_trailing(word: Tuple[int, ...], symbol: int) -> Tuple[int, ...]:
    end = len(word)
    while end > 0 and word[end - 1] == symbol:
        end -= 1
    return word[:end]


def cyclic_order_index(angles: Sequence[float], start: float) -> list[int]:
    """Indices of `angles` sorted cyclically counterclockwise from `start`."""
    keyed = sorted(range(len(angles)), key=lambda i: (angles[i] - start) % 1.0)
    return keyed


def rotation_number(permutation: Sequence[int]) -> Tuple[int, int]:
    """Rotation number p/q of a cyclic-order-preserving permutation.

    `permutation[i]` is the image slot of slot i in the cyclic order. For a
    combinatorial rotation every slot advances by the same step p; the result
    is reduced p/q with q = len(permutation).
    """
    q = len(permutation)
    if q == 0:
        raise ValueError("empty permutation")
    steps = {(permutation[i] - i) % q for i in range(q)}
    if len(steps) != 1:
        raise ValueError(f"not a combinatorial rotation: steps {sorted(steps)}")
    p = steps.pop()
    g = gcd(p, q) if p else q
    return (p // g, q // g) if p else (0, 1)
