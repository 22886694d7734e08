"""Exact-arithmetic tests for angle operations and itineraries."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polypuzzle.angles import (
    ItineraryWord,
    RationalAngle,
    angle_to_itinerary,
    as_angle,
    orbit_type,
    rotation_number,
    shift,
    times_base,
)
from polypuzzle.errors import DAdicAngle, EmptyWord


def test_angle_normalized_mod_one():
    assert as_angle("5/3") == RationalAngle(2, 3)
    assert as_angle(Fraction(-1, 3)) == RationalAngle(2, 3)
    assert as_angle(7) == RationalAngle(0, 1)
    assert str(RationalAngle(2, 6)) == "1/3"


def test_times_base_examples():
    assert times_base("1/3", 2) == as_angle("2/3")
    assert times_base("2/3", 2) == as_angle("1/3")
    assert times_base("1/7", 2) == as_angle("2/7")


def test_orbit_type_examples():
    assert orbit_type("1/3", 2) == (0, 2)
    assert orbit_type("1/6", 2) == (1, 2)
    assert orbit_type("1/7", 2) == (0, 3)
    # eventually fixed dyadic angle
    assert orbit_type("1/2", 2) == (1, 1)
    assert orbit_type(0, 2) == (0, 1)


def test_itinerary_examples():
    assert angle_to_itinerary("1/3", 2, 4).symbols == (0, 1, 0, 1)
    assert angle_to_itinerary("1/7", 2, 6).symbols == (0, 0, 1, 0, 0, 1)
    assert angle_to_itinerary("2/3", 2, 4).symbols == (1, 0, 1, 0)
    word = angle_to_itinerary("1/3", 2, 4)
    assert word.preperiod == ()
    assert word.period == (0, 1)


def test_itinerary_preperiodic_structure():
    # 1/6 = 0.0(01) in base 2: one preperiod digit then the period of 1/3
    word = angle_to_itinerary("1/6", 2, 5)
    assert word.symbols == (0, 0, 1, 0, 1)
    assert word.preperiod == (0,)
    assert word.period == (0, 1)


def test_dadic_requires_convention():
    with pytest.raises(DAdicAngle):
        angle_to_itinerary("1/4", 2, 5)
    low = angle_to_itinerary("1/4", 2, 5, dadic_convention="low")
    high = angle_to_itinerary("1/4", 2, 5, dadic_convention="high")
    assert low.symbols == (0, 1, 0, 0, 0)
    assert high.symbols == (0, 0, 1, 1, 1)
    # both expansions sum back to 1/4
    assert sum(Fraction(s, 2 ** (i + 1)) for i, s in enumerate(low.symbols)) == Fraction(1, 4)
    tail = Fraction(1, 2**5)  # value of the all-ones tail beyond the window
    assert (
        sum(Fraction(s, 2 ** (i + 1)) for i, s in enumerate(high.symbols)) + tail
        == Fraction(1, 4)
    )


def test_dadic_zero_high_expansion():
    word = angle_to_itinerary(0, 3, 4, dadic_convention="high")
    assert word.symbols == (2, 2, 2, 2)
    assert word.period == (2,)


def test_shift_examples():
    assert shift(ItineraryWord((0, 1, 0, 1))).symbols == (1, 0, 1)
    purely = ItineraryWord((0, 0, 1), preperiod=(), period=(0, 0, 1))
    shifted = shift(purely)
    assert shifted.period == (0, 1, 0)
    mixed = ItineraryWord((1, 0, 1), preperiod=(1,), period=(0, 1))
    shifted = shift(mixed)
    assert shifted.preperiod == ()
    assert shifted.period == (0, 1)


def test_shift_empty_word():
    with pytest.raises(EmptyWord):
        shift(ItineraryWord(()))


def test_shift_commutes_with_times_base_exhaustive():
    # every non-dyadic angle with denominator <= 60, window length 12
    for q in range(3, 61):
        for p in range(1, q):
            theta = RationalAngle(p, q)
            if theta.is_dadic(2):
                continue
            lhs = angle_to_itinerary(times_base(theta, 2), 2, 11).symbols
            rhs = shift(angle_to_itinerary(theta, 2, 12)).symbols
            assert lhs == rhs, (p, q)


@settings(max_examples=300, deadline=None)
@given(
    p=st.integers(min_value=0, max_value=9999),
    q=st.integers(min_value=3, max_value=10000),
    d=st.sampled_from([2, 3, 4]),
)
def test_shift_commutes_with_times_base_random(p, q, d):
    theta = RationalAngle(p, q)
    if theta.is_dadic(d):
        return
    lhs = angle_to_itinerary(times_base(theta, d), d, 9).symbols
    rhs = shift(angle_to_itinerary(theta, d, 10)).symbols
    assert lhs == rhs


@settings(max_examples=300, deadline=None)
@given(
    p=st.integers(min_value=0, max_value=9999),
    q=st.integers(min_value=1, max_value=10000),
    d=st.sampled_from([2, 3]),
)
def test_orbit_type_shifts_under_times_base(p, q, d):
    theta = RationalAngle(p, q)
    l, k = orbit_type(theta, d)
    l2, k2 = orbit_type(times_base(theta, d), d)
    assert k2 == k
    assert l2 == max(l - 1, 0)


@settings(max_examples=200, deadline=None)
@given(p=st.integers(min_value=0, max_value=9999), q=st.integers(min_value=1, max_value=10000))
def test_orbit_type_is_exact_period(p, q):
    theta = RationalAngle(p, q)
    l, k = orbit_type(theta, 2)
    a = theta
    for _ in range(l):
        a = times_base(a, 2)
    # the period returns: 2^k * a == a mod 1
    assert RationalAngle(a.numerator * pow(2, k), a.denominator) == a
    # minimality: no proper divisor k/p of k returns
    for prime in {p for p in range(2, k + 1) if k % p == 0 and _is_prime(p)}:
        shorter = k // prime
        assert RationalAngle(a.numerator * pow(2, shorter), a.denominator) != a


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % m for m in range(2, int(n**0.5) + 1))


def test_itinerary_digit_reconstructs_angle():
    # digits of the expansion reconstruct the angle: sum d_j / 2^(j+1)
    theta = RationalAngle(3, 7)
    word = angle_to_itinerary(theta, 2, 40)
    approx = sum(Fraction(s, 2 ** (i + 1)) for i, s in enumerate(word.symbols))
    assert abs(float(approx) - float(theta)) < 2**-39


def test_symbol_at_uses_periodic_structure():
    word = angle_to_itinerary("1/6", 2, 3)
    assert [word.symbol_at(j) for j in range(8)] == [0, 0, 1, 0, 1, 0, 1, 0]


def test_rotation_number():
    assert rotation_number([1, 2, 0]) == (1, 3)
    assert rotation_number([0]) == (0, 1)
    assert rotation_number([2, 3, 0, 1]) == (1, 2)
    with pytest.raises(ValueError):
        rotation_number([1, 0, 2])
