"""Polynomial core: evaluation, escape, Green potential, Boettcher maps.

Expected values marked as oracle results were computed independently of the
implementation (closed forms for the model map z -> z^D, direct limits for
the rest) before being frozen here.
"""

import cmath
import math
import random

import numpy as np
import pytest

from polypuzzle.errors import NotInBasin, TooDeep
from polypuzzle.poly import (
    Polynomial,
    bottcher_external,
    bottcher_internal,
    classify,
    evaluate,
    green_potential,
    internal_potential,
    local_expansion,
    superattracting_degree,
)

SQUARE = Polynomial([0, 0, 1], label="z^2")
BASILICA = Polynomial([-1, 0, 1], label="z^2-1")
CUBIC_BASIN = Polynomial([0, 0, 1, 1], label="z^2(z+1)")
CUBE = Polynomial([0, 0, 0, 1], label="z^3")


def test_evaluate_examples():
    assert evaluate(SQUARE, 2) == 4
    assert evaluate(BASILICA, 0) == -1
    assert evaluate(CUBIC_BASIN, 1) == 2


def test_evaluate_vectorized():
    zs = np.array([0, 1j, 2.0])
    np.testing.assert_allclose(evaluate(SQUARE, zs), zs**2)


def test_degree_and_label():
    assert SQUARE.degree == 2
    assert CUBIC_BASIN.degree == 3
    assert CUBIC_BASIN.label == "z^2(z+1)"


def test_classify_examples():
    assert classify(SQUARE, 2, escape_radius=4, max_iter=100).status == "escaped"
    assert classify(SQUARE, 2, escape_radius=4, max_iter=100).iterations == 1
    assert classify(SQUARE, 0.5, escape_radius=4, max_iter=100).status == "bounded"
    assert classify(BASILICA, 0, escape_radius=4, max_iter=100).status == "bounded"


def test_classify_monotone_in_max_iter():
    rng = random.Random(7)
    for _ in range(200):
        z = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        small = classify(BASILICA, z, max_iter=30)
        big = classify(BASILICA, z, max_iter=400)
        if small.escaped:
            assert big.escaped
            assert big.iterations == small.iterations


def test_critical_points():
    assert [(c.point, c.local_degree) for c in SQUARE.criticals] == [(0j, 2)]
    crits = sorted(CUBIC_BASIN.criticals, key=lambda c: c.point.real)
    assert len(crits) == 2
    assert abs(crits[0].point - (-2 / 3)) < 1e-12
    assert abs(crits[1].point) < 1e-12
    assert all(c.local_degree == 2 for c in crits)
    # multiple critical point detected with its multiplicity
    assert [(c.point, c.local_degree) for c in CUBE.criticals] == [(0j, 3)]


def test_critical_multiplicity_sum():
    for poly in (SQUARE, BASILICA, CUBIC_BASIN, CUBE, Polynomial([1, 2, 0.5, 0, 1j])):
        assert sum(c.local_degree - 1 for c in poly.criticals) == poly.degree - 1


def test_criticals_annihilate_derivative():
    for poly in (SQUARE, BASILICA, CUBIC_BASIN, CUBE):
        for c in poly.criticals:
            assert abs(poly.derivative(c.point)) < 1e-9


def test_normalization_is_conjugacy():
    # q = A o f o A^{-1} must hold pointwise, q monic centered
    poly = Polynomial([0.5j, 2, 3, 2], label="messy")
    assert abs(poly._norm_coeffs[-1] - 1) == 0
    assert poly._norm_coeffs[-2] == 0
    rng = random.Random(3)
    for _ in range(40):
        z = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        lhs = poly.to_normalized(poly(z))
        rhs = poly.eval_normalized(poly.to_normalized(z))
        assert abs(lhs - rhs) < 1e-9 * (1 + abs(lhs))
    z = 0.37 - 1.2j
    assert abs(poly.from_normalized(poly.to_normalized(z)) - z) < 1e-14


def test_green_model_map():
    # oracle: for z^2 the potential is log|z| outside the disk, 0 inside
    assert abs(green_potential(SQUARE, 4).g - math.log(4)) < 1e-12
    assert green_potential(SQUARE, 0.3).g == 0.0
    assert abs(green_potential(CUBE, 2j).g - math.log(2)) < 1e-12


def test_green_basilica_near_log10():
    g = green_potential(BASILICA, 10).g
    assert abs(g - math.log(10)) < 0.02


def test_green_functional_equation():
    rng = random.Random(11)
    polys = [SQUARE, BASILICA, CUBIC_BASIN, Polynomial([0.2, 0, -1.1, 0, 1], label="q")]
    checked = 0
    for _ in range(3000):
        poly = rng.choice(polys)
        z = complex(rng.uniform(-3, 3), rng.uniform(-3, 3))
        g = green_potential(poly, z).g
        if g == 0.0:
            continue
        gf = green_potential(poly, poly(z)).g
        assert abs(gf - poly.degree * g) < 1e-10 * max(1.0, gf)
        checked += 1
    assert checked >= 1000


def test_green_zero_iff_bounded():
    rng = random.Random(13)
    for _ in range(500):
        z = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
        g = green_potential(BASILICA, z).g
        bounded = classify(BASILICA, z, max_iter=2000).status == "bounded"
        assert (g == 0.0) == bounded


def test_bottcher_external_model():
    assert abs(bottcher_external(SQUARE, 3) - 3) < 1e-12
    assert abs(bottcher_external(CUBE, 2j) - 2j) < 1e-12


def test_bottcher_external_basilica():
    w = bottcher_external(BASILICA, 10)
    assert abs(w - 10) < 0.1
    g = green_potential(BASILICA, 10).g
    assert abs(abs(w) - math.exp(g)) < 1e-9


def test_bottcher_external_functional_equation():
    rng = random.Random(17)
    for poly in (BASILICA, CUBIC_BASIN):
        count = 0
        while count < 50:
            z = complex(rng.uniform(-4, 4), rng.uniform(-4, 4))
            g = green_potential(poly, z).g
            if g <= 0.5:
                continue
            lhs = bottcher_external(poly, poly(z))
            rhs = bottcher_external(poly, z) ** poly.degree
            assert abs(lhs - rhs) < 1e-8 * (1 + abs(lhs))
            count += 1


def test_bottcher_external_tangent_to_identity():
    for poly in (BASILICA, CUBIC_BASIN):
        for z in (50, 200 + 100j, -300j):
            w = bottcher_external(poly, z)
            zn = poly.to_normalized(z)
            assert abs(w / zn - 1) < 5.0 / abs(zn)


def test_bottcher_external_too_deep():
    with pytest.raises(TooDeep):
        bottcher_external(BASILICA, 0.1)


def test_superattracting_degree():
    assert superattracting_degree(SQUARE, 0) == 2
    assert superattracting_degree(CUBIC_BASIN, 0) == 2
    assert superattracting_degree(CUBE, 0) == 3
    with pytest.raises(ValueError):
        superattracting_degree(BASILICA, 0)  # 0 is critical but not fixed


def test_local_expansion():
    # f = z^2(z+1) at 0: u^2 + u^3 exactly
    coeffs = local_expansion(CUBIC_BASIN, 0, 4)
    np.testing.assert_allclose(coeffs, [0, 0, 1, 1], atol=1e-14)
    # at the other critical point -2/3: f(-2/3) = 4/27, f'(-2/3) = 0
    coeffs = local_expansion(CUBIC_BASIN, -2 / 3, 3)
    assert abs(coeffs[0] - (4 / 27 - (-2 / 3))) < 1e-14
    assert abs(coeffs[1]) < 1e-14


def test_bottcher_internal_model():
    assert abs(bottcher_internal(SQUARE, 0, 0.5) - 0.5) < 1e-12
    assert abs(bottcher_internal(SQUARE, 0, 0.25j) - 0.25j) < 1e-12


def test_bottcher_internal_cubic_residual():
    w = bottcher_internal(CUBIC_BASIN, 0, 0.1)
    lhs = bottcher_internal(CUBIC_BASIN, 0, CUBIC_BASIN(0.1))
    assert abs(lhs - w**2) < 1e-9


def test_bottcher_internal_functional_equation_samples():
    rng = random.Random(23)
    count = 0
    while count < 40:
        z = complex(rng.uniform(-0.6, 0.4), rng.uniform(-0.5, 0.5))
        try:
            w = bottcher_internal(CUBIC_BASIN, 0, z)
        except NotInBasin:
            continue
        lhs = bottcher_internal(CUBIC_BASIN, 0, CUBIC_BASIN(z))
        assert abs(lhs - w**2) < 1e-9
        count += 1


def test_bottcher_internal_derivative_normalization():
    # psi'(0) = a_d^(1/(d-1)) = 1 for z^2(z+1), so psi(z)/z -> 1
    for eps in (1e-4, 1e-5):
        w = bottcher_internal(CUBIC_BASIN, 0, eps)
        assert abs(w / eps - 1) < 10 * eps


def test_bottcher_internal_not_in_basin():
    with pytest.raises(NotInBasin):
        bottcher_internal(CUBIC_BASIN, 0, 5.0)  # escapes
    beta = (-1 + math.sqrt(5)) / 2  # repelling fixed point on the boundary
    with pytest.raises(NotInBasin):
        bottcher_internal(CUBIC_BASIN, 0, beta, max_iter=200)


def test_internal_potential_halves_under_dynamics():
    for z in (0.1, 0.05 + 0.02j, -0.2):
        v = internal_potential(CUBIC_BASIN, 0, z)
        vf = internal_potential(CUBIC_BASIN, 0, CUBIC_BASIN(z))
        assert abs(vf - 2 * v) < 1e-10 * max(1, vf)


def test_json_round_trip():
    text = CUBIC_BASIN.to_json()
    back = Polynomial.from_json(text)
    assert back.coefficients == CUBIC_BASIN.coefficients
    assert back.label == CUBIC_BASIN.label


def test_escape_radius_default():
    assert SQUARE.escape_radius_default == 2.0
    assert BASILICA.escape_radius_default == 3.0
