"""Ray tracing tests.

Expected values fall in three groups: exact model values for z^2 (the
Boettcher coordinate is the identity there, so every sample is an elementary
function), closed-form fixed points for the basilica and the cubic basin
(golden-ratio points of z^2 - 1 and z^2(z+1)), and internal-consistency
checks (functional equation residuals, equivariance between a ray and its
image ray) that hold for any correct trace.
"""

import cmath
import math

import numpy as np
import pytest

from polypuzzle.angles import RationalAngle, as_angle
from polypuzzle.errors import (
    BasinBoundaryTooClose,
    ContinuationFailure,
    EmptyResult,
    NearCritical,
)
from polypuzzle.poly import Polynomial, internal_potential
from polypuzzle.rays import (
    colanding_report,
    equipotential,
    iterate_polynomial,
    land_external_ray,
    trace_external_ray,
    trace_internal_ray,
    trace_ray_field,
)

SQUARE = Polynomial([0, 0, 1], label="z^2")
BASILICA = Polynomial([-1, 0, 1], label="z^2-1")
CUBIC_BASIN = Polynomial([0, 0, 1, 1], label="z^2(z+1)")

ALPHA = (1 - math.sqrt(5)) / 2  # basilica fixed point, the landing target
BETA_CUBIC = (-1 + math.sqrt(5)) / 2  # boundary fixed point of z^2(z+1)


# -- external rays, model map -------------------------------------------------


def test_square_ray_angle_zero_is_real_axis():
    path = trace_external_ray(SQUARE, 0, t_min=0.05)
    for t, z in path.samples:
        assert abs(z - math.exp(t)) < 1e-12
    assert path.landed
    assert abs(path.landing_point - 1.0) < 1e-12
    assert path.max_residual < 1e-12


def test_square_ray_third_matches_exponential():
    path = trace_external_ray(SQUARE, "1/3", t_min=0.05)
    expected = cmath.exp(0.05 + 2j * math.pi / 3)
    assert abs(path.point_at(0.05) - expected) < 1e-12
    expected2 = cmath.exp(0.1 + 2j * math.pi / 3)
    assert abs(path.point_at(0.1) - expected2) < 1e-12


def test_square_ray_potentials_decrease_toward_landing():
    path = trace_external_ray(SQUARE, "1/3", t_min=1e-3)
    assert np.all(np.diff(path.potentials) < 0)
    assert path.potentials[-1] == pytest.approx(1e-3)


def test_point_at_off_grid_raises():
    path = trace_external_ray(SQUARE, 0, t_min=0.05, land=False)
    with pytest.raises(KeyError):
        path.point_at(0.0777)


def test_square_landing_result_third():
    res = land_external_ray(SQUARE, "1/3")
    w = cmath.exp(2j * math.pi / 3)
    assert abs(res.point - w) < 1e-10
    assert abs(res.derivative - 2 * w) < 1e-9
    # (f^2)'(w) = 2w * 2w^2 = 4 w^3 = 4
    assert abs(res.cycle_multiplier - 4.0) < 1e-9
    assert res.period == 2
    assert res.rotation == (1, 2)


def test_square_landing_fixed_angle():
    res = land_external_ray(SQUARE, 0)
    assert abs(res.point - 1.0) < 1e-10
    assert res.period == 1
    assert res.rotation == (0, 1)
    assert abs(res.cycle_multiplier - 2.0) < 1e-9


def test_landing_rejects_preperiodic_angle():
    with pytest.raises(ValueError):
        land_external_ray(SQUARE, "1/6")  # 1/6 -> 1/3, preperiod 1


# -- external rays, basilica --------------------------------------------------


def test_basilica_ray_lands_on_alpha():
    path = trace_external_ray(BASILICA, "1/3", t_min=1e-3)
    assert path.landed
    assert abs(path.landing_point - ALPHA) < 1e-8
    assert path.max_residual < 1e-6


def test_basilica_landing_rotation_half():
    res = land_external_ray(BASILICA, "1/3")
    assert abs(res.point - ALPHA) < 1e-8
    assert res.period == 1  # alpha is fixed; the angle pair swaps around it
    assert res.rotation == (1, 2)
    assert abs(res.cycle_multiplier - (2 * ALPHA)) < 1e-8


def test_preperiodic_ray_lands_on_pullback():
    # 1/6 doubles to 1/3; its ray lands on a preimage of alpha
    path = trace_external_ray(BASILICA, "1/6", t_min=1e-3)
    assert path.landed
    image = BASILICA(path.landing_point)
    target = trace_external_ray(BASILICA, "1/3", t_min=1e-3).landing_point
    assert abs(image - target) < 1e-8


def test_ray_field_equivariance_shared_grid():
    angles = [RationalAngle(k, 15) for k in range(1, 15)]
    field = trace_ray_field(BASILICA, angles, t_min=1e-2)
    worst = max(p.max_residual for p in field.values())
    assert worst < 1e-9
    # spot check f(ray(theta)) = ray(2 theta) at shared potentials
    p = field[as_angle("1/15")]
    q = field[as_angle("2/15")]
    for t, z in p.samples:
        if 2 * t <= q.potentials[0]:
            assert abs(BASILICA(z) - q.point_at(2 * t)) < 1e-9


# -- equipotentials -----------------------------------------------------------


def test_square_equipotential_is_circle():
    eq = equipotential(SQUARE, math.log(2), n_samples=36)
    assert np.max(np.abs(np.abs(eq.points) - 2.0)) < 1e-12
    assert eq.max_residual < 1e-12


def test_square_internal_equipotential_is_circle():
    eq = equipotential(SQUARE, math.log(2), n_samples=36, side="internal", c0=0)
    assert np.max(np.abs(np.abs(eq.points) - 0.5)) < 1e-12


def test_equipotential_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        equipotential(SQUARE, 0.0)


# -- internal rays ------------------------------------------------------------


def test_cubic_internal_zero_ray_lands_on_beta():
    path = trace_internal_ray(CUBIC_BASIN, 0, 0, -1e-4)
    assert path.landed
    assert abs(path.landing_point - BETA_CUBIC) < 1e-10
    assert path.max_residual < 1e-10
    # potentials are negative and rise toward 0 at the landing end
    assert np.all(path.potentials < 0)
    assert np.all(np.diff(path.potentials) > 0)


def test_cubic_internal_rays_equivariant_pair():
    p13 = trace_internal_ray(CUBIC_BASIN, 0, "1/3", -1e-5)
    p23 = trace_internal_ray(CUBIC_BASIN, 0, "2/3", -1e-5)
    assert p13.landed and p23.landed
    assert abs(CUBIC_BASIN(p13.landing_point) - p23.landing_point) < 1e-10
    assert abs(CUBIC_BASIN(p23.landing_point) - p13.landing_point) < 1e-10
    assert p13.max_residual < 1e-10


def test_cubic_co_critical_level_is_below_one():
    # the free critical point -2/3 sits inside the basin at half the
    # potential of its critical value 4/27
    v_c1 = internal_potential(CUBIC_BASIN, 0, -2 / 3)
    v_value = internal_potential(CUBIC_BASIN, 0, 4 / 27)
    assert abs(2 * v_c1 - v_value) < 1e-9
    assert v_c1 == pytest.approx(0.9170820869646092, abs=1e-9)
    assert v_c1 < 1.0


def test_cubic_internal_equipotential_inside_critical_level():
    eq = equipotential(CUBIC_BASIN, 1.0, n_samples=90, side="internal", c0=0)
    assert eq.max_residual < 1e-12
    # the level-1 curve lies strictly inside the co-critical point's level
    assert np.all(np.abs(eq.points - (-2 / 3)) > 1e-3)


def test_internal_ray_into_critical_point_fails_honestly():
    # the angle-1/2 ray runs straight into the free critical point at
    # |t| ~ 0.917 and has no distinguished continuation past it
    with pytest.raises((ContinuationFailure, NearCritical, BasinBoundaryTooClose)):
        trace_internal_ray(CUBIC_BASIN, 0, "1/2", -1e-3)


def test_internal_ray_requires_negative_potential():
    with pytest.raises(ValueError):
        trace_internal_ray(SQUARE, 0, 0, 0.5)


def test_external_ray_requires_positive_potential():
    with pytest.raises(ValueError):
        trace_external_ray(SQUARE, 0, -0.5)


# -- colanding ----------------------------------------------------------------


def test_square_colanding_internal_third():
    rep = colanding_report(SQUARE, "1/3", 2, c0=0)
    assert [str(a) for a in rep.angles] == ["1/3"]
    assert abs(rep.landing_point - cmath.exp(2j * math.pi / 3)) < 1e-8


def test_basilica_return_map_colanding_pair():
    rep = colanding_report(BASILICA, "0/1", 2, c0=0, return_time=2)
    assert [str(a) for a in rep.angles] == ["1/3", "2/3"]
    assert abs(rep.landing_point - ALPHA) < 1e-8


def test_colanding_empty_result_carries_diagnostics():
    # bound 1 only offers the fixed angle 0, which lands at beta = 1, not
    # at the landing point of the internal 1/3 ray
    with pytest.raises(EmptyResult) as exc_info:
        colanding_report(SQUARE, "1/3", 1, c0=0)
    assert exc_info.value.diagnostics  # says where each candidate went


# -- iterates -----------------------------------------------------------------


def test_iterate_polynomial_basilica_second():
    f2 = iterate_polynomial(BASILICA, 2)
    assert np.allclose(f2.coefficients, [0, 0, -2, 0, 1])
    z = 0.3 + 0.2j
    assert abs(f2(z) - BASILICA(BASILICA(z))) < 1e-12


def test_iterate_polynomial_identity_case():
    f1 = iterate_polynomial(SQUARE, 1)
    assert np.allclose(f1.coefficients, [0, 0, 1])
    with pytest.raises(ValueError):
        iterate_polynomial(SQUARE, 0)
