"""Tests for the puzzle graph, symbolic pieces, and their realized geometry.

Three model maps exercise the construction: z^2 (rays are radii, everything
checkable by hand), z^3 (higher degree, same unicritical structure), and
z^3 + z^2 (a second critical point, so the inner and outer angle charts
genuinely differ).  Expected values were derived on paper from sector
arithmetic and the explicit Boettcher coordinates of z^d.
"""

import cmath
import math
from fractions import Fraction

import numpy as np
import pytest

from polypuzzle import puzzle as pz
from polypuzzle.errors import (
    Depth0,
    InvalidAngle,
    OnGraph,
    OutsideRegion,
    PullbackFailure,
)
from polypuzzle.poly import Polynomial

F = Fraction

# depth-0 labels of z^2 with marked angle 1/3; A is the wide sector
B2 = (F(1, 3), F(2, 3))
A2 = (F(2, 3), F(4, 3))
# labels of z^3 + z^2 (same angles: the marked basin has inner degree 2)
BC = (F(1, 3), F(2, 3))
AC = (F(2, 3), F(4, 3))


@pytest.fixture(scope="module")
def quad():
    return pz.build_spec(Polynomial([0, 0, 1]), 0.0, F(1, 3))


@pytest.fixture(scope="module")
def quad7():
    return pz.build_spec(Polynomial([0, 0, 1]), 0.0, F(1, 7))


@pytest.fixture(scope="module")
def cubic():
    return pz.build_spec(Polynomial([0, 0, 0, 1]), 0.0, F(1, 8))


@pytest.fixture(scope="module")
def twocrit():
    return pz.build_spec(Polynomial([0, 0, 1, 1]), 0.0, F(1, 3))


class TestBuildSpec:
    def test_quadratic_inventory(self, quad):
        assert quad.d == 2 and quad.degree == 2 and quad.period == 2
        assert quad.labels == (B2, A2)
        assert quad.internal_level == F(1, 1)
        assert [str(a) for a in quad.external_cycle] == ["1/3", "2/3"]

    def test_quadratic_landing_points(self, quad):
        # rays of z^2 are radii, so the cycle lands at the cube roots of unity
        for a, want in [(F(1, 3), cmath.exp(2j * cmath.pi / 3)),
                        (F(2, 3), cmath.exp(-2j * cmath.pi / 3))]:
            key = next(k for k in quad.landing_points if k.fraction == a)
            assert quad.landing_points[key] == pytest.approx(want, abs=1e-9)

    def test_period_three_angle(self, quad7):
        assert quad7.period == 3
        assert quad7.internal_level == F(1, 3)
        assert quad7.labels == (
            (F(1, 7), F(2, 7)),
            (F(2, 7), F(4, 7)),
            (F(4, 7), F(8, 7)),
        )

    def test_cubic_inventory(self, cubic):
        assert cubic.d == 3 and cubic.degree == 3
        assert cubic.internal_level == F(1, 2)
        assert cubic.labels == ((F(1, 8), F(3, 8)), (F(3, 8), F(9, 8)))
        assert [str(a) for a in cubic.external_cycle] == ["1/8", "3/8"]
        for a, want in [(F(1, 8), cmath.exp(2j * cmath.pi / 8)),
                        (F(3, 8), cmath.exp(6j * cmath.pi / 8))]:
            key = next(k for k in cubic.landing_points if k.fraction == a)
            assert cubic.landing_points[key] == pytest.approx(want, abs=1e-9)

    def test_two_critical_inventory(self, twocrit):
        # the marked basin at 0 has local degree 2 inside a total degree 3
        assert twocrit.d == 2 and twocrit.degree == 3
        assert twocrit.labels == (BC, AC)
        assert twocrit.internal_level == F(1, 1)
        assert [str(a) for a in twocrit.external_cycle] == ["1/4", "3/4"]

    def test_two_critical_landing_value(self, twocrit):
        key = next(k for k in twocrit.landing_points if k.fraction == F(1, 3))
        z = twocrit.landing_points[key]
        # the landing point is a fixed point of f^2 on the basin boundary
        f = Polynomial([0, 0, 1, 1])
        assert f(f(z)) == pytest.approx(z, abs=1e-9)
        assert z == pytest.approx(-0.21507985450097 + 0.84179470325878j, abs=1e-6)

    def test_eventually_fixed_angle_rejected(self):
        with pytest.raises(InvalidAngle):
            pz.build_spec(Polynomial([0, 0, 1]), 0.0, F(1, 2))

    def test_graph_stability(self, quad, cubic, twocrit):
        for spec in (quad, cubic, twocrit):
            assert spec.stability_defect < 1e-10


class TestTransitions:
    def test_quadratic_table(self, quad):
        assert quad.transitions == {
            B2: {A2: 1},
            A2: {B2: 2, A2: 1},
        }

    def test_period_three_table(self, quad7):
        L1, L2, L3 = quad7.labels
        assert quad7.transitions == {
            L1: {L2: 1},
            L2: {L3: 1},
            L3: {L1: 2, L2: 1, L3: 1},
        }

    def test_cubic_table(self, cubic):
        L1, L2 = cubic.labels
        assert cubic.transitions == {L1: {L2: 1}, L2: {L1: 3, L2: 2}}

    def test_two_critical_table(self, twocrit):
        assert twocrit.transitions == {BC: {AC: 1}, AC: {BC: 2, AC: 1}}

    def test_row_sums_count_boundary_arcs(self, quad, quad7, cubic, twocrit):
        # f^{-1} of the ray cycle cuts the basin boundary into period*d arcs
        for spec in (quad, quad7, cubic, twocrit):
            total = sum(c for row in spec.transitions.values() for c in row.values())
            assert total == spec.period * spec.d


class TestLocate:
    def test_inner_orbit_word(self, quad):
        z = 0.5 * cmath.exp(2j * cmath.pi * 0.1)
        piece = pz.locate(quad, z, 2)
        assert piece.word == (A2, A2, B2)
        assert piece.depth == 2

    def test_inner_orbit_word_depth_one(self, quad):
        z = 0.5 * cmath.exp(2j * cmath.pi * 0.4)
        assert pz.locate(quad, z, 1).word == (B2, A2)

    def test_point_on_ray_refused(self, quad):
        with pytest.raises(OnGraph) as exc:
            pz.locate(quad, 0.6 * cmath.exp(2j * cmath.pi / 3), 1)
        assert exc.value.j == 0

    def test_center_refused(self, quad):
        with pytest.raises(OutsideRegion):
            pz.locate(quad, 0.0, 1)

    def test_angle_hint_accepted_and_carried(self, quad):
        z = 0.5 * cmath.exp(2j * cmath.pi / 5)
        piece = pz.locate(quad, z, 2, internal_angle=F(1, 5))
        assert piece.internal_angle == F(1, 5)
        assert piece.word == pz.locate(quad, z, 2).word

    def test_inconsistent_hint_rejected(self, quad):
        z = 0.5 * cmath.exp(2j * cmath.pi / 5)   # sector (1/3, 2/3)? no: 1/5
        with pytest.raises(ValueError):
            pz.locate(quad, z, 1, internal_angle=F(1, 2))

    def test_critical_point_word(self, twocrit):
        piece = pz.locate(twocrit, -2 / 3 + 0j, 0)
        assert piece.word == (BC,)


class TestMarkovProperty:
    @pytest.mark.parametrize("coeffs,theta", [
        ([0, 0, 1], F(1, 3)),
        ([0, 0, 0, 1], F(1, 8)),
        ([0, 0, 1, 1], F(1, 3)),
    ])
    def test_image_commutes_with_dynamics(self, coeffs, theta):
        poly = Polynomial(coeffs)
        spec = pz.build_spec(poly, 0.0, theta)
        rng = np.random.default_rng(42)
        radius = float(np.max(np.abs(spec._equip_ext)))
        checked = 0
        for _ in range(1500):
            if checked >= 400:
                break
            z = complex(rng.uniform(-radius, radius), rng.uniform(-radius, radius))
            try:
                here = pz.locate(spec, z, 3)
                there = pz.locate(spec, poly(z), 2)
            except (OnGraph, OutsideRegion):
                continue
            assert there == pz.image(spec, here)
            assert pz.word_is_admissible(spec, here.word)
            checked += 1
        assert checked == 400


class TestPieceAlgebra:
    def test_contains_is_prefix_order(self):
        a = pz.PieceId(0, (A2,))
        ab = pz.PieceId(1, (A2, B2))
        aa = pz.PieceId(1, (A2, A2))
        ba = pz.PieceId(1, (B2, A2))
        assert pz.contains(a, ab)
        assert not pz.contains(ab, aa)
        assert not pz.contains(a, ba)

    def test_image_drops_first_letter(self, quad):
        piece = pz.PieceId(2, (A2, B2, A2))
        assert pz.image(quad, piece) == pz.PieceId(1, (B2, A2))
        assert pz.image(quad, pz.PieceId(1, (A2, A2))) == pz.PieceId(0, (A2,))

    def test_image_of_depth_zero_errors(self, quad):
        with pytest.raises(Depth0):
            pz.image(quad, pz.PieceId(0, (A2,)))

    def test_image_doubles_angle_hint(self, quad):
        piece = pz.PieceId(1, (A2, B2), internal_angle=F(1, 4))
        assert pz.image(quad, piece).internal_angle == F(1, 2)

    def test_word_length_must_match_depth(self):
        with pytest.raises(ValueError):
            pz.PieceId(2, (A2, B2))

    def test_admissibility_quadratic(self, quad):
        assert pz.word_is_admissible(quad, (B2, A2, B2))
        assert not pz.word_is_admissible(quad, (B2, B2))
        assert not pz.word_is_admissible(quad, (A2, (F(0), F(1, 2))))

    def test_outer_chart_widens_admissibility(self, twocrit):
        # the inner chart forbids B->B, but escaping orbits realize it:
        # the outer boundary arc maps with degree 3 over degree-2 sectors
        assert twocrit.transitions[BC].get(BC, 0) == 0
        assert pz.word_is_admissible(twocrit, (BC, BC))


class TestPieceDegree:
    def test_quadratic_pieces_avoid_center(self, quad):
        # the critical point at the center is walled off by the inner
        # equipotential, so no piece carries degree from it
        for lab in quad.labels:
            assert pz.piece_degree(quad, pz.PieceId(0, (lab,))) == 1

    def test_free_critical_point_counts(self, twocrit):
        piece = pz.locate(twocrit, -2 / 3 + 0j, 0)
        assert pz.piece_degree(twocrit, piece) == 2

    def test_free_critical_point_leaves_at_depth_one(self, twocrit):
        # v(-2/3) = 0.917 exceeds the depth-1 inner level 1/2, so the
        # critical point sits outside every depth-1 piece
        assert pz.piece_degree(twocrit, pz.PieceId(1, (BC, AC))) == 1


class TestGeometry:
    def test_depth_zero_sector(self, quad):
        geom = pz.geometry(quad, pz.PieceId(0, (A2,)), resolution=512)
        radii = np.abs(geom.boundary)
        assert radii.min() == pytest.approx(math.exp(-1), rel=1e-3)
        assert radii.max() == pytest.approx(math.exp(1), rel=1e-3)
        # the widest chord of a 240-degree annular sector is a full diameter
        assert geom.diameter == pytest.approx(2 * math.e, rel=1e-3)
        assert geom.complete
        got = sorted(map(tuple, np.round(np.column_stack(
            [geom.contact_points.real, geom.contact_points.imag]), 6)))
        want = sorted([(-0.5, round(math.sqrt(3) / 2, 6)),
                       (-0.5, round(-math.sqrt(3) / 2, 6))])
        assert got == want

    def test_twin_pieces_share_word(self, quad):
        lo = pz.geometry(quad, pz.PieceId(1, (A2, B2), internal_angle=F(1, 4)),
                         resolution=256)
        hi = pz.geometry(quad, pz.PieceId(1, (A2, B2), internal_angle=F(3, 4)),
                         resolution=256)
        assert lo.internal_interval == (F(1, 6), F(1, 3))
        assert hi.internal_interval == (F(2, 3), F(5, 6))
        assert lo.diameter == pytest.approx(hi.diameter, rel=1e-9)
        radii = np.abs(lo.boundary)
        assert radii.min() == pytest.approx(math.exp(-0.5), rel=1e-3)
        assert radii.max() == pytest.approx(math.exp(0.5), rel=1e-3)
        # twins are disjoint: no vertex of one falls inside the other
        cast = pz._Cast(lo.boundary)
        assert not any(cast.contains(z) for z in hi.boundary)

    def test_twin_without_hint_is_deterministic(self, quad):
        geom = pz.geometry(quad, pz.PieceId(1, (A2, B2)), resolution=256)
        assert geom.internal_interval == (F(2, 3), F(5, 6))

    def test_nested_chain_shrinks_geometrically(self, quad):
        # itinerary pieces around the landing point of the angle-1/5 ray
        t = F(1, 5)
        diams = []
        for n in range(7):
            word, tt = [], t
            for _ in range(n + 1):
                word.append(A2 if pz._arc_contains(A2, tt) else B2)
                tt = (tt * 2) % 1
            geom = pz.geometry(quad, pz.PieceId(n, tuple(word), internal_angle=t),
                               resolution=256)
            assert geom.complete
            diams.append(geom.diameter)
        rate = (diams[-1] / diams[0]) ** (1 / 6)
        assert 0.45 < rate < 0.55
        # per-step ratios alternate between a narrow and a wide annulus
        ratios = [diams[i + 1] / diams[i] for i in range(6)]
        assert all(0.25 < r < 0.35 for r in ratios[::2])
        assert all(0.75 < r < 0.85 for r in ratios[1::2])

    def test_child_sits_inside_parent(self, quad):
        child = pz.geometry(quad, pz.PieceId(1, (A2, B2), internal_angle=F(1, 4)),
                            resolution=256)
        parent = pz.geometry(quad, pz.PieceId(0, (A2,)), resolution=256)
        cast = pz._Cast(parent.boundary)
        field = pz._SegmentField([parent.boundary], [True])
        scale = float(np.max(np.abs(parent.boundary)))
        for z in child.boundary:
            assert cast.contains(z) or field.distance(z) < 3e-3 * scale

    def test_two_critical_pullback(self, twocrit):
        # full degree 3 differs from inner degree 2 here, so the pulled
        # boundary mixes both charts
        g1 = pz.geometry(twocrit, pz.PieceId(1, (BC, AC)), resolution=256)
        assert g1.complete
        assert g1.internal_interval == (F(1, 3), F(2, 3))
        assert g1.diameter == pytest.approx(1.5503, rel=0.02)
        assert len(g1.contact_points) == 2
        g2 = pz.geometry(
            twocrit,
            pz.PieceId(2, (BC, AC, BC), internal_angle=F(7, 20)),
            resolution=256,
        )
        assert g2.complete
        assert g2.internal_interval == (F(1, 3), F(5, 12))
        assert g2.diameter < 0.45 * g1.diameter

    def test_pullback_degree_matches_preimage_count(self, twocrit):
        piece = pz.PieceId(1, (BC, AC))
        child = pz.geometry(twocrit, piece, resolution=256)
        parent = pz.geometry(twocrit, pz.PieceId(0, (AC,)), resolution=256)
        inside_child = pz._Cast(child.boundary)
        inside_parent = pz._Cast(parent.boundary)
        away = pz._SegmentField([parent.boundary], [True])
        degree = pz.piece_degree(twocrit, piece)
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(4000):
            if checked >= 60:
                break
            w = complex(rng.uniform(-2, 2), rng.uniform(-2, 2))
            if not inside_parent.contains(w) or away.distance(w) < 1e-3:
                continue
            roots = np.roots([1, 1, 0, -w])
            assert sum(bool(inside_child.contains(r)) for r in roots) == degree
            checked += 1
        assert checked == 60

    def test_depth_two_piece_count_matches_transitions(self, quad):
        # enumerate branch intervals through dense hints and compare with
        # the product of transition multiplicities along each word
        table = quad.transitions
        total, seen = 0, set()
        for l0 in quad.labels:
            for l1, c1 in table[l0].items():
                for l2, c2 in table[l1].items():
                    word = (l0, l1, l2)
                    found = set()
                    for num in range(240):
                        t = F(num, 240) + F(1, 480)
                        tt, ok = t, pz._arc_contains(word[0], t)
                        for j in range(1, 3):
                            if not ok:
                                break
                            tt = (tt * 2) % 1
                            ok = pz._arc_contains(word[j], tt)
                        if not ok:
                            continue
                        found.add(pz._refined_interval(
                            quad, pz.PieceId(2, word, internal_angle=t)))
                    assert len(found) == c1 * c2
                    total += c1 * c2
                    seen |= found
        assert total == 8 and len(seen) == 8

    def test_word_off_the_marked_boundary_fails_cleanly(self, twocrit):
        with pytest.raises(PullbackFailure) as exc:
            pz.geometry(twocrit, pz.PieceId(1, (BC, BC)), resolution=128)
        assert exc.value.partial is None

    def test_resolution_floor(self, quad):
        with pytest.raises(ValueError):
            pz.geometry(quad, pz.PieceId(0, (A2,)), resolution=32)


class TestSerialization:
    def test_atlas_roundtrip(self, quad):
        atlas = pz.depth0_atlas(quad)
        data = atlas.to_json()
        assert [tuple(map(str, lab)) for lab in data["labels"]] == [
            ("1/3", "2/3"), ("2/3", "4/3")]
        assert len(data["transitions"]) == 3

    def test_pieces_dump(self, twocrit):
        out = pz.pieces_to_json(
            twocrit,
            [pz.PieceId(0, (BC,)), pz.PieceId(1, (BC, AC)), pz.PieceId(1, (BC, BC))],
            include_boundary=True,
            resolution=128,
        )
        assert out["schema"] == "puzzle-atlas/1"
        assert out["internal_angle"] == "1/3"
        good = out["pieces"][1]
        assert good["complete"] and "boundary" in good and good["diameter"] > 0
        bad = out["pieces"][2]
        assert bad["complete"] is False and "note" in bad and "boundary" not in bad
