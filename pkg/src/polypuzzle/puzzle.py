"""Puzzle pieces cut out by a periodic ray graph.

A superattracting fixed basin carries internal rays; a strictly periodic
internal angle of period k >= 2 picks out a cycle of them. Together with one
cycle of external rays landing at the same boundary points, an external
equipotential at potential 1 and an internal equipotential at level
1/(d^(k-1) - 1), the rays cut the neighbourhood of the basin boundary into k
depth-0 pieces, one per pair of angularly adjacent internal rays. Pieces of
depth n are connected components of the n-th preimage of that picture.

Pieces are kept symbolic: a piece is named by the itinerary of depth-0 sector
labels along the orbit of its points. Words alone do not always pin down a
geometric piece (one sector can cover another several times, so two disjoint
components may share a word); `PieceId` therefore carries an optional
internal-angle hint that selects the branch. Geometry is realized on demand
by pulling the depth-0 boundary polygons back through the dynamics, one
branch of the inverse at a time, with Newton continuation.

A `PuzzleSpec` is immutable once `build_spec` returns, and `locate`,
`contains`, `image`, `piece_degree` and `geometry` are pure functions of
their arguments, so concurrent readers need no locking.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .angles import RationalAngle, as_angle, orbit, orbit_type
from .errors import (
    ContinuationFailure,
    Depth0,
    InvalidAngle,
    LandingClash,
    NearCritical,
    NoConvergence,
    NotInBasin,
    OnGraph,
    OutsideRegion,
    PullbackFailure,
    RayFailure,
)
from .poly import (
    Polynomial,
    bottcher_external,
    bottcher_internal,
    green_potential,
    superattracting_degree,
)
from .rays import TraceControls, _RayFamily

__all__ = [
    "DepthZeroAtlas",
    "PieceGeometry",
    "PieceId",
    "PuzzleSpec",
    "build_spec",
    "contains",
    "depth0_atlas",
    "geometry",
    "image",
    "locate",
    "piece_degree",
    "pieces_to_json",
    "word_is_admissible",
]

TWO_PI = 2.0 * math.pi

# A sector label is the pair of internal cycle angles bounding it, as exact
# fractions with lo < hi <= lo + 1 (the last sector wraps past 1).
Label = Tuple[Fraction, Fraction]

_CLASH_TOL = 1e-6


# --------------------------------------------------------------------------
# small exact-arithmetic helpers


def _arc_contains(arc: Sequence, t) -> bool:
    """Is the angle t strictly inside the arc, mod 1?"""
    lo, hi = arc
    offset = (t - lo) % 1
    return 0 < offset < (hi - lo)


def _angular_gap(t, anchors) -> float:
    """Distance mod 1 from t to the nearest anchor angle."""
    best = 0.5
    for a in anchors:
        g = float((t - a) % 1)
        best = min(best, g, 1.0 - g)
    return best


def _covering_count(d: int, src: Label, dst: Label) -> int:
    """How many times multiplication by d maps the arc `src` across `dst`.

    The image arc is (d*lo, d*hi); each integer translate of `dst` that fits
    inside it contributes one preimage branch. Endpoints are cycle angles, so
    partial overlaps cannot occur and touching counts as fitting.
    """
    lo = math.ceil(d * src[0] - dst[0])
    hi = math.floor(d * src[1] - dst[1])
    return max(0, hi - lo + 1)


def _word_str(word: Sequence[Label]) -> str:
    return " ".join(f"({a},{b})" for a, b in word)


# --------------------------------------------------------------------------
# geometric primitives over fixed polylines


class _Cast:
    """Even-odd point-in-polygon tests against a fixed closed polyline."""

    __slots__ = ("x1", "y1", "x2", "y2")

    def __init__(self, pts: np.ndarray):
        nxt = np.roll(pts, -1)
        self.x1 = np.ascontiguousarray(pts.real)
        self.y1 = np.ascontiguousarray(pts.imag)
        self.x2 = np.ascontiguousarray(nxt.real)
        self.y2 = np.ascontiguousarray(nxt.imag)

    def contains(self, p: complex) -> bool:
        x, y = p.real, p.imag
        odd = (self.y1 > y) != (self.y2 > y)
        if not odd.any():
            return False
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = self.x1 + (y - self.y1) * (self.x2 - self.x1) / (self.y2 - self.y1)
        return bool(np.count_nonzero(odd & (xi > x)) & 1)


class _SegmentField:
    """Distance queries against the union of the graph's polylines."""

    __slots__ = ("a", "ab", "len2")

    def __init__(self, polylines: Sequence[np.ndarray], closed: Sequence[bool]):
        starts: List[np.ndarray] = []
        ends: List[np.ndarray] = []
        for pts, is_closed in zip(polylines, closed):
            if is_closed:
                starts.append(pts)
                ends.append(np.roll(pts, -1))
            else:
                starts.append(pts[:-1])
                ends.append(pts[1:])
        a = np.concatenate(starts)
        b = np.concatenate(ends)
        ab = b - a
        keep = np.abs(ab) > 0
        self.a = a[keep]
        self.ab = ab[keep]
        self.len2 = np.abs(self.ab) ** 2

    def distance(self, p: complex) -> float:
        ap = p - self.a
        t = (ap.real * self.ab.real + ap.imag * self.ab.imag) / self.len2
        np.clip(t, 0.0, 1.0, out=t)
        return float(np.min(np.abs(ap - t * self.ab)))


def _dedupe(pts: np.ndarray, tol: float) -> np.ndarray:
    """Drop consecutive near-duplicates, including a last == first repeat."""
    keep = [complex(pts[0])]
    for p in pts[1:]:
        if abs(p - keep[-1]) > tol:
            keep.append(complex(p))
    if len(keep) > 1 and abs(keep[0] - keep[-1]) <= tol:
        keep.pop()
    return np.asarray(keep, dtype=complex)


def _diameter(pts: np.ndarray) -> float:
    xy = np.column_stack([pts.real, pts.imag])
    if len(xy) < 2:
        return 0.0
    if len(xy) >= 3:
        try:
            hull = ConvexHull(xy)
            xy = xy[hull.vertices]
        except Exception:
            pass  # degenerate input, fall back to (decimated) brute force
    if len(xy) > 800:
        xy = xy[:: len(xy) // 800 + 1]
    return float(np.max(pdist(xy)))


def _resample_closed(loop: np.ndarray, n: int) -> np.ndarray:
    """Arc-length uniform resampling that keeps the starting vertex."""
    closed = np.append(loop, loop[0])
    s = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(closed)))])
    u = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.interp(u, s, closed.real) + 1j * np.interp(u, s, closed.imag)


def _nearest_segment(pts: np.ndarray, c: complex) -> int:
    a = pts
    ab = np.roll(pts, -1) - a
    ap = c - a
    len2 = np.maximum(np.abs(ab) ** 2, 1e-300)
    t = np.clip((ap.real * ab.real + ap.imag * ab.imag) / len2, 0.0, 1.0)
    return int(np.argmin(np.abs(ap - t * ab)))


def _insert_anchors(pts: np.ndarray, anchors: Sequence[complex], tol: float) -> np.ndarray:
    """Make each anchor an exact vertex, snapping when one is already close."""
    out = pts
    for c in anchors:
        i = int(np.argmin(np.abs(out - c)))
        if abs(out[i] - c) <= tol and i != 0:
            out = out.copy()
            out[i] = c
        else:
            j = _nearest_segment(out, c)
            out = np.insert(out, j + 1, c)
    return out


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class PieceId:
    """Symbolic name of a puzzle piece.

    `word` lists depth + 1 depth-0 sector labels: the sector of the point,
    of its image, and so on. Equality and hashing use (depth, word) only.
    `internal_angle` is an optional boundary angle (exact `Fraction` or
    float) of a point the piece was located at; it is excluded from
    comparison, but `geometry` uses it to pick the right inverse branch when
    the word alone is ambiguous.
    """

    depth: int
    word: Tuple[Label, ...]
    internal_angle: Optional[Union[Fraction, float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if len(self.word) != self.depth + 1:
            raise ValueError("word must list depth + 1 sector labels")


@dataclass
class PieceGeometry:
    """Realized boundary of a piece, in user coordinates.

    `boundary` is a closed polyline stored without repeating the first
    vertex; its first point sits on the piece's inner equipotential arc, at
    the low-angle corner. `contact_points` are the ray landing points on the
    boundary. `complete` is False when a pullback had to stop early, in
    which case `boundary` holds the portion that was recovered.
    """

    boundary: np.ndarray
    diameter: float
    contact_points: np.ndarray
    internal_interval: Tuple[Fraction, Fraction]
    complete: bool = True


@dataclass
class DepthZeroAtlas:
    """The depth-0 pieces of a spec: labels, transition counts, boundaries."""

    labels: Tuple[Label, ...]
    transitions: Dict[Label, Dict[Label, int]]
    landing_points: Dict[Label, Tuple[complex, complex]]
    polygons: Dict[Label, np.ndarray]

    def to_json(self, include_boundary: bool = False) -> dict:
        out = {
            "schema": "puzzle-atlas/1",
            "labels": [_label_json(lab) for lab in self.labels],
            "transitions": [
                {"from": _label_json(src), "to": _label_json(dst), "count": c}
                for src, row in self.transitions.items()
                for dst, c in row.items()
            ],
            "pieces": [
                {
                    "word": [_label_json(lab)],
                    "depth": 0,
                    "diameter": _diameter(self.polygons[lab]),
                }
                for lab in self.labels
            ],
        }
        if include_boundary:
            for entry, lab in zip(out["pieces"], self.labels):
                entry["boundary"] = _polyline_json(self.polygons[lab])
        return out


def _label_json(lab: Label) -> List[str]:
    return [str(lab[0]), str(lab[1])]


def _polyline_json(pts: np.ndarray) -> List[List[float]]:
    return [[float(z.real), float(z.imag)] for z in pts]


class PuzzleSpec:
    """Ray graph of one periodic internal angle, with its depth-0 pieces.

    Built by `build_spec` and immutable afterwards. Public attributes:

    poly, c0            the map and its superattracting fixed point
    theta               the marked internal angle
    d                   local degree at c0 (drives internal angles)
    degree              global degree (drives external angles)
    period              cycle length k of theta
    cycle               internal angle cycle, orbit order
    external_cycle      matched external angles, aligned with `cycle`
    internal_level      inner equipotential level, exact fraction
    external_level      outer equipotential potential (1)
    landing_points      cycle angle -> landing point, user coordinates
    labels              depth-0 sector labels, sorted by angle
    transitions         label -> {label: covering count} under the dynamics
    stability_defect    largest forward-invariance residual seen while
                        tracing the graph
    tol_graph           refusal distance for `locate`, user coordinates
    """

    def __init__(
        self,
        *,
        poly: Polynomial,
        c0: complex,
        theta: RationalAngle,
        d: int,
        degree: int,
        period: int,
        cycle: Tuple[RationalAngle, ...],
        external_cycle: Tuple[RationalAngle, ...],
        internal_level: Fraction,
        external_level: int,
        landing_points: Dict[RationalAngle, complex],
        labels: Tuple[Label, ...],
        transitions: Dict[Label, Dict[Label, int]],
        stability_defect: float,
        tol_graph: float,
        controls: TraceControls,
        polygons: Dict[Label, np.ndarray],
        contacts: Dict[Label, Tuple[complex, complex]],
        ext_sectors: Tuple[Label, ...],
        equip_int: np.ndarray,
        equip_ext: np.ndarray,
        rays_int: Dict[RationalAngle, np.ndarray],
        rays_ext: Dict[RationalAngle, np.ndarray],
    ):
        self.poly = poly
        self.c0 = complex(c0)
        self.theta = theta
        self.d = int(d)
        self.degree = int(degree)
        self.period = int(period)
        self.cycle = tuple(cycle)
        self.external_cycle = tuple(external_cycle)
        self.internal_level = internal_level
        self.external_level = external_level
        self.landing_points = dict(landing_points)
        self.labels = tuple(labels)
        self.transitions = transitions
        self.stability_defect = float(stability_defect)
        self.tol_graph = float(tol_graph)
        self.controls = controls
        self._polygons = polygons
        self._contacts = contacts
        self._ext_sectors = tuple(ext_sectors)
        self._int_anchors = tuple(lab[0] for lab in self.labels)
        self._ext_anchors = tuple(arc[0] for arc in self._ext_sectors)
        self._equip_int = equip_int
        self._equip_ext = equip_ext
        self._rays_int = rays_int
        self._rays_ext = rays_ext
        self._int_cast = _Cast(equip_int)
        self._ext_cast = _Cast(equip_ext)
        self._piece_casts = {lab: _Cast(p) for lab, p in polygons.items()}
        polylines = [equip_int, equip_ext]
        polylines += list(rays_int.values()) + list(rays_ext.values())
        closed = [True, True] + [False] * (len(polylines) - 2)
        self._segments = _SegmentField(polylines, closed)
        self._far_radius = 4.0 * (1.0 + float(np.max(np.abs(equip_ext))))

    def __repr__(self) -> str:
        return (
            f"PuzzleSpec(theta={self.theta}, period={self.period}, "
            f"d={self.d}, degree={self.degree}, pieces={len(self.labels)})"
        )


# --------------------------------------------------------------------------
# building the graph


def build_spec(
    poly,
    c0: complex,
    theta,
    *,
    n_equip: int = 360,
    tol_graph: float = 1e-7,
    controls: Optional[TraceControls] = None,
) -> PuzzleSpec:
    """Trace the ray graph of a periodic internal angle and cut the pieces.

    `theta` must be strictly periodic of period >= 2 under multiplication by
    the local degree at c0; preperiodic or fixed angles raise `InvalidAngle`.
    An external ray cycle landing at the same boundary points is searched
    among the angles of matching period (the smallest matching angle wins
    when a landing point is the endpoint of several rays). `RayFailure`
    wraps any tracing defeat, `LandingClash` a landing geometry that would
    make the graph pinch.
    """
    if not isinstance(poly, Polynomial):
        poly = Polynomial(poly)
    ctrl = controls or TraceControls()
    theta = as_angle(theta)
    d = superattracting_degree(poly, c0)
    preperiod, k = orbit_type(theta, d)
    if preperiod != 0 or k < 2:
        raise InvalidAngle(
            f"angle {theta} has preperiod {preperiod} and period {k} under "
            f"multiplication by {d}; the graph needs a strictly periodic "
            f"angle of period at least 2"
        )
    cycle = tuple(orbit(theta, d, k))
    v_int = Fraction(1, d ** (k - 1) - 1)
    D = poly.degree
    defects: List[float] = []

    # internal rays of the cycle, traced once on a shared grid
    try:
        fam_int = _RayFamily(poly, list(cycle), "internal", c0=c0, ctrl=ctrl)
        q_int = max(4, math.ceil(math.log(1e3 * float(v_int)) / math.log(d)))
        fam_int.trace(float(v_int) * float(d) ** (-q_int))
        fam_int.check_residuals()
        landing_norm = {a: fam_int.land(a) for a in cycle}
    except (ContinuationFailure, NoConvergence, NearCritical) as exc:
        raise RayFailure(theta, f"internal ray cycle failed: {exc}") from exc

    scale = 1.0 + max(abs(z) for z in landing_norm.values())
    for j, a in enumerate(cycle):
        nxt = cycle[(j + 1) % k]
        drift = abs(poly.eval_normalized(landing_norm[a]) - landing_norm[nxt])
        if drift > 1e-7 * scale:
            raise RayFailure(
                a, f"landing cycle is not forward invariant (drift {drift:.2e})"
            )
    pts_norm = [landing_norm[a] for a in cycle]
    for i in range(k):
        for j in range(i + 1, k):
            gap = abs(pts_norm[i] - pts_norm[j])
            if gap < _CLASH_TOL * scale:
                raise LandingClash(
                    f"internal rays {cycle[i]} and {cycle[j]} land {gap:.2e} "
                    f"apart; distinct graph rays must not share a landing point"
                )

    # external candidates: every angle of exact period k shares one grid
    den = D**k - 1
    cands: List[RationalAngle] = []
    seen = set()
    for p in range(1, den):
        a = RationalAngle(p, den)
        if a not in seen:
            seen.add(a)
            if orbit_type(a, D) == (0, k):
                cands.append(a)
    if not cands:
        raise RayFailure(theta, "no external angles of the matching period exist")
    try:
        fam_ext = _RayFamily(poly, cands, "external", ctrl=ctrl)
        q_ext = max(4, math.ceil(3.0 * math.log(10.0) / math.log(D)))
        fam_ext.trace(float(D) ** (-q_ext))
        fam_ext.check_residuals()
    except (ContinuationFailure, NoConvergence, NearCritical) as exc:
        raise RayFailure(theta, f"external candidate rays failed: {exc}") from exc

    target0 = landing_norm[cycle[0]]
    tails = fam_ext.grid[:, fam_ext.J]
    order = np.argsort(np.abs(tails - target0))
    matches: List[RationalAngle] = []
    ext_landing: Dict[RationalAngle, complex] = {}
    for idx in order[: min(8, len(order))]:
        a = fam_ext.angles[int(idx)]
        try:
            x = fam_ext.land(a)
        except (NoConvergence, ContinuationFailure):
            continue
        ext_landing[a] = x
        if abs(x - target0) < 1e-7 * scale:
            matches.append(a)
    if not matches:
        raise RayFailure(
            theta, "no external ray of the matching period lands at the marked point"
        )
    xi0 = min(matches, key=lambda a: a.fraction)
    ext_cycle = tuple(orbit(xi0, D, k))
    for j, a in enumerate(ext_cycle):
        if a not in ext_landing:
            try:
                ext_landing[a] = fam_ext.land(a)
            except (NoConvergence, ContinuationFailure) as exc:
                raise RayFailure(a, f"external ray landing failed: {exc}") from exc
        want = landing_norm[cycle[j]]
        gap = abs(ext_landing[a] - want)
        if gap > 1e-6 * scale:
            raise RayFailure(
                a, f"external ray {a} misses its landing point by {gap:.2e}"
            )

    # equipotential curves, angle grids chosen so the cycle angles sit on them
    q_den = theta.denominator
    n_int = q_den * max(1, math.ceil(n_equip / q_den))
    try:
        fam_eq_int = _RayFamily(
            poly,
            [RationalAngle(i, n_int) for i in range(n_int)],
            "internal",
            c0=c0,
            ctrl=ctrl,
        )
        fam_eq_int.trace(float(v_int))
        fam_eq_int.check_residuals()
    except (ContinuationFailure, NoConvergence, NearCritical) as exc:
        raise RayFailure(theta, f"inner equipotential failed: {exc}") from exc
    n_ext = den * max(1, math.ceil(n_equip / den))
    try:
        fam_eq_ext = _RayFamily(
            poly,
            [RationalAngle(i, n_ext) for i in range(n_ext)],
            "external",
            ctrl=ctrl,
        )
        fam_eq_ext.trace(1.0)
        fam_eq_ext.check_residuals()
    except (ContinuationFailure, NoConvergence, NearCritical) as exc:
        raise RayFailure(theta, f"outer equipotential failed: {exc}") from exc

    ord_int = np.argsort([float(a) for a in fam_eq_int.angles])
    equip_int = np.asarray(fam_eq_int.to_user(fam_eq_int.grid[ord_int, fam_eq_int.J]))
    ord_ext = np.argsort([float(a) for a in fam_eq_ext.angles])
    equip_ext = np.asarray(poly.from_normalized(fam_eq_ext.grid[ord_ext, fam_eq_ext.J]))

    for fam in (fam_int, fam_ext, fam_eq_int, fam_eq_ext):
        res = fam.residuals()
        if res.size:
            defects.append(float(np.nanmax(res)))

    # ray polylines, user coordinates, from the equipotential to the landing
    landing_user = {a: complex(poly.from_normalized(landing_norm[a])) for a in cycle}
    j_top = fam_int._grid_level(float(v_int))
    if j_top is None:
        raise RayFailure(theta, "inner equipotential level is off the trace grid")
    rays_int: Dict[RationalAngle, np.ndarray] = {}
    for a in cycle:
        i = fam_int.angles.index(a)
        pts = np.asarray(fam_int.to_user(fam_int.grid[i, j_top:]))
        rays_int[a] = np.append(pts, landing_user[a])
    j_top_e = fam_ext._grid_level(1.0)
    if j_top_e is None:
        raise RayFailure(theta, "outer equipotential level is off the trace grid")
    rays_ext: Dict[RationalAngle, np.ndarray] = {}
    for a in ext_cycle:
        i = fam_ext.angles.index(a)
        pts = np.asarray(poly.from_normalized(fam_ext.grid[i, j_top_e:]))
        rays_ext[a] = np.append(pts, poly.from_normalized(ext_landing[a]))

    # sector labels in boundary order, with the wrap on the last one
    sorted_cycle = sorted(cycle, key=lambda a: a.fraction)
    labels: List[Label] = []
    for i, a in enumerate(sorted_cycle):
        b = sorted_cycle[(i + 1) % k]
        labels.append((a.fraction, b.fraction + (1 if i == k - 1 else 0)))
    labels_t: Tuple[Label, ...] = tuple(labels)

    xi_of = {cycle[j]: ext_cycle[j] for j in range(k)}
    xi_sorted = [xi_of[a] for a in sorted_cycle]
    gaps = [
        float((xi_sorted[(i + 1) % k].fraction - xi_sorted[i].fraction) % 1)
        for i in range(k)
    ]
    if min(gaps) <= 0 or abs(sum(gaps) - 1.0) > 1e-12:
        raise LandingClash(
            "external landing order disagrees with the boundary order; "
            "the graph would pinch"
        )
    ext_sectors: List[Label] = []
    for i in range(k):
        lo = xi_sorted[i].fraction
        hi = xi_sorted[(i + 1) % k].fraction
        ext_sectors.append((lo, hi if hi > lo else hi + 1))

    scale_user = 1.0 + float(np.max(np.abs(equip_ext)))

    def equip_slice(curve: np.ndarray, n: int, i_lo: int, i_hi: int) -> np.ndarray:
        if i_hi >= i_lo:
            idx = np.arange(i_lo, i_hi + 1)
        else:
            idx = np.concatenate([np.arange(i_lo, n), np.arange(0, i_hi + 1)])
        return curve[idx % n]

    polygons: Dict[Label, np.ndarray] = {}
    contacts: Dict[Label, Tuple[complex, complex]] = {}
    for i, lab in enumerate(labels_t):
        a_lo, a_hi = sorted_cycle[i], sorted_cycle[(i + 1) % k]
        xi_lo, xi_hi = xi_of[a_lo], xi_of[a_hi]
        inner = equip_slice(
            equip_int,
            n_int,
            a_lo.numerator * n_int // a_lo.denominator,
            a_hi.numerator * n_int // a_hi.denominator,
        )
        outer = equip_slice(
            equip_ext,
            n_ext,
            xi_lo.numerator * n_ext // xi_lo.denominator,
            xi_hi.numerator * n_ext // xi_hi.denominator,
        )[::-1]
        loop = np.concatenate(
            [
                inner,
                rays_int[a_hi][1:],
                rays_ext[xi_hi][::-1][1:],
                outer[1:],
                rays_ext[xi_lo][1:],
                rays_int[a_lo][::-1][1:-1],
            ]
        )
        polygons[lab] = _dedupe(loop, 1e-11 * scale_user)
        contacts[lab] = (landing_user[a_lo], landing_user[a_hi])

    transitions = {
        src: {
            dst: count
            for dst in labels_t
            if (count := _covering_count(d, src, dst)) > 0
        }
        for src in labels_t
    }

    return PuzzleSpec(
        poly=poly,
        c0=c0,
        theta=theta,
        d=d,
        degree=D,
        period=k,
        cycle=cycle,
        external_cycle=ext_cycle,
        internal_level=v_int,
        external_level=1,
        landing_points=landing_user,
        labels=labels_t,
        transitions=transitions,
        stability_defect=max(defects) if defects else float("nan"),
        tol_graph=tol_graph,
        controls=ctrl,
        polygons=polygons,
        contacts=contacts,
        ext_sectors=tuple(ext_sectors),
        equip_int=equip_int,
        equip_ext=equip_ext,
        rays_int=rays_int,
        rays_ext=rays_ext,
    )


def depth0_atlas(spec: PuzzleSpec) -> DepthZeroAtlas:
    """The depth-0 pieces of the spec as a standalone atlas."""
    return DepthZeroAtlas(
        labels=spec.labels,
        transitions={src: dict(row) for src, row in spec.transitions.items()},
        landing_points=dict(spec._contacts),
        polygons={lab: pts.copy() for lab, pts in spec._polygons.items()},
    )


def word_is_admissible(spec: PuzzleSpec, word: Sequence[Label]) -> bool:
    """Can each label follow the previous one, i.e. does f of the earlier
    piece meet the later piece?

    Two sector charts feed this relation.  Near the marked basin the inner
    boundary arc of a piece maps by angle multiplication by ``spec.d``; the
    outer arc maps by multiplication by the full degree ``spec.degree``.  A
    pair of labels is admissible when either chart carries the first sector
    across the second.  For polynomials with a single finite critical point
    the two charts agree and this reduces to ``spec.transitions``; with
    several critical points the outer chart is genuinely coarser, and
    itineraries of points far from the marked boundary (escaping orbits, or
    orbits through other bounded components) need it.

    ``spec.transitions`` itself keeps the finer inner-chart multiplicities,
    which is what piece counting and geometric pullback rely on.
    """
    index = {lab: i for i, lab in enumerate(spec.labels)}
    for j in range(len(word) - 1):
        a, b = word[j], word[j + 1]
        if a not in index or b not in index:
            return False
        if spec.transitions[a].get(b, 0) > 0:
            continue
        ea = spec._ext_sectors[index[a]]
        eb = spec._ext_sectors[index[b]]
        if _covering_count(spec.degree, ea, eb) > 0:
            continue
        return False
    return True


# --------------------------------------------------------------------------
# locating points


def _pick_sector(arcs, anchors, t, tol: float, j: int) -> int:
    """Index of the arc containing t, refusing near the anchors."""
    if _angular_gap(t, anchors) < tol:
        raise OnGraph(j)
    for i, arc in enumerate(arcs):
        if _arc_contains(arc, t):
            return i
    raise OnGraph(j)  # exactly on an endpoint; only exact hints get here


def _plane_label(spec: PuzzleSpec, w: complex, j: int):
    """Label of a point from its position in the plane.

    Returns (label, None) inside the annulus between the equipotentials,
    where the piece polygons decide, and (None, (base, t, arcs, anchors))
    once the point is past one of them, where the itinerary continues
    angularly: internal angles deepen inside the basin, external angles
    escape outside, and neither ever re-enters the annulus.
    """
    if spec._int_cast.contains(w):
        if w == spec.c0:
            raise OutsideRegion(j)
        psi = bottcher_internal(spec.poly, spec.c0, w)
        if psi == 0:
            raise OutsideRegion(j)
        t = (cmath.phase(psi) / TWO_PI) % 1.0
        return None, (spec.d, t, spec.labels, spec._int_anchors)
    if spec._ext_cast.contains(w):
        for lab in spec.labels:
            if spec._piece_casts[lab].contains(w):
                return lab, None
        raise OnGraph(j)
    phi = bottcher_external(spec.poly, w)
    t = (cmath.phase(phi) / TWO_PI) % 1.0
    return None, (spec.degree, t, spec._ext_sectors, spec._ext_anchors)


def _geometric_label(spec: PuzzleSpec, w: complex, j: int) -> Label:
    lab, angular = _plane_label(spec, w, j)
    if lab is not None:
        return lab
    base, t, arcs, anchors = angular
    return spec.labels[_pick_sector(arcs, anchors, t, spec.tol_graph, j)]


def locate(spec: PuzzleSpec, z: complex, depth: int, internal_angle=None) -> PieceId:
    """Itinerary of z through the depth-0 sectors, down to the given depth.

    The j-th letter is the sector of the j-th iterate: decided by the piece
    polygons while the iterate stays between the two equipotentials, and by
    its internal or external angle once it has left through one of them.
    Iterates closer than `tol_graph` to the graph (or, angularly, to a cycle
    angle) raise `OnGraph(j)` rather than guessing. The superattracting
    center has no sector and raises `OutsideRegion(j)`.

    `internal_angle` asserts that z sits on the basin boundary (or an
    internal ray) at that angle; the word is then computed exactly from the
    angle, which survives arbitrarily deep words when the hint is a
    `Fraction`. The hint is cross-checked against the geometric sector of z
    itself and stored on the returned `PieceId` for later branch selection.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    hint = internal_angle
    if isinstance(hint, RationalAngle):
        hint = hint.fraction
    if isinstance(hint, Fraction):
        hint = hint % 1
    elif hint is not None:
        hint = float(hint) % 1.0

    word: List[Label] = []
    w = complex(z)
    tracking = True  # still following the orbit in the plane
    t_hint = hint
    sym = None  # (base, t, arcs, anchors) once labels continue angularly
    for j in range(depth + 1):
        if (
            tracking
            and abs(w) <= spec._far_radius
            and spec._segments.distance(w) < spec.tol_graph
        ):
            raise OnGraph(j)
        if t_hint is not None:
            lab = spec.labels[
                _pick_sector(spec.labels, spec._int_anchors, t_hint, spec.tol_graph, j)
            ]
            if j == 0:
                geo = _geometric_label(spec, w, 0)
                if geo != lab:
                    raise ValueError(
                        f"internal-angle hint {internal_angle} names sector "
                        f"{lab} but the point sits in sector {geo}"
                    )
            t_hint = (t_hint * spec.d) % 1
        elif sym is not None:
            base, t, arcs, anchors = sym
            lab = spec.labels[_pick_sector(arcs, anchors, t, spec.tol_graph, j)]
            sym = (base, (t * base) % 1, arcs, anchors)
            tracking = False
        else:
            lab, angular = _plane_label(spec, w, j)
            if angular is not None:
                base, t, arcs, anchors = angular
                lab = spec.labels[_pick_sector(arcs, anchors, t, spec.tol_graph, j)]
                sym = (base, (t * base) % 1.0, arcs, anchors)
                tracking = False
        word.append(lab)
        if j < depth and tracking:
            w = spec.poly(w)
            if not abs(w) < 1e12:
                tracking = False
    return PieceId(depth=depth, word=tuple(word), internal_angle=hint)


# --------------------------------------------------------------------------
# symbolic piece algebra


def contains(a: PieceId, b: PieceId) -> bool:
    """True when piece b refines piece a: a's word is a prefix of b's.

    Purely symbolic, so no spec is needed; both ids must of course come
    from the same one. When a word is shared by two geometric components,
    the prefix test answers for the pair selected by matching hints; mixing
    hints from different branches is the caller's responsibility.
    """
    return a.depth <= b.depth and b.word[: a.depth + 1] == a.word


def image(spec: PuzzleSpec, piece: PieceId) -> PieceId:
    """The piece one level up: drop the first letter of the itinerary."""
    if piece.depth == 0:
        raise Depth0(
            "a depth-0 piece has no puzzle image; the map carries it across "
            "the whole graph region"
        )
    hint = piece.internal_angle
    if hint is not None:
        hint = (hint * spec.d) % 1
    return PieceId(depth=piece.depth - 1, word=piece.word[1:], internal_angle=hint)


def _critical_in_piece(spec: PuzzleSpec, point: complex, piece: PieceId) -> bool:
    """Does the critical point lie in the realized piece?

    The word test alone is not enough: a piece of depth n only spans levels
    up to internal_level / d^n inside the basin and potential 1/degree^n
    outside, so points that are too deep or too far out are excluded before
    their itinerary is consulted. Points within rounding of a pulled
    equipotential raise OnGraph rather than being counted either way.
    """
    w = complex(point)
    try:
        psi = bottcher_internal(spec.poly, spec.c0, w)
    except NotInBasin:
        psi = None
    if psi is not None:
        if psi == 0:
            return False  # the center sits behind the inner equipotential
        v = -math.log(abs(psi))
        roof = float(spec.internal_level) / spec.d**piece.depth
        if abs(v - roof) < 1e-9 * (1.0 + roof):
            raise OnGraph(0)
        if v > roof:
            return False
    else:
        g = green_potential(spec.poly, w).g
        if g > 0:
            roof = 1.0 / spec.degree**piece.depth
            if abs(g - roof) < 1e-9 * (1.0 + roof):
                raise OnGraph(0)
            if g > roof:
                return False
    return contains(piece, locate(spec, w, piece.depth))


def piece_degree(spec: PuzzleSpec, piece: PieceId) -> int:
    """Product of local degrees of the critical points inside the piece.

    Refusals from `locate` (a critical point on or near the graph) propagate,
    since no honest answer exists there.
    """
    deg = 1
    for crit in spec.poly.criticals:
        if _critical_in_piece(spec, crit.point, piece):
            deg *= crit.local_degree
    return deg


def _covering_circuits(spec: PuzzleSpec, piece: PieceId) -> int:
    """Degree of the map restricted to the piece (one plus branch excess)."""
    return 1 + sum(
        crit.local_degree - 1
        for crit in spec.poly.criticals
        if _critical_in_piece(spec, crit.point, piece)
    )


# --------------------------------------------------------------------------
# realizing geometry


class _NoInnerBranch(ValueError):
    """The word admits no inverse branch along the inner sectors."""


def _refined_interval(spec: PuzzleSpec, piece: PieceId) -> Tuple[Fraction, Fraction]:
    """Exact internal-angle interval of the piece on the basin boundary.

    Walks the word backwards, pulling the deepest sector arc through one
    inverse branch per letter. The branch is the lowest admissible one
    unless the piece carries an angle hint, in which case the branch
    containing the hint is taken; either way the arcs stay exact fractions.
    """
    word = piece.word
    hint = piece.internal_angle
    d = spec.d
    lo, hi = word[-1]
    for j in range(len(word) - 2, -1, -1):
        a, b = word[j]
        m_lo = math.ceil(d * a - lo)
        m_hi = math.floor(d * b - hi)
        if m_lo > m_hi:
            raise _NoInnerBranch(
                f"word {_word_str(word)} leaves the inner-sector transition "
                f"relation at step {j}; no piece with this word meets the "
                f"marked basin's boundary"
            )
        if hint is None:
            m = m_lo
        else:
            t = (hint * d**j) % 1
            x = a + ((t - a) % 1)
            y = lo + ((d * x - lo) % 1)
            m = round(d * x - y)
            if not m_lo <= m <= m_hi:
                raise ValueError(
                    f"internal-angle hint {piece.internal_angle} is inconsistent "
                    f"with word {_word_str(word)} at step {j}"
                )
        lo, hi = (lo + m) / d, (hi + m) / d
    shift = math.floor(lo)
    return lo - shift, hi - shift


def _equip_seed(spec: PuzzleSpec, angle_lo: Fraction, depth: int) -> complex:
    """Point of the depth-n inner equipotential at an exact boundary angle."""
    level = float(spec.internal_level / spec.d**depth)
    fam = _RayFamily(
        spec.poly, [RationalAngle(angle_lo)], "internal", c0=spec.c0, ctrl=spec.controls
    )
    fam.trace(level)
    fam.check_residuals()
    i = fam.angles.index(as_angle(angle_lo))
    return complex(fam.to_user(fam.grid[i, fam.J]))


def _normalized_derivative(poly: Polynomial, w: complex) -> complex:
    # the normalization is affine with the same scale on both sides, so the
    # derivative of the normalized iteration equals f' at the user point
    return poly.derivative(poly.from_normalized(w))


def _newton_inverse(
    poly: Polynomial, target: complex, w0: complex, tol: float
) -> Optional[complex]:
    w = complex(w0)
    for _ in range(50):
        err = poly.eval_normalized(w) - target
        if abs(err) < tol:
            return w
        dw = _normalized_derivative(poly, w)
        if abs(dw) < 1e-13:
            return None
        step = err / dw
        if not abs(step) < 1e8:
            return None
        w -= step
    if abs(poly.eval_normalized(w) - target) < 100 * tol:
        return w
    return None


def _continue_branch(
    poly: Polynomial,
    q_prev: complex,
    t_prev: complex,
    t_next: complex,
    tol: float,
    level: int,
):
    """One continuation step of the inverse branch, subdividing when unsure.

    Returns (intermediate points, endpoint) or None when the branch cannot
    be followed. The trust region keeps Newton from silently jumping to a
    different preimage: the accepted move must be commensurate with the
    target move divided by the local derivative.
    """
    d0 = abs(_normalized_derivative(poly, q_prev))
    if d0 > 1e-12:
        pred = q_prev + (t_next - t_prev) / _normalized_derivative(poly, q_prev)
        q = _newton_inverse(poly, t_next, pred, tol)
        trust = 8.0 * abs(t_next - t_prev) / d0 + 1e-12 * (1.0 + abs(q_prev))
        if q is not None and abs(q - q_prev) <= trust:
            return [], q
    if level >= 14:
        return None
    t_mid = 0.5 * (t_prev + t_next)
    left = _continue_branch(poly, q_prev, t_prev, t_mid, tol, level + 1)
    if left is None:
        return None
    mids_l, q_mid = left
    right = _continue_branch(poly, q_mid, t_mid, t_next, tol, level + 1)
    if right is None:
        return None
    mids_r, q_end = right
    return mids_l + [q_mid] + mids_r, q_end


def _pull_back_loop(
    spec: PuzzleSpec,
    parent_boundary: np.ndarray,
    contact_idx: Sequence[int],
    circuits: int,
    seed_user: complex,
):
    """Pull the parent boundary back through one inverse branch.

    The pulled curve winds `circuits` times over the parent loop before it
    closes. Returns (boundary, contacts, complete, note) in user
    coordinates; on failure the boundary holds the recovered portion.
    """
    poly = spec.poly
    target = np.asarray(poly.to_normalized(np.asarray(parent_boundary)), dtype=complex)
    n = len(target)
    scale = 1.0 + float(np.max(np.abs(target)))
    tol = 1e-11 * scale
    q0 = complex(poly.to_normalized(seed_user))
    if abs(poly.eval_normalized(q0) - target[0]) > 1e-6 * scale:
        exc = PullbackFailure(
            "seed does not sit over the start of the parent boundary"
        )
        exc.partial = None
        raise exc
    polished = _newton_inverse(poly, target[0], q0, tol)
    if polished is not None:
        q0 = polished
    out: List[complex] = [q0]
    hits: List[complex] = []
    contact_set = {int(i) % n for i in contact_idx}
    complete = True
    note = ""
    total = circuits * n
    budget = 64 * total + 4096
    t_prev = target[0]
    for step in range(1, total + 1):
        i_t = step % n
        t_next = target[i_t]
        res = _continue_branch(poly, out[-1], t_prev, t_next, tol, 0)
        if res is None:
            complete = False
            note = (
                f"lost the inverse branch near parent vertex {i_t} on lap "
                f"{step // n}"
            )
            break
        mids, q = res
        out.extend(mids)
        out.append(q)
        if i_t in contact_set:
            hits.append(q)
        t_prev = t_next
        if len(out) > budget:
            complete = False
            note = "pullback kept subdividing without converging"
            break
    if complete:
        gap = abs(out[-1] - out[0])
        if gap > 1e-6 * scale:
            complete = False
            note = f"pulled boundary fails to close (gap {gap:.2e})"
        else:
            out.pop()
    boundary = np.asarray(poly.from_normalized(np.asarray(out, dtype=complex)))
    contacts = (
        np.asarray(poly.from_normalized(np.asarray(hits, dtype=complex)))
        if hits
        else np.empty(0, dtype=complex)
    )
    return boundary, contacts, complete, note


def geometry(spec: PuzzleSpec, piece: PieceId, resolution: int = 512) -> PieceGeometry:
    """Realize the boundary polygon of a piece.

    Depth-0 pieces come straight from the traced graph. Deeper pieces pull
    their parent's boundary back through the inverse branch selected by the
    piece's angle hint (lowest admissible branch without one); the pulled
    curve winds over the parent once per covering degree. `PullbackFailure`
    carries the recovered portion in its `partial` attribute.

    The returned polyline always starts at the piece's inner equipotential
    corner of lowest angle, which is what lets the recursion seed each level
    exactly.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    if piece.depth == 0:
        lab = piece.word[0]
        if lab not in spec._polygons:
            raise ValueError(f"unknown label {lab}")
        scale = 1.0 + float(np.max(np.abs(spec._polygons[lab])))
        boundary = _resample_closed(spec._polygons[lab], resolution)
        boundary = _insert_anchors(boundary, spec._contacts[lab], 1e-9 * scale)
        return PieceGeometry(
            boundary=boundary,
            diameter=_diameter(boundary),
            contact_points=np.asarray(spec._contacts[lab]),
            internal_interval=lab,
            complete=True,
        )
    parent = geometry(spec, image(spec, piece), resolution=resolution)
    try:
        arc = _refined_interval(spec, piece)
    except _NoInnerBranch as exc:
        # Itineraries of orbits that wander away from the marked basin's
        # boundary (escaping orbits, or visits to other bounded components)
        # are valid words but have no inner-sector realization; the pullback
        # is anchored to inner sectors, so there is nothing to recover.
        failure = PullbackFailure(str(exc))
        failure.partial = None
        raise failure from exc
    try:
        circuits = _covering_circuits(spec, piece)
    except (OnGraph, OutsideRegion) as exc:
        failure = PullbackFailure(
            f"cannot settle the covering degree of the piece: a critical "
            f"point is unresolvable against the graph ({exc})"
        )
        failure.partial = None
        raise failure from exc
    try:
        seed = _equip_seed(spec, arc[0], piece.depth)
    except (ContinuationFailure, NoConvergence, NearCritical) as exc:
        failure = PullbackFailure(f"seed ray at angle {arc[0]} failed: {exc}")
        failure.partial = None
        raise failure from exc
    c_idx = [
        int(np.argmin(np.abs(parent.boundary - c))) for c in parent.contact_points
    ]
    boundary, hit_contacts, complete, note = _pull_back_loop(
        spec, parent.boundary, c_idx, circuits, seed
    )
    geom = PieceGeometry(
        boundary=boundary,
        diameter=_diameter(boundary) if len(boundary) >= 2 else 0.0,
        contact_points=hit_contacts,
        internal_interval=arc,
        complete=complete,
    )
    if not complete:
        failure = PullbackFailure(note)
        failure.partial = geom
        raise failure
    return geom


# --------------------------------------------------------------------------
# serialization


def pieces_to_json(
    spec: PuzzleSpec,
    pieces: Sequence[PieceId] = (),
    include_boundary: bool = False,
    resolution: int = 512,
) -> dict:
    """JSON-ready atlas dump, optionally with realized piece geometry."""
    out = {
        "schema": "puzzle-atlas/1",
        "polynomial": spec.poly.to_json(),
        "internal_angle": str(spec.theta),
        "period": spec.period,
        "internal_level": str(spec.internal_level),
        "external_cycle": [str(a) for a in spec.external_cycle],
        "labels": [_label_json(lab) for lab in spec.labels],
        "transitions": [
            {"from": _label_json(src), "to": _label_json(dst), "count": c}
            for src, row in spec.transitions.items()
            for dst, c in row.items()
        ],
        "pieces": [],
    }
    for piece in pieces:
        entry: dict = {
            "word": [_label_json(lab) for lab in piece.word],
            "depth": piece.depth,
        }
        try:
            geom = geometry(spec, piece, resolution=resolution)
        except PullbackFailure as exc:
            geom = getattr(exc, "partial", None)
            entry["complete"] = False
            entry["note"] = str(exc)
        if geom is not None:
            entry.setdefault("complete", geom.complete)
            entry["diameter"] = geom.diameter
            if include_boundary:
                entry["boundary"] = _polyline_json(geom.boundary)
        out["pieces"].append(entry)
    return out
