"""Disk model with a parabolic boundary fixed point: Blaschke map, the
d-adic tree of preimages of the center, parabolic rays along the tree, and
the attracting Fatou coordinate.

The map B(z) = (z^d + v)/(1 + v z^d) with v = (d-1)/(d+1) fixes 1 with
B'(1) = 1 and is a degree-d covering of the unit disk onto itself. The whole
open disk is the parabolic basin of 1, which makes it a clean combinatorial
model: angles d-fold under B exactly as they do on the boundary circle.

Numerically the parabolic point is doubly degenerate (B(1+h) = 1 + h +
O(h^3), two petals: the disk side and its exterior mirror). The Fatou
coordinate therefore goes through the half-plane coordinate zeta =
(z-1)/(z+1), in which the circle inversion symmetry B(1/z) = 1/B(z) becomes
exact oddness; u = zeta^2 then carries an ordinary one-petal parabolic map
u + A u^2 + ..., and the classical telescoping limit applies. The constants
A and the iterative residue beta are derived once per degree in exact
rational arithmetic.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .angles import ItineraryWord
from .errors import SectorAmbiguity, SlowConvergence
from .rays import RayPath

Word = Tuple[int, ...]


@dataclass(frozen=True)
class BlaschkeModel:
    """Evaluator for B(z) = (z^d + v)/(1 + v z^d), v = (d-1)/(d+1)."""

    d: int
    v: float

    def __call__(self, z):
        zd = np.asarray(z, dtype=complex) ** self.d if isinstance(z, np.ndarray) else z**self.d
        return (zd + self.v) / (1 + self.v * zd)

    def derivative(self, z):
        zd1 = np.asarray(z, dtype=complex) ** (self.d - 1) if isinstance(z, np.ndarray) else z ** (self.d - 1)
        zd = zd1 * z
        return self.d * zd1 * (1 - self.v**2) / (1 + self.v * zd) ** 2

    def preimage_in_sector(self, w: complex, j: int, tol_sector: float = 1e-10) -> complex:
        """The unique solution of B(z) = w in the open sector S_j.

        S_j is the wedge at 0 over the circle arc from omega^j to omega^{j+1}
        (omega = e^{2 pi i/d}); B is univalent from S_j onto the disk slit
        along [v, 1]. Solving B(z) = w means z^d = (w - v)/(1 - v w); the
        d-th roots sit one per sector, so picking the sector picks the root.
        """
        if not 0 <= j < self.d:
            raise ValueError(f"sector index {j} out of range for degree {self.d}")
        zeta = (w - self.v) / (1 - self.v * w)
        arg = cmath.phase(zeta) % (2 * math.pi)
        if min(arg, 2 * math.pi - arg) < tol_sector:
            raise SectorAmbiguity(
                f"preimage of {w} lies within {tol_sector:g} of a sector boundary"
            )
        r = abs(zeta) ** (1.0 / self.d)
        return r * cmath.exp(1j * (arg + 2 * math.pi * j) / self.d)


def blaschke_model(d: int) -> BlaschkeModel:
    """The degree-d disk model map, checked to be parabolic at 1."""
    if d < 2:
        raise ValueError("degree must be at least 2")
    model = BlaschkeModel(d=d, v=(d - 1) / (d + 1))
    if abs(model(1.0) - 1.0) > 1e-14 or abs(model.derivative(1.0) - 1.0) > 1e-13:
        raise AssertionError("Blaschke model lost its parabolic normalization")
    return model


@dataclass
class ParabolicTree:
    """Preimage tree of the center: levels maps words to points.

    The word acts by the shift: B(z_{e1...en}) = z_{e2...en}. Edges follow
    the tree geometry instead, joining each word to its one-symbol
    extensions (the ray through z_{e1...en} continues to z_{e1...en e}).
    """

    d: int
    levels: Dict[Word, complex]
    edges: Dict[Word, List[Word]] = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return max(len(w) for w in self.levels)

    def point(self, word: Sequence[int]) -> complex:
        return self.levels[tuple(word)]


def parabolic_tree(d: int, n_levels: int, tol_sector: float = 1e-10) -> ParabolicTree:
    """All tree points z_w for words of length <= n_levels.

    Level n is built from level n-1 by the defining recursion: z_{e1...en}
    is the preimage of z_{e2...en} lying in sector S_{e1}.
    """
    if n_levels < 0:
        raise ValueError("n_levels must be nonnegative")
    model = blaschke_model(d)
    levels: Dict[Word, complex] = {(): 0j}
    previous: List[Word] = [()]
    for _ in range(n_levels):
        current: List[Word] = []
        for suffix in previous:
            target = levels[suffix]
            for j in range(d):
                word = (j,) + suffix
                levels[word] = model.preimage_in_sector(target, j, tol_sector)
                current.append(word)
        previous = current
    edges: Dict[Word, List[Word]] = {}
    for word in levels:
        if word:
            edges.setdefault(word[:-1], []).append(word)
    return ParabolicTree(d=d, levels=levels, edges=edges)


def _word_prefixes(eps, n_levels: int) -> List[Word]:
    """Prefixes of eps of lengths 0..n_levels, from an ItineraryWord or ints."""
    if isinstance(eps, ItineraryWord):
        symbols = [eps.symbol_at(i) for i in range(n_levels)]
    else:
        symbols = [int(s) for s in eps]
        if len(symbols) < n_levels:
            raise ValueError(
                f"need at least {n_levels} symbols, got {len(symbols)}"
            )
        symbols = symbols[:n_levels]
    return [tuple(symbols[:n]) for n in range(n_levels + 1)]


def parabolic_ray_model(d: int, eps, n_levels: int, tol_sector: float = 1e-10) -> RayPath:
    """The parabolic ray of itinerary eps, sampled at the tree points.

    Returns the polyline z_(), z_{e1}, z_{e1 e2}, ... The Fatou coordinate
    takes the value -n at the n-th sample, so the reported potentials are
    0, -1, -2, ...; the residual is the worst error in the shift identity
    B(z_w) = z_{w'} with w' the first-symbol drop of w.
    """
    model = blaschke_model(d)
    prefixes = _word_prefixes(eps, n_levels)
    cache: Dict[Word, complex] = {(): 0j}

    def tree_point(word: Word) -> complex:
        if word not in cache:
            cache[word] = model.preimage_in_sector(
                tree_point(word[1:]), word[0], tol_sector
            )
        return cache[word]

    points = np.array([tree_point(w) for w in prefixes])
    residual = 0.0
    for w in prefixes[1:]:
        residual = max(residual, abs(model(tree_point(w)) - tree_point(w[1:])))
    return RayPath(
        kind="parabolic_model",
        angle=eps,
        potentials=-np.arange(n_levels + 1, dtype=float),
        points=points,
        landed=False,
        max_residual=residual,
    )


# ---------------------------------------------------------------------------
# Fatou coordinate


def _series_mul(a: List[Fraction], b: List[Fraction], order: int) -> List[Fraction]:
    out = [Fraction(0)] * (order + 1)
    for i, ai in enumerate(a[: order + 1]):
        if ai == 0:
            continue
        for j, bj in enumerate(b[: order + 1 - i]):
            out[i + j] += ai * bj
    return out


def _series_recip(a: List[Fraction], order: int) -> List[Fraction]:
    if a[0] == 0:
        raise ZeroDivisionError("series has no reciprocal")
    out = [Fraction(0)] * (order + 1)
    out[0] = 1 / a[0]
    for k in range(1, order + 1):
        acc = Fraction(0)
        for i in range(1, k + 1):
            if i < len(a):
                acc += a[i] * out[k - i]
        out[k] = -acc / a[0]
    return out


def _series_compose(outer: List[Fraction], inner: List[Fraction], order: int) -> List[Fraction]:
    if inner[0] != 0:
        raise ValueError("inner series must have zero constant term")
    out = [Fraction(0)] * (order + 1)
    for c in reversed(outer[: order + 1]):
        out = _series_mul(out, inner, order)
        out[0] += c
    return out


@lru_cache(maxsize=None)
def _abel_constants(d: int) -> Tuple[float, float]:
    """(A, beta) for the quotient map u -> u + A u^2 + B u^3 + ..., exact.

    Derivation: expand B(1+h) - 1 as a series in h (exact binomials), pass
    to the symmetry-invariant coordinate u(h) = (h/(2+h))^2 and match
    u(B_h(h)) = Psi(u(h)) term by term. The h^5 equation is redundant and is
    asserted as a structural check. beta = 1 - B/A^2 is the coefficient of
    the logarithmic correction in the Abel limit.
    """
    order = 6
    v = Fraction(d - 1, d + 1)
    num = [Fraction(comb(d, k)) for k in range(order + 1)]
    num[0] += v
    den = [v * Fraction(comb(d, k)) for k in range(order + 1)]
    den[0] += 1
    bh = _series_mul(num, _series_recip(den, order), order)
    bh[0] -= 1  # now the series of B(1+h) - 1
    if bh[0] != 0 or bh[1] != 1 or bh[2] != 0:
        raise AssertionError("unexpected local form at the parabolic point")
    phi = [Fraction(0)] + _series_recip([Fraction(2), Fraction(1)], order)[:order]
    u = _series_mul(phi, phi, order)
    v_series = _series_compose(u, bh, order)
    diff = [vi - ui for vi, ui in zip(v_series, u)]
    u2 = _series_mul(u, u, order)
    u3 = _series_mul(u2, u, order)
    psi2 = diff[4] / u2[4]
    if diff[5] != psi2 * u2[5]:
        raise AssertionError("quotient map mismatch at order 5")
    psi3 = (diff[6] - psi2 * u2[6]) / u3[6]
    beta = 1 - psi3 / psi2**2
    return float(psi2), float(beta)


@lru_cache(maxsize=None)
def _phi_raw_at_zero(d: int, n_iter: int) -> complex:
    return complex(_phi_raw(d, np.array([0j]), n_iter)[0])


def _phi_raw(d: int, z: np.ndarray, n_iter: int) -> np.ndarray:
    """Unnormalized Abel limit lim (w_n - n - beta log w_n) after n_iter steps."""
    model = blaschke_model(d)
    a_quad, beta = _abel_constants(d)
    zn = z.astype(complex)
    for _ in range(n_iter):
        zn = model(zn)
    zeta = (zn - 1) / (zn + 1)
    w = -1.0 / (a_quad * zeta**2)
    slow = w.real < n_iter / 2
    if np.any(slow):
        raise SlowConvergence(
            f"{int(np.sum(slow))} point(s) had not entered the parabolic "
            f"funnel after {n_iter} iterations (too close to the circle?)"
        )
    return w - n_iter - beta * np.log(w)


def fatou_coordinate_model(d: int, z, n_iter: int = 5000):
    """Attracting Fatou coordinate of the disk model, normalized to 0 at 0.

    Satisfies the Abel equation Phi(B(z)) = Phi(z) + 1 up to O(1/n_iter^2):
    the truncation bias of the telescoping limit is shared between the two
    sides, so the residual is far smaller than the bias itself.
    """
    arr = np.asarray(z, dtype=complex)
    scalar = arr.ndim == 0
    pts = arr.reshape(-1)
    if np.any(np.abs(pts) >= 1):
        raise ValueError("z must lie in the open unit disk")
    out = _phi_raw(d, pts, n_iter) - _phi_raw_at_zero(d, n_iter)
    if scalar:
        return complex(out[0])
    return out.reshape(arr.shape)
