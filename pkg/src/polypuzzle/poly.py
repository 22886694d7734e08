"""Polynomial core: evaluation, escape classification, Green potential, and
Boettcher coordinates at infinity and at a superattracting fixed point.

Construction affinely conjugates the input to monic centered form and records
the conjugacy; every reported point stays in the caller's coordinates. The
potential-theoretic routines run on the normalized polynomial, where the
Boettcher map at infinity is tangent to the identity.

The telescoping products used for both Boettcher coordinates satisfy their
functional equations identically (each factor of phi(f(z)) reappears in
phi(z)^D after the index shift), so the residual post-conditions hold by
construction and the only error source is floating-point rounding.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateNormalization, NotInBasin, TooDeep

TOL_ROOT = 1e-9
TOL_G = 1e-10
_HUGE = 1e100


@dataclass(frozen=True)
class CriticalPoint:
    point: complex
    local_degree: int  # >= 2


@dataclass(frozen=True)
class EscapeResult:
    status: str  # "escaped" or "bounded"
    iterations: int  # escape time, or max_iter for bounded orbits
    last_point: complex

    @property
    def escaped(self) -> bool:
        return self.status == "escaped"


@dataclass(frozen=True)
class PotentialValue:
    g: float  # Green potential, natural-log units, 0 for bounded points


class Polynomial:
    """Immutable degree-D >= 2 complex polynomial in user coordinates.

    `coefficients` are stored lowest degree first. `to_normalized` /
    `from_normalized` convert between user coordinates and the monic centered
    model used internally.
    """

    def __init__(self, coefficients: Sequence[complex], label: str = ""):
        coeffs = [complex(c) for c in coefficients]
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs.pop()
        if len(coeffs) < 3:
            raise ValueError("degree must be >= 2")
        self.coefficients: Tuple[complex, ...] = tuple(coeffs)
        self.degree: int = len(coeffs) - 1
        self.label = label or f"degree-{self.degree}"

        D = self.degree
        a_top = coeffs[-1]
        # A(z) = alpha z + beta sends the polynomial to monic centered form
        self._alpha = _principal_root(a_top, D - 1)
        self._beta = self._alpha * coeffs[-2] / (D * a_top)
        self._norm_coeffs = self._conjugated_coefficients()
        self._norm_high = np.array(self._norm_coeffs[::-1], dtype=complex)
        self._user_high = np.array(self.coefficients[::-1], dtype=complex)
        self._deriv_high = np.polyder(self._user_high)
        # plain-python copies: scalar Horner beats np.polyval per-call overhead
        self._user_high_list = [complex(c) for c in self._user_high]
        self._norm_high_list = [complex(c) for c in self._norm_high]
        self._deriv_high_list = [complex(c) for c in self._deriv_high]
        self.escape_radius_default = max(
            2.0, 1.0 + sum(abs(c) for c in self.coefficients)
        )
        self.criticals: Tuple[CriticalPoint, ...] = self._find_criticals()

    # -- construction helpers ------------------------------------------------

    def _conjugated_coefficients(self) -> Tuple[complex, ...]:
        """Coefficients (lowest first) of A o f o A^{-1}, monic centered."""
        alpha, beta = self._alpha, self._beta
        # q(w) = alpha * f((w - beta)/alpha) + beta, expanded exactly enough
        D = self.degree
        # compose via numpy polynomial arithmetic on high-first arrays
        inner = np.array([1.0 / alpha, -beta / alpha], dtype=complex)  # (w-beta)/alpha
        acc = np.array([0j])
        for c in self.coefficients[::-1]:  # Horner in the substituted variable
            acc = np.polymul(acc, inner)
            acc = np.polyadd(acc, np.array([c], dtype=complex))
        acc = alpha * acc
        acc = np.polyadd(acc, np.array([beta], dtype=complex))
        out = acc[::-1].tolist()
        out[-1] = 1.0 + 0j  # exact monicity (rounding may leave 1+1e-17j)
        if len(out) >= 2:
            out[-2] = 0j  # exact centering
        return tuple(out)

    def _find_criticals(self) -> Tuple[CriticalPoint, ...]:
        roots = np.roots(self._deriv_high)
        scale = 1.0 + max((abs(r) for r in roots), default=0.0)
        clusters: list[list[complex]] = []
        for r in sorted(roots, key=lambda z: (z.real, z.imag)):
            for cl in clusters:
                if abs(r - cl[0]) < 1e-5 * scale:
                    cl.append(r)
                    break
            else:
                clusters.append([r])
        crits = []
        for cl in clusters:
            m = len(cl)
            center = sum(cl) / m
            # the m-th derivative has a simple root there: polish with Newton
            poly_m = self._user_high
            for _ in range(m):
                poly_m = np.polyder(poly_m)
            poly_m1 = np.polyder(poly_m)
            z = center
            for _ in range(50):
                fz = np.polyval(poly_m, z)
                dz = np.polyval(poly_m1, z)
                if dz == 0:
                    break
                step = fz / dz
                z -= step
                if abs(step) < 1e-14 * scale:
                    break
            crits.append(CriticalPoint(complex(z), m + 1))
        total = sum(c.local_degree - 1 for c in crits)
        if total != self.degree - 1:
            raise ValueError(
                f"critical multiplicities sum to {total}, expected {self.degree - 1}"
            )
        return tuple(sorted(crits, key=lambda c: (c.point.real, c.point.imag)))

    # -- coordinates ---------------------------------------------------------

    def to_normalized(self, z):
        return self._alpha * z + self._beta

    def from_normalized(self, w):
        return (w - self._beta) / self._alpha

    @property
    def is_normalized(self) -> bool:
        return self._alpha == 1 and self._beta == 0

    # -- evaluation ----------------------------------------------------------

    def __call__(self, z):
        if isinstance(z, np.ndarray):
            return np.polyval(self._user_high, z)
        return _horner(self._user_high_list, z)

    def derivative(self, z):
        if isinstance(z, np.ndarray):
            return np.polyval(self._deriv_high, z)
        return _horner(self._deriv_high_list, z)

    def eval_normalized(self, w):
        if isinstance(w, np.ndarray):
            return np.polyval(self._norm_high, w)
        return _horner(self._norm_high_list, w)

    def orbit(self, z: complex, length: int) -> np.ndarray:
        """Points z, f(z), ..., f^(length)(z) as a complex array."""
        out = np.empty(length + 1, dtype=complex)
        current = complex(z)
        out[0] = current
        coeffs = self._user_high_list
        for k in range(length):
            if abs(current) > 1e100:  # keep escaped tails finite
                out[k + 1 :] = current
                break
            current = _horner(coeffs, current)
            out[k + 1] = current
        return out

    def __repr__(self) -> str:
        return f"Polynomial({self.label}, degree={self.degree})"

    # serialization: {"coeffs": [[re, im], ...], "label": str}, lowest first

    def to_json(self) -> str:
        return json.dumps(
            {
                "coeffs": [[c.real, c.imag] for c in self.coefficients],
                "label": self.label,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Polynomial":
        data = json.loads(text)
        coeffs = [complex(re, im) for re, im in data["coeffs"]]
        return cls(coeffs, label=data.get("label", ""))


def _horner(coeffs_high, z):
    acc = 0j
    for c in coeffs_high:
        acc = acc * z + c
    return acc


def _principal_root(w: complex, n: int) -> complex:
    if n == 1:
        return complex(w)
    return cmath.exp(cmath.log(w) / n)


def evaluate(poly: Polynomial, z):
    """Value of the polynomial at z (scalar or array), Horner-stable."""
    return poly(z)


def classify(
    poly: Polynomial,
    z: complex,
    escape_radius: Optional[float] = None,
    max_iter: int = 1000,
) -> EscapeResult:
    """Escape/bounded classification with minimal escape time.

    With escape_radius >= 1 + max|coeff| the modulus grows monotonically once
    past the radius, so `escaped(n)` is stable under larger max_iter.
    """
    R = poly.escape_radius_default if escape_radius is None else float(escape_radius)
    w = complex(z)
    for n in range(max_iter + 1):
        # boundary equality counts as escaped: |f| never decreases past R
        if abs(w) >= R:
            return EscapeResult("escaped", n, w)
        if n == max_iter:
            break
        w = complex(poly(w))
    return EscapeResult("bounded", max_iter, w)


def _log_ratio_normalized(poly: Polynomial, w: complex) -> float:
    """log |f(w) / w^D| for the normalized polynomial, stable for large |w|."""
    D = poly.degree
    acc = 0j
    for j in range(D - 1):  # a_{D-1} = 0 after centering
        c = poly._norm_coeffs[j]
        if c != 0:
            acc += c * w ** (j - D)
    return math.log(abs(1 + acc))


def green_potential(poly: Polynomial, z: complex, max_iter: int = 2000) -> PotentialValue:
    """Green potential G(z) = lim D^{-n} log|f^n(z)|, 0 for bounded orbits.

    Computed on the normalized polynomial by escaping first and then summing
    the telescoped corrections log|f(w)/w^D| with geometric weights, which
    keeps every term well scaled. G(f(z)) = D G(z) holds to rounding because
    both evaluations share the same telescoped series.
    """
    D = poly.degree
    w = poly.to_normalized(complex(z))
    R = max(2.0, 1.0 + sum(abs(c) for c in poly._norm_coeffs[:-1]))
    m = 0
    while abs(w) <= R:
        if m >= max_iter:
            return PotentialValue(0.0)
        w = poly.eval_normalized(w)
        m += 1
    g = math.log(abs(w))
    weight = 1.0
    for _ in range(200):
        if abs(w) > _HUGE:
            break
        weight /= D
        term = _log_ratio_normalized(poly, w)
        g += weight * term
        if weight * abs(term) < 1e-18:
            break
        w = poly.eval_normalized(w)
    return PotentialValue(g / D**m)


def bottcher_external(poly: Polynomial, z: complex, g_min: float = 0.5) -> complex:
    """Boettcher coordinate at infinity, phi(f(z)) = phi(z)^D.

    Returned in normalized coordinates (tangent to the identity at infinity;
    for monic centered input this is the caller's frame). The telescoping
    product with per-factor principal roots satisfies the functional equation
    identically; below g_min the factors leave the principal branch's comfort
    zone and the result is refused rather than silently wrong.
    """
    g = green_potential(poly, z).g
    if g <= g_min:
        raise TooDeep(g, g_min)
    D = poly.degree
    w = poly.to_normalized(complex(z))
    log_phi = cmath.log(w)
    weight = 1.0
    for _ in range(200):
        if abs(w) > _HUGE:
            break
        # f(w)/w^D = 1 + sum a_j w^(j-D), stable however large w gets
        ratio = 1.0 + 0j
        for j in range(D - 1):
            c = poly._norm_coeffs[j]
            if c != 0:
                ratio += c * w ** (j - D)
        weight /= D
        log_term = cmath.log(ratio)
        log_phi += weight * log_term
        if weight * abs(log_term) < 1e-18:
            break
        w = poly.eval_normalized(w)
    return cmath.exp(log_phi)


def local_expansion(poly: Polynomial, c0: complex, terms: int) -> np.ndarray:
    """Taylor coefficients of f(c0 + u) - c0 in powers of u (index = power)."""
    shifted = poly._user_high.copy()
    # Taylor shift by synthetic division: repeatedly divide by (z - c0)
    n = len(shifted)
    out = np.zeros(n, dtype=complex)
    work = shifted.copy()
    for k in range(n):
        rem = work[0]
        for j in range(1, len(work)):
            rem = rem * c0 + work[j]
        out[k] = rem
        # deflate: work <- work div (z - c0)
        new = np.empty(len(work) - 1, dtype=complex)
        acc = 0j
        for j in range(len(work) - 1):
            acc = acc * c0 + work[j]
            new[j] = acc
        work = new
        if len(work) == 0:
            break
    out[0] -= c0
    return out[:terms]


def superattracting_degree(poly: Polynomial, c0: complex, tol: float = 1e-8) -> int:
    """Local degree d at a superattracting fixed point c0."""
    if abs(poly(c0) - c0) > tol:
        raise ValueError(f"{c0} is not fixed")
    coeffs = local_expansion(poly, c0, poly.degree + 1)
    if abs(coeffs[0]) > tol or abs(coeffs[1]) > tol:
        raise ValueError(f"{c0} is not superattracting")
    for d in range(2, poly.degree + 1):
        if abs(coeffs[d]) > tol:
            return d
    raise DegenerateNormalization(f"no nonvanishing Taylor coefficient at {c0}")


def bottcher_internal(
    poly: Polynomial,
    c0: complex,
    z: complex,
    max_iter: int = 2000,
    tol: float = 1e-14,
) -> complex:
    """Boettcher coordinate on the superattracting basin of c0.

    psi(f(z)) = psi(z)^d with psi'(c0) = a_d^(1/(d-1)) (principal root), so
    the inverse coordinate has derivative 1 at 0. Values fill the unit disk;
    |psi| = exp(-v) with v the internal potential.

    Raises NotInBasin when the orbit does not converge to c0.
    """
    d = superattracting_degree(poly, c0)
    coeffs = local_expansion(poly, c0, d + 1)
    a_d = coeffs[d]
    if abs(a_d) < 1e-12:
        raise DegenerateNormalization("leading local coefficient vanishes")
    lam = _principal_root(a_d, d - 1)
    u = complex(z) - c0
    if u == 0:
        return 0j
    # iterate into the region where the factors are close to 1
    orbit = [u]
    v = u
    for _ in range(max_iter):
        v = poly(v + c0) - c0
        orbit.append(v)
        if abs(v) < tol:
            break
        if abs(v) > 1e50:
            raise NotInBasin(f"orbit of {z} escapes")
    else:
        raise NotInBasin(f"orbit of {z} does not reach {c0} in {max_iter} steps")
    log_psi = cmath.log(lam) + cmath.log(u)
    weight = 1.0
    for k in range(len(orbit) - 1):
        weight /= d
        ratio = orbit[k + 1] / (a_d * orbit[k] ** d)
        log_psi += weight * cmath.log(ratio)
        if weight * abs(cmath.log(ratio)) < 1e-18:
            break
    return cmath.exp(log_psi)


def internal_potential(
    poly: Polynomial, c0: complex, z: complex, max_iter: int = 2000
) -> float:
    """v(z) = -log|psi(z)| > 0 on the basin; v(f(z)) = d v(z)."""
    return -math.log(abs(bottcher_internal(poly, c0, z, max_iter=max_iter)))


def poly_from_json(text: str) -> Polynomial:
    return Polynomial.from_json(text)
