"""Ray tracing: external rays, internal (superattracting) rays, equipotentials.

The tracer works on a whole family of rays at once. A family of rational
angles is closed under multiplication by the relevant base (D outside, the
local degree d inside), so the functional equation

    f(R(theta, t)) = R(base * theta, base * t)

turns into a recurrence on a geometric grid of potentials |t_j| =
|t_stop| * base^((J - j)/M): the point of ray i at level j is a Newton solve
of f(z) = Z[sigma(i), j - M] seeded from Z[i, j - 1]. Seeds at the top of the
grid (deep in the Boettcher domain) come from Newton against the truncated
telescoping product for the coordinate itself. Pullback is contracting, so
seed inaccuracies damp out instead of accumulating.

Everything runs in normalized (monic centered) coordinates and is converted
back to user coordinates in the reported paths.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .angles import RationalAngle, as_angle, orbit_type, rotation_number, times_base
from .errors import (
    AmbiguousLanding,
    BasinBoundaryTooClose,
    ContinuationFailure,
    EmptyResult,
    NearCritical,
    NoConvergence,
)
from .poly import Polynomial, _horner, _principal_root, local_expansion, superattracting_degree


@dataclass
class TraceControls:
    """Knobs for the continuation; defaults are fine for gentle polynomials."""

    samples_per_division: int = 16
    seed_potential: float = 5.0  # |t| above which direct coordinate seeds are used
    report_potential: float = 2.5  # samples with |t| <= this go into the RayPath
    tol_newton: float = 1e-13
    max_newton: int = 60
    max_substep_depth: int = 18
    near_critical_tol: float = 1e-7
    landing_rounds: int = 6  # extra grid divisions allowed while landing
    trust_factor: float = 8.0  # Newton may move at most this many recent spacings
    residual_alarm: float = 1e-6  # reported residual above this fails the trace


@dataclass
class RayPath:
    kind: str  # "external" | "internal" | "parabolic_model"
    angle: RationalAngle
    potentials: np.ndarray  # signed potentials, ordered toward the landing end
    points: np.ndarray  # user coordinates, same order
    landed: bool = False
    landing_point: Optional[complex] = None
    max_residual: float = float("nan")

    @property
    def samples(self) -> List[Tuple[float, complex]]:
        return [(float(t), complex(z)) for t, z in zip(self.potentials, self.points)]

    def point_at(self, t: float) -> complex:
        """Sample at signed potential t (must be on the stored grid)."""
        idx = np.argmin(np.abs(self.potentials - t))
        if abs(self.potentials[idx] - t) > 1e-9 * (abs(t) + 1e-12):
            raise KeyError(f"potential {t} not on the sample grid")
        return complex(self.points[idx])


@dataclass
class EquipotentialPath:
    level: float  # |t| of the curve
    side: str  # "external" | "internal"
    angles: np.ndarray  # the sampled angles in [0,1)
    points: np.ndarray  # user coordinates, closed curve (first point not repeated)
    max_residual: float


@dataclass
class LandingResult:
    point: complex
    derivative: complex  # f' at the landing point
    cycle_multiplier: complex  # (f^p)' around the point's cycle
    period: int  # exact period of the landing point
    rotation: Tuple[int, int]  # combinatorial rotation number p/q of the angle cycle


@dataclass
class ColandingReport:
    internal_angle: RationalAngle
    landing_point: complex
    angles: List[RationalAngle]  # external angles co-landing at the point
    diagnostics: Dict[RationalAngle, str] = field(default_factory=dict)


def _angle_closure(angles: Sequence[RationalAngle], base: int) -> List[RationalAngle]:
    """Smallest list containing `angles` closed under multiplication by base."""
    seen = []
    seen_set = set()
    stack = [as_angle(a) for a in angles]
    while stack:
        a = stack.pop()
        if a in seen_set:
            continue
        seen.append(a)
        seen_set.add(a)
        stack.append(times_base(a, base))
    return seen


class _RayFamily:
    """Shared-grid continuation for a base-closed family of rays."""

    def __init__(
        self,
        poly: Polynomial,
        angles: Sequence[RationalAngle],
        side: str,
        c0: Optional[complex] = None,
        ctrl: Optional[TraceControls] = None,
    ):
        self.poly = poly
        self.side = side
        self.ctrl = ctrl or TraceControls()
        if side == "external":
            self.base = poly.degree
            self.angles = _angle_closure(angles, self.base)
            coeff_size = sum(abs(c) for c in poly._norm_coeffs[:-1])
            self.seed_potential = max(self.ctrl.seed_potential, math.log(2.0 + coeff_size) + 1.5)
            self._setup_external()
        elif side == "internal":
            if c0 is None:
                raise ValueError("internal rays need the superattracting point c0")
            self.c0_user = complex(c0)
            self.base = superattracting_degree(poly, c0)
            self.angles = _angle_closure(angles, self.base)
            self.seed_potential = max(self.ctrl.seed_potential, 4.0)
            self._setup_internal()
        else:
            raise ValueError(f"unknown side {side!r}")
        index = {a: i for i, a in enumerate(self.angles)}
        self.sigma = np.array(
            [index[times_base(a, self.base)] for a in self.angles], dtype=int
        )
        self.theta_float = np.array([float(a) for a in self.angles])

    # -- seed solvers --------------------------------------------------------

    def _setup_external(self):
        self._apply_high = list(self.poly._norm_high_list)
        self._deriv_high = np.polyder(self.poly._norm_high).tolist()
        self._apply_arr = np.array(self._apply_high)
        self._deriv_arr = np.array(self._deriv_high)

    def _setup_internal(self):
        """Work in the local chart u = z - c0.

        The shifted polynomial has no constant or linear term, so every term
        of local(u) scales with u and evaluation keeps full relative
        precision. Evaluating f globally and subtracting c0 instead would
        drown u below the rounding floor of ~1e-17 |c0|, and the outward
        march (which runs against the expanding direction near the center)
        amplifies exactly that kind of absolute error.
        """
        c0n = self.poly.to_normalized(self.c0_user)
        self.c0n = c0n
        d = self.base
        shifted = _shift_taylor(self.poly._norm_high_list, c0n)
        shifted[0] = 0j  # fixed point, exactly
        shifted[1] = 0j  # critical, exactly
        self.local_a = shifted[d]
        self.lam = _principal_root(self.local_a, d - 1) if d > 1 else 1.0 + 0j
        self._apply_high = shifted[::-1]
        deriv_asc = [j * shifted[j] for j in range(1, len(shifted))]
        self._deriv_high = deriv_asc[::-1]
        self._apply_arr = np.array(self._apply_high)
        self._deriv_arr = np.array(self._deriv_high)
        # ratio(u) = local(u) / (a_d u^d) = 1 + (T_{d+1}/a_d) u + ... as a
        # polynomial in u; the seed coordinate is built from it without ever
        # dividing orbit values.
        ratio_asc = [shifted[m] / self.local_a for m in range(d, len(shifted))]
        self._ratio_arr = np.array(ratio_asc[::-1])
        dratio_asc = [m * ratio_asc[m] for m in range(1, len(ratio_asc))]
        self._dratio_arr = np.array(dratio_asc[::-1] if dratio_asc else [0j])

    def _apply(self, v):
        """One dynamics step in the working chart (z outside, u inside)."""
        if isinstance(v, np.ndarray):
            return np.polyval(self._apply_arr, v)
        return _horner(self._apply_high, v)

    def _apply_deriv(self, v):
        if isinstance(v, np.ndarray):
            return np.polyval(self._deriv_arr, v)
        return _horner(self._deriv_high, v)

    def _to_norm(self, v):
        """Chart value -> normalized coordinates."""
        return v if self.side == "external" else self.c0n + v

    def to_user(self, v):
        """Chart value -> user coordinates."""
        return self.poly.from_normalized(self._to_norm(v))

    def _coordinate_and_derivative(self, v: np.ndarray):
        """(value, derivative) of the Boettcher coordinate in the chart.

        Truncated telescoping product with forward-mode derivative
        accumulation. Valid near the Boettcher center; used only for seeds.
        """
        if self.side == "external":
            return _phi_external(self.poly, v)
        return self._psi_local(v)

    def _psi_local(self, u: np.ndarray):
        """Internal Boettcher coordinate in the u chart, with derivative.

        Orbits converge doubly exponentially; entries are frozen once the
        remaining product tail is below rounding (or once they escape, which
        only happens for wayward Newton iterates - those report garbage and
        the caller's residual check rejects them).
        """
        d = self.base
        uk = np.asarray(u, dtype=complex).copy()
        duk = np.ones_like(uk)
        log_psi = np.log(uk) + cmath.log(self.lam)
        dlog = 1.0 / uk
        weight = 1.0
        for _ in range(200):
            live = (np.abs(uk) > 1e-150) & (np.abs(uk) < 1e10)
            if not np.any(live):
                break
            safe = np.where(live, uk, 0.0)
            ratio = np.polyval(self._ratio_arr, safe)  # 1 + O(u), never tiny here
            dratio = np.polyval(self._dratio_arr, safe)
            weight /= d
            log_ratio = np.where(live, np.log(ratio), 0.0)
            log_psi = log_psi + weight * log_ratio
            dlog = dlog + weight * np.where(live, dratio / ratio, 0.0) * duk
            if weight * float(np.max(np.abs(log_ratio))) < 1e-17:
                break
            duk = np.where(live, np.polyval(self._deriv_arr, safe) * duk, duk)
            uk = np.where(live, np.polyval(self._apply_arr, safe), uk)
        psi = np.exp(log_psi)
        return psi, psi * dlog

    def _seed_points(self, t_abs: float, indices: np.ndarray) -> np.ndarray:
        """Solve coordinate(v) = w for rays `indices` at potential |t| = t_abs."""
        sign = 1.0 if self.side == "external" else -1.0
        w = np.exp(sign * t_abs + 2j * math.pi * self.theta_float[indices])
        if self.side == "external":
            v = w.copy()
            floor = 1e-6
        else:
            v = w / self.lam
            floor = 0.0  # |u| sets the only safe scale near the center
        for _ in range(50):
            val, dval = self._coordinate_and_derivative(v)
            r = val - w
            if np.all(np.abs(r) < 1e-13 * np.abs(w)):
                break
            step = r / dval
            mag = np.abs(step)
            cap = 0.25 * (np.abs(v) + floor)
            scale = np.minimum(1.0, cap / np.maximum(mag, 1e-300))
            v = v - step * scale
        val, _ = self._coordinate_and_derivative(v)
        bad = ~(np.abs(val - w) <= 1e-8 * np.abs(w))
        if np.any(bad):
            i = int(indices[np.argmax(bad)])
            raise ContinuationFailure(
                f"seed solve failed for angle {self.angles[i]}", t_abs
            )
        return v

    # -- the march -----------------------------------------------------------

    def trace(self, t_stop_abs: float) -> None:
        """Fill the grid from the seed band down to |t| = t_stop_abs."""
        ctrl = self.ctrl
        M = ctrl.samples_per_division
        base = self.base
        # grid top at least seed_potential * base, so the whole top band sits
        # where the direct coordinate solve is trustworthy
        L = max(1, math.ceil(math.log(self.seed_potential * base / t_stop_abs) / math.log(base)))
        J = L * M
        n = len(self.angles)
        self.t_abs = t_stop_abs * np.power(float(base), (J - np.arange(J + 1)) / M)
        self.grid = np.full((n, J + 1), np.nan + 0j, dtype=complex)
        self.J = J
        self.M = M
        all_idx = np.arange(n)
        for j in range(min(M, J + 1)):
            self.grid[:, j] = self._seed_points(self.t_abs[j], all_idx)
        for j in range(M, J + 1):
            self._march_column(j)

    def _march_column(self, j: int) -> None:
        target = self.grid[self.sigma, j - self.M]
        seed = self.grid[:, j - 1]
        spacing = np.abs(self.grid[:, j - 1] - self.grid[:, j - 2])
        trust = self.ctrl.trust_factor * spacing + 1e-12 * (np.abs(seed) + 1e-12)
        z, ok = self._newton_march(seed, target, trust)
        self.grid[:, j] = z
        if not np.all(ok):
            for i in np.where(~ok)[0]:
                self.grid[i, j] = self._point_at(int(i), self.t_abs[j], 0)

    def _newton_march(self, seed: np.ndarray, target: np.ndarray, trust: np.ndarray):
        """Vectorized damped Newton for apply(v) = target; returns (v, converged).

        A converged root further than `trust` from its seed is rejected: past
        a branch point Newton happily hops onto a sibling preimage, which
        would silently splice a different ray into this one.
        """
        ctrl = self.ctrl
        v = seed.copy()
        tol = ctrl.tol_newton
        # inside, |target| is the only scale that matters near the center
        tol_scale = tol * (
            (1 + np.abs(target)) if self.side == "external" else np.abs(target)
        )
        floor = 0.1 if self.side == "external" else 0.0
        ok = np.zeros(len(v), dtype=bool)
        for _ in range(ctrl.max_newton):
            r = self._apply(v) - target
            ok = np.abs(r) < tol_scale
            if np.all(ok):
                break
            df = self._apply_deriv(v)
            df = np.where(np.abs(df) < 1e-300, 1e-300, df)
            step = r / df
            # damp: never move further than a fraction of the local scale
            cap = 0.5 * (np.abs(v) + floor)
            mag = np.abs(step)
            step = step * np.minimum(1.0, cap / np.maximum(mag, 1e-300))
            v = np.where(ok, v, v - step)
        ok = ok & (np.abs(v - seed) <= trust)
        return v, ok

    def _point_at(self, i: int, t_abs: float, depth: int) -> complex:
        """Scalar fallback: walk the ray down to t_abs with adaptive substeps."""
        ctrl = self.ctrl
        if depth > ctrl.max_substep_depth:
            raise ContinuationFailure(
                f"substepping exhausted for angle {self.angles[i]}", t_abs
            )
        j_grid = self._grid_level(t_abs)
        if j_grid is not None and not np.isnan(self.grid[i, j_grid].real):
            return complex(self.grid[i, j_grid])
        if t_abs >= self.seed_potential:
            return complex(self._seed_points(t_abs, np.array([i]))[0])
        # anchor: deepest already-known sample of this ray above t_abs
        known = np.where(
            (~np.isnan(self.grid[i].real)) & (self.t_abs > t_abs * (1 + 1e-12))
        )[0]
        if len(known) > 0:
            j_anchor = int(known[-1])
            t_cur = float(self.t_abs[j_anchor])
            z_cur = complex(self.grid[i, j_anchor])
        else:
            t_cur = self.seed_potential
            z_cur = complex(self._seed_points(t_cur, np.array([i]))[0])
        tol_floor = 1.0 if self.side == "external" else 0.0
        factor = t_abs / t_cur  # one shot first, then refine on failure
        budget = 2**ctrl.max_substep_depth
        min_df = float("inf")
        rate = self._anchor_rate(i, t_cur)  # |dz| per unit log-potential
        while t_cur > t_abs * (1 + 1e-12):
            t_next = max(t_abs, t_cur * factor)
            dlog = math.log(t_cur / t_next)
            target = self._target_for(i, t_next, depth)
            z_new, err = self._newton_scalar(z_cur, complex(target))
            jump = abs(z_new - z_cur)
            # same branch guard as the vectorized march
            within_trust = rate is None or jump <= (
                ctrl.trust_factor * rate * dlog + 1e-12 * (abs(z_cur) + 1e-12)
            )
            if err < ctrl.tol_newton * (tol_floor + abs(target)) * 10 and within_trust:
                if dlog > 0:
                    rate = jump / dlog
                t_cur, z_cur = t_next, z_new
                factor = min(math.sqrt(factor), 0.95)  # relax gently
                continue
            min_df = min(min_df, abs(self._apply_deriv(z_new)))
            factor = factor**0.5  # halve the log-step
            budget -= 1
            if budget <= 0 or factor > 1 - 1e-9:
                dmin = _min_critical_distance(self.poly, self._to_norm(z_cur))
                if dmin < ctrl.near_critical_tol or min_df < ctrl.near_critical_tol:
                    raise NearCritical(
                        f"ray {self.angles[i]} passes within {dmin:.2e} "
                        "of a critical point"
                    )
                raise ContinuationFailure(
                    f"continuation failed for angle {self.angles[i]}", t_cur
                )
        return z_cur

    def _anchor_rate(self, i: int, t_cur: float) -> Optional[float]:
        """Local |dz|/|dlog t| of ray i near t_cur, from adjacent grid samples."""
        j = self._grid_level(t_cur)
        if j is None or j == 0:
            return None
        a, b = self.grid[i, j], self.grid[i, j - 1]
        if np.isnan(a.real) or np.isnan(b.real):
            return None
        return abs(a - b) * self.M / math.log(self.base)

    def _newton_scalar(self, seed: complex, target: complex):
        """Scalar damped Newton for apply(v) = target; returns (v, residual)."""
        ctrl = self.ctrl
        v = seed
        floor = 0.1 if self.side == "external" else 0.0
        tol = ctrl.tol_newton * ((1.0 if self.side == "external" else 0.0) + abs(target))
        best = (v, float("inf"))
        for _ in range(ctrl.max_newton):
            r = self._apply(v) - target
            err = abs(r)
            if err < best[1]:
                best = (v, err)
            if err < tol:
                return v, err
            df = self._apply_deriv(v)
            if abs(df) < 1e-300:
                break
            step = r / df
            cap = 0.5 * (abs(v) + floor)
            if abs(step) > cap:
                step *= cap / abs(step)
            v = v - step
        return best

    def _grid_level(self, t_abs: float) -> Optional[int]:
        j = self.J - round(
            math.log(t_abs / self.t_abs[self.J]) / math.log(self.base) * self.M
        )
        if 0 <= j <= self.J and abs(self.t_abs[j] - t_abs) < 1e-9 * t_abs:
            return int(j)
        return None

    def _target_for(self, i: int, t_abs: float, depth: int) -> complex:
        """Point of the image ray at |t| * base, from grid or recursively."""
        return self._point_at(int(self.sigma[i]), t_abs * self.base, depth + 1)

    # -- public extraction -----------------------------------------------------

    def residuals(self) -> np.ndarray:
        """Relative defect of f(Z[i,j]) against Z[sigma(i), j-M], NaN where undefined.

        The difference is chart independent (the chart is a translation), so
        it can be formed directly on the stored values. It is scaled by the
        local magnitude: far out on an external ray the values grow like
        exp(potential) and an absolute defect would drown in rounding noise
        long before anything is actually wrong.
        """
        n, J, M = len(self.angles), self.J, self.M
        out = np.full((n, J + 1), np.nan)
        fz = self._apply(self.grid[:, M:])
        target = self.grid[self.sigma, : J + 1 - M]
        diff = np.abs(fz - target) / abs(self.poly._alpha)
        diff /= 1.0 + np.abs(target)
        out[:, M:] = diff
        return out

    def check_residuals(self) -> None:
        """Fail loudly if any filled grid entry violates the functional equation.

        A large residual means some Newton solve quietly attached itself to
        the wrong preimage branch; the result would look like a ray but not
        be one.
        """
        res = self.residuals()
        with np.errstate(invalid="ignore"):
            bad = res > self.ctrl.residual_alarm
        if np.any(bad):
            # report the shallowest offending level: past a branch point the
            # spliced-in samples satisfy the recurrence again, so only the
            # first inconsistency marks the obstruction
            j = int(np.argmax(np.any(bad, axis=0)))
            i = int(np.argmax(np.where(bad[:, j], res[:, j], -np.inf)))
            raise ContinuationFailure(
                f"functional equation residual {res[i, j]:.2e} for angle "
                f"{self.angles[i]}; the ray is obstructed near |t| = "
                f"{self.t_abs[j]:.3g}",
                float(self.t_abs[j]),
            )

    def ray_path(self, theta: RationalAngle, kind: str) -> RayPath:
        i = self.angles.index(as_angle(theta))
        res = self.residuals()[i]
        # report at least the last full division even when tracing stops deep
        report = max(self.ctrl.report_potential, float(self.t_abs[self.J]) * self.base)
        mask = self.t_abs <= report + 1e-12
        sign = 1.0 if self.side == "external" else -1.0
        pts = self.to_user(self.grid[i, mask])
        t_signed = sign * self.t_abs[mask]
        r = res[mask]
        max_res = float(np.nanmax(r)) if np.any(~np.isnan(r)) else float("nan")
        return RayPath(
            kind=kind,
            angle=self.angles[i],
            potentials=t_signed,
            points=np.asarray(pts),
            max_residual=max_res,
        )

    # -- landing ---------------------------------------------------------------

    def land(self, theta: RationalAngle) -> complex:
        """Landing point of the ray (normalized coordinates)."""
        theta = as_angle(theta)
        i = self.angles.index(theta)
        l, k = orbit_type(theta, self.base)
        if l > 0:
            x_per = self.land(times_base_iter(theta, self.base, l))
            return self._pull_back_landing(i, l, x_per)
        # landing points sit away from the chart center, so the periodic
        # Newton runs on plain normalized coordinates
        z_last = complex(self._to_norm(self.grid[i, self.J]))
        z_prev = complex(self._to_norm(self.grid[i, self.J - 1]))
        spacing = abs(z_last - z_prev) * self.M
        for round_ in range(self.ctrl.landing_rounds):
            z_star, err, dmin = _newton_periodic(self.poly, z_last, k)
            if err < 1e-11 and abs(z_star - z_last) < max(60 * spacing, 1e-9):
                return z_star
            # deepen the grid by one division and retry
            self._extend_one_division()
            z_last = complex(self._to_norm(self.grid[i, self.J]))
            z_prev = complex(self._to_norm(self.grid[i, self.J - 1]))
            spacing = abs(z_last - z_prev) * self.M
        raise NoConvergence(
            f"landing of angle {theta} did not stabilize "
            f"(last |t| = {self.t_abs[self.J]:.3e})"
        )

    def _pull_back_landing(self, i: int, l: int, x_per: complex) -> complex:
        """Newton on f^l(z) = x_per seeded from the ray tail."""
        z = complex(self._to_norm(self.grid[i, self.J]))
        for _ in range(80):
            w = z
            dw = 1.0 + 0j
            for _ in range(l):
                dw *= _horner(np.polyder(self.poly._norm_high).tolist(), w)
                w = self.poly.eval_normalized(w)
            r = w - x_per
            if abs(r) < 1e-12 * (1 + abs(x_per)):
                return z
            if dw == 0:
                break
            z = z - r / dw
        raise NoConvergence(f"preperiodic landing failed for angle {self.angles[i]}")

    def _extend_one_division(self):
        """Deepen the grid by one full division of the base."""
        M = self.M
        n = len(self.angles)
        new_t = self.t_abs[-1] * np.power(float(self.base), -np.arange(1, M + 1) / M)
        self.t_abs = np.concatenate([self.t_abs, new_t])
        self.grid = np.concatenate([self.grid, np.full((n, M), np.nan + 0j)], axis=1)
        J_old = self.J
        self.J = J_old + M
        for j in range(J_old + 1, self.J + 1):
            self._march_column(j)


def times_base_iter(theta: RationalAngle, base: int, n: int) -> RationalAngle:
    for _ in range(n):
        theta = times_base(theta, base)
    return theta


def _shift_taylor(coeffs_high: List[complex], c0: complex) -> List[complex]:
    """Taylor coefficients (ascending) of p(c0 + u) for high-first input."""
    work = list(coeffs_high)
    out = []
    for _ in range(len(coeffs_high)):
        rem = 0j
        for c in work:
            rem = rem * c0 + c
        out.append(rem)
        new = []
        acc = 0j
        for c in work[:-1]:
            acc = acc * c0 + c
            new.append(acc)
        work = new
        if not work:
            break
    return out


def _phi_external(poly: Polynomial, z: np.ndarray):
    """Truncated Boettcher coordinate at infinity and its derivative."""
    D = poly.degree
    zk = np.asarray(z, dtype=complex).copy()
    dzk = np.ones_like(zk)
    log_phi = np.log(zk)
    dlog = 1.0 / zk
    weight = 1.0
    a = poly._norm_coeffs
    dcoeffs = np.polyder(poly._norm_high)
    for _ in range(80):
        live = np.abs(zk) < 1e60
        if not np.any(live):
            break
        ratio = np.ones_like(zk)
        dratio = np.zeros_like(zk)
        for j in range(D - 1):
            c = a[j]
            if c != 0:
                ratio = ratio + c * zk ** (j - D)
                dratio = dratio + c * (j - D) * zk ** (j - D - 1)
        weight /= D
        log_phi = np.where(live, log_phi + weight * np.log(ratio), log_phi)
        dlog = np.where(live, dlog + weight * (dratio / ratio) * dzk, dlog)
        if weight * float(np.max(np.abs(np.log(ratio)))) < 1e-17:
            break
        dzk = np.where(live, np.polyval(dcoeffs, zk) * dzk, dzk)
        zk = np.where(live, poly.eval_normalized(zk), zk)
    phi = np.exp(log_phi)
    return phi, phi * dlog


def _newton_periodic(poly: Polynomial, seed: complex, k: int):
    """Newton for f^k(z) = z from seed; returns (z, residual, min|f'| along orbit)."""
    dpoly = np.polyder(poly._norm_high).tolist()
    z = seed
    dmin = float("inf")
    for _ in range(100):
        w = z
        dw = 1.0 + 0j
        dmin = float("inf")
        for _ in range(k):
            dfw = _horner(dpoly, w)
            dmin = min(dmin, abs(dfw))
            dw *= dfw
            w = poly.eval_normalized(w)
        r = w - z
        if abs(r) < 1e-13 * (1 + abs(z)):
            return z, abs(r), dmin
        denom = dw - 1
        if abs(denom) < 1e-300:
            break
        z = z - r / denom
    w = z
    for _ in range(k):
        w = poly.eval_normalized(w)
    return z, abs(w - z), dmin


def _min_critical_distance(poly: Polynomial, z: complex) -> float:
    crits = [poly.to_normalized(c.point) for c in poly.criticals]
    return min(abs(z - c) for c in crits) if crits else float("inf")


# ---------------------------------------------------------------------------
# public operations


def trace_ray_field(
    poly: Polynomial,
    angles: Sequence,
    t_min: float,
    side: str = "external",
    c0: Optional[complex] = None,
    ctrl: Optional[TraceControls] = None,
) -> Dict[RationalAngle, RayPath]:
    """Trace the base-closure of `angles` on one shared grid down to |t|=t_min.

    Sharing the grid makes samples of a ray and of its image ray directly
    comparable: the equivariance residual is evaluated at every interior
    sample and reported per ray in max_residual.
    """
    fam = _RayFamily(poly, [as_angle(a) for a in angles], side, c0=c0, ctrl=ctrl)
    fam.trace(abs(t_min))
    fam.check_residuals()
    kind = "external" if side == "external" else "internal"
    return {a: fam.ray_path(a, kind) for a in fam.angles}


def trace_external_ray(
    poly: Polynomial,
    theta,
    t_min: float,
    ctrl: Optional[TraceControls] = None,
    land: bool = True,
) -> RayPath:
    """External ray of the given rational angle, sampled down to potential t_min."""
    if t_min <= 0:
        raise ValueError("t_min must be positive")
    theta = as_angle(theta)
    fam = _RayFamily(poly, [theta], "external", ctrl=ctrl)
    fam.trace(t_min)
    fam.check_residuals()
    path = fam.ray_path(theta, "external")
    if land:
        try:
            x = fam.land(theta)
        except (NoConvergence, ContinuationFailure, NearCritical):
            return path
        path.landed = True
        path.landing_point = complex(poly.from_normalized(x))
    return path


def trace_internal_ray(
    poly: Polynomial,
    c0: complex,
    theta,
    t_max: float,
    ctrl: Optional[TraceControls] = None,
    land: bool = True,
) -> RayPath:
    """Internal ray in the basin of c0, sampled out to potential t_max < 0."""
    if t_max >= 0:
        raise ValueError("t_max must be negative (internal potentials are < 0)")
    theta = as_angle(theta)
    fam = _RayFamily(poly, [theta], "internal", c0=c0, ctrl=ctrl)
    try:
        fam.trace(abs(t_max))
        fam.check_residuals()
    except ContinuationFailure as exc:
        if exc.t_last <= 4 * abs(t_max):
            raise BasinBoundaryTooClose(str(exc)) from exc
        raise
    path = fam.ray_path(theta, "internal")
    if land:
        try:
            x = fam.land(theta)
        except (NoConvergence, ContinuationFailure, NearCritical):
            return path
        path.landed = True
        path.landing_point = complex(poly.from_normalized(x))
    return path


def land_external_ray(
    poly: Polynomial, theta, ctrl: Optional[TraceControls] = None
) -> LandingResult:
    """Landing point of a periodic external ray, with derivative and rotation.

    The rotation number is the combinatorial one of the angle cycle: the
    cyclic order of {theta, D theta, ...} is preserved by multiplication and
    advances every slot by the same step p, giving p/q reduced.
    """
    theta = as_angle(theta)
    l, k = orbit_type(theta, poly.degree)
    if l != 0:
        raise ValueError(f"angle {theta} is not periodic (preperiod {l})")
    fam = _RayFamily(poly, [theta], "external", ctrl=ctrl)
    fam.trace(1e-3)
    fam.check_residuals()
    x = fam.land(theta)  # normalized coordinates
    # period of the landing point itself (may divide k)
    orbit = [x]
    for _ in range(k - 1):
        orbit.append(complex(poly.eval_normalized(orbit[-1])))
    period = k
    for p in range(1, k):
        if k % p == 0 and abs(orbit[p % k] - x) < 1e-9 * (1 + abs(x)):
            period = p
            break
    dpoly = np.polyder(poly._norm_high).tolist()
    cycle_mult = 1.0 + 0j
    for j in range(period):
        cycle_mult *= _horner(dpoly, orbit[j])
    x_user = complex(poly.from_normalized(x))
    deriv = complex(poly.derivative(x_user))
    cycle_angles = [theta]
    for _ in range(k - 1):
        cycle_angles.append(times_base(cycle_angles[-1], poly.degree))
    order = sorted(range(k), key=lambda i: float(cycle_angles[i]))
    slot = {i: s for s, i in enumerate(order)}
    perm = [slot[(i + 1) % k] for i in [order[s] for s in range(k)]]
    rot = rotation_number(perm)
    # verify the terminal approach is settled, not oscillating between limits
    tail = poly.from_normalized(fam.grid[fam.angles.index(theta), -3:])
    dists = np.abs(np.asarray(tail) - x_user)
    if not (dists[-1] <= dists[0] + 1e-12):
        raise AmbiguousLanding(f"terminal samples of angle {theta} do not settle")
    # normalized-coordinate multiplier equals the user one (conjugacy by affine map)
    return LandingResult(
        point=x_user,
        derivative=deriv,
        cycle_multiplier=complex(cycle_mult),
        period=period,
        rotation=rot,
    )


def equipotential(
    poly: Polynomial,
    v: float,
    n_samples: int = 360,
    side: str = "external",
    c0: Optional[complex] = None,
    ctrl: Optional[TraceControls] = None,
) -> EquipotentialPath:
    """Closed equipotential curve at |potential| = v, sampled at n_samples angles.

    The angle grid j/n is closed under multiplication by any base, so the
    whole curve is one ray-family trace; the reported residual is the
    functional-equation error of the outermost comparable level.
    """
    if v <= 0:
        raise ValueError("level must be positive")
    angles = [RationalAngle(j, n_samples) for j in range(n_samples)]
    fam = _RayFamily(poly, angles, side, c0=c0, ctrl=ctrl)
    fam.trace(v)
    fam.check_residuals()
    order = np.argsort(fam.theta_float)
    pts = fam.to_user(fam.grid[order, fam.J])
    res = fam.residuals()[:, fam.J]
    max_res = float(np.nanmax(res)) if np.any(~np.isnan(res)) else float("nan")
    return EquipotentialPath(
        level=v,
        side=side,
        angles=fam.theta_float[order],
        points=np.asarray(pts),
        max_residual=max_res,
    )


def colanding_report(
    poly: Polynomial,
    t,
    candidate_period_bound: int,
    c0: Optional[complex] = None,
    return_time: int = 1,
    ctrl: Optional[TraceControls] = None,
    tol_cluster: float = 1e-6,
) -> ColandingReport:
    """External angles of period dividing the bound that land at the landing
    point of the internal ray R_U(t).

    `return_time` > 1 treats c0 as superattracting for f^return_time (a
    superattracting cycle); internal rays are traced for that iterate while
    external rays stay rays of f itself.
    """
    t = as_angle(t)
    if c0 is None:
        c0 = _resolve_superattracting_center(poly, return_time)
    inner_poly = poly if return_time == 1 else iterate_polynomial(poly, return_time)
    inner = trace_internal_ray(inner_poly, c0, t, t_max=-1e-4, ctrl=ctrl, land=True)
    if not inner.landed:
        raise EmptyResult(
            f"internal ray {t} did not land", {t: "internal landing failed"}
        )
    x = inner.landing_point
    D = poly.degree
    denom = D**candidate_period_bound - 1
    diagnostics: Dict[RationalAngle, str] = {}
    hits: List[RationalAngle] = []
    candidates = [RationalAngle(m, denom) for m in range(denom)]
    fam = _RayFamily(poly, candidates, "external", ctrl=ctrl)
    fam.trace(1e-3)
    for a in fam.angles:
        try:
            xa = complex(poly.from_normalized(fam.land(a)))
        except (NoConvergence, ContinuationFailure, NearCritical) as exc:
            diagnostics[a] = f"landing failed: {type(exc).__name__}"
            continue
        if abs(xa - x) < tol_cluster:
            hits.append(a)
        else:
            diagnostics[a] = f"lands elsewhere (|dx| = {abs(xa - x):.2e})"
    if not hits:
        raise EmptyResult(
            f"no external ray of period dividing {candidate_period_bound} "
            f"lands at the landing point of internal angle {t}",
            diagnostics,
        )
    return ColandingReport(
        internal_angle=t, landing_point=x, angles=sorted(hits, key=float), diagnostics=diagnostics
    )


def _resolve_superattracting_center(poly: Polynomial, return_time: int = 1) -> complex:
    for c in poly.criticals:
        orbit = poly.orbit(c.point, return_time)
        if abs(orbit[-1] - c.point) < 1e-9:
            return c.point
    raise ValueError(
        f"no critical point of {poly.label} is fixed by f^{return_time}"
    )


def iterate_polynomial(poly: Polynomial, m: int) -> Polynomial:
    """Coefficients of the m-th iterate f^m as a Polynomial."""
    if m < 1:
        raise ValueError("m must be >= 1")
    result = np.array(poly.coefficients[::-1], dtype=complex)
    base = np.array(poly.coefficients[::-1], dtype=complex)
    for _ in range(m - 1):
        acc = np.array([0j])
        for c in base:
            acc = np.polymul(acc, result)
            acc = np.polyadd(acc, np.array([c]))
        result = acc
    return Polynomial(result[::-1].tolist(), label=f"{poly.label}^({m})")
