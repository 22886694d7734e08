"""Exception taxonomy for polypuzzle.

Every failure mode that callers are expected to handle has its own class so
that CLI and tests can match on type rather than on message text. Exceptions
that carry diagnostic payloads (last good parameter, iterate index, angle)
store them as attributes.
"""

from __future__ import annotations


class PolypuzzleError(Exception):
    """Base class for all library errors."""


# ---------------------------------------------------------------------------
# potential / Boettcher coordinates


class TooDeep(PolypuzzleError):
    """Green potential at or below g_min: branch tracking unreliable."""

    def __init__(self, g: float, g_min: float):
        super().__init__(f"potential {g:.6g} <= g_min {g_min:.6g}")
        self.g = g
        self.g_min = g_min


class NotInBasin(PolypuzzleError):
    """Point does not converge to the superattracting fixed point."""


class DegenerateNormalization(PolypuzzleError):
    """Normalizing Taylor coefficient vanishes at the superattracting point."""


# ---------------------------------------------------------------------------
# angles


class DAdicAngle(PolypuzzleError):
    """Angle has a terminating base-d expansion; caller must pick one."""


class EmptyWord(PolypuzzleError):
    """Shift applied to an empty word."""


class InvalidAngle(PolypuzzleError):
    """Angle fails a precondition (wrong period, eventually fixed, ...)."""


# ---------------------------------------------------------------------------
# ray tracing


class ContinuationFailure(PolypuzzleError):
    """Newton continuation diverged; ``t_last`` is the last good potential."""

    def __init__(self, message: str, t_last: float):
        super().__init__(f"{message} (last good potential {t_last:.6g})")
        self.t_last = t_last


class NearCritical(PolypuzzleError):
    """Ray passes within tolerance of a precritical point of the potential."""


class NoConvergence(PolypuzzleError):
    """Landing iteration did not converge within its budget."""


class AmbiguousLanding(PolypuzzleError):
    """Terminal ray samples oscillate between several limit clusters."""


class BasinBoundaryTooClose(PolypuzzleError):
    """Internal ray continuation cannot approach the basin boundary further."""


class EmptyResult(PolypuzzleError):
    """Co-landing scan produced nothing; carries per-angle diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# parabolic model


class SectorAmbiguity(PolypuzzleError):
    """A tree preimage lies within tolerance of a sector boundary."""


class SlowConvergence(PolypuzzleError):
    """Fatou coordinate iteration too close to the disk boundary."""


# ---------------------------------------------------------------------------
# puzzles


class RayFailure(PolypuzzleError):
    """A graph ray could not be traced; ``angle`` identifies which."""

    def __init__(self, angle, message: str = ""):
        super().__init__(f"ray at angle {angle} failed{': ' + message if message else ''}")
        self.angle = angle


class LandingClash(PolypuzzleError):
    """Two graph rays land indistinguishably close: numerical trouble."""


class OnGraph(PolypuzzleError):
    """Point (or iterate ``j``) lies within tol_graph of the puzzle graph."""

    def __init__(self, j: int):
        super().__init__(f"iterate {j} lies on the puzzle graph")
        self.j = j


class OutsideRegion(PolypuzzleError):
    """Point (or iterate ``j``) left the puzzle region, so no piece exists."""

    def __init__(self, j: int):
        super().__init__(f"iterate {j} is outside the puzzle region")
        self.j = j


class Depth0(PolypuzzleError):
    """Operation needs positive depth (image of a depth-0 piece)."""


class PullbackFailure(PolypuzzleError):
    """Boundary arc pullback failed; partial geometry may be available."""


# ---------------------------------------------------------------------------
# nest combinatorics


class HorizonExceeded(PolypuzzleError):
    """Answer is not determined by the available orbit horizon."""

    def __init__(self, message: str, depth: int | None = None, horizon: int | None = None):
        detail = message
        if depth is not None:
            detail += f" (depth {depth}"
            detail += f", horizon {horizon})" if horizon is not None else ")"
        super().__init__(detail)
        self.depth = depth
        self.horizon = horizon


class Inconclusive(PolypuzzleError):
    """Recurrence classification impossible at this horizon."""


class DecencyViolation(PolypuzzleError):
    """A pullback component maps exactly onto a component: precision alarm."""


class MaxChildUnstable(PolypuzzleError):
    """The deepest-child maximizer changed between horizon/2 and horizon."""


# ---------------------------------------------------------------------------
# moduli


class DegenerateAnnulus(PolypuzzleError):
    """Annulus boundaries touch within tolerance; carries contact data."""

    def __init__(self, message: str, contacts=None):
        super().__init__(message)
        self.contacts = contacts if contacts is not None else []


class GridTooCoarse(PolypuzzleError):
    """Grid spacing too large to resolve the annulus."""


# ---------------------------------------------------------------------------
# CLI / configuration


class ConfigError(PolypuzzleError):
    """Run configuration failed validation."""
