"""Orbit combinatorics over puzzle itineraries.

Everything in this module is word algebra. An orbit is reduced once to its
itinerary of depth-0 sector labels (an `OrbitTable`); after that, membership
of an iterate in a piece, entrance and return times, children and successors,
combinatorial accumulation and the whole enhanced-nest construction are
string matching over those label sequences. Pieces that share a word are not
distinguished here: the calculus runs on word classes, which is exactly the
information the itineraries carry.

Two resources bound every answer: the orbit horizon (how many iterates were
labelled) and the working depth (how long the words are). Results that depend
on them say so, either through an explicit (depth, horizon) stamp on the
returned object or by raising `HorizonExceeded` instead of guessing.

Degrees are computed honestly: the degree of the map on a piece counts every
tracked critical point whose itinerary matches the piece's word, including
criticals attracted to the marked basin or escaping to infinity. The
certificate bounds (delta^b and friends) count only the critical ends, so a
bystander critical showing up inside a working window is recorded as an
assumption violation rather than silently absorbed.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import (
    Dict,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .errors import (
    DecencyViolation,
    HorizonExceeded,
    Inconclusive,
    MaxChildUnstable,
    OnGraph,
    OutsideRegion,
)
from .puzzle import (
    Label,
    PieceId,
    PuzzleSpec,
    _label_json,
    _NoInnerBranch,
    _pick_sector,
    _plane_label,
    _refined_interval,
)

__all__ = [
    "OrbitTable",
    "TrackedCritical",
    "CriticalEnd",
    "CriticalOrbitTable",
    "Entrance",
    "ReturnTime",
    "Successor",
    "ChildScan",
    "SuccessorScan",
    "OmegaComb",
    "Classification",
    "PcResult",
    "BResult",
    "AResult",
    "NestStage",
    "NestRecord",
    "orbit_table",
    "critical_table",
    "piece_at",
    "first_entrance",
    "return_time",
    "refine_return_time",
    "children",
    "successors",
    "last_successor",
    "omega_comb",
    "classify_recurrence",
    "build_Pc",
    "operator_B",
    "operator_A",
    "find_nest_start",
    "enhanced_nest",
    "nest_record_to_json",
    "certificate_log",
]

_ALPHABET = string.ascii_uppercase + string.ascii_lowercase + string.digits
_GAP = "#"  # key character for refused (OnGraph / no-sector) iterates


# ---------------------------------------------------------------------------
# orbit tables


def _charmap(spec: PuzzleSpec) -> Mapping[Label, str]:
    if len(spec.labels) > len(_ALPHABET):
        raise ValueError("more depth-0 labels than key characters")
    return MappingProxyType({lab: _ALPHABET[i] for i, lab in enumerate(spec.labels)})


def _z_array(s: str) -> np.ndarray:
    """Z-function: z[i] = longest common prefix of s and s[i:], z[0] = len."""
    n = len(s)
    z = np.zeros(n, dtype=np.int64)
    if n == 0:
        return z
    z[0] = n
    l = r = 0
    for i in range(1, n):
        k = 0
        if i < r:
            k = min(r - i, int(z[i - l]))
        while i + k < n and s[k] == s[i + k]:
            k += 1
        z[i] = k
        if i + k > r:
            l, r = i, i + k
    return z


def _lcp_into(pattern: str, text: str) -> np.ndarray:
    """For each i, the longest common prefix of `pattern` and `text[i:]`.

    Refused indices never match, not even against each other, so gaps are
    mapped to distinct sentinels on the two sides before comparing.
    """
    p = pattern.replace(_GAP, "\x01")
    t = text.replace(_GAP, "\x02")
    z = _z_array(p + "\x00" + t)
    return z[len(p) + 1 :].copy()


@dataclass(frozen=True)
class OrbitTable:
    """Itinerary of one seed point, labelled to a fixed horizon.

    `labels[j]` is the depth-0 sector of the j-th iterate, or None when the
    iterate was refused (within graph tolerance, or the superattracting
    center). `flags` maps each refused index to a short reason. `key` encodes
    the same sequence as a string, one character per label and '#' at refused
    indices, so window comparisons run at C speed.

    The sequence agrees with `locate` wherever `locate` answers: for every
    depth below the first flagged index, `locate(spec, seed, depth).word`
    equals `labels[:depth + 1]`.
    """

    spec: PuzzleSpec = field(repr=False)
    seed: complex
    horizon: int
    labels: Tuple[Optional[Label], ...] = field(repr=False)
    flags: Mapping[int, str] = field(repr=False)
    key: str = field(repr=False)
    charmap: Mapping[Label, str] = field(repr=False)
    _lcp_cache: Dict[str, np.ndarray] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __len__(self) -> int:
        return self.horizon + 1

    def lcp(self, pattern_key: str) -> np.ndarray:
        """Longest common prefix of `pattern_key` with each suffix of `key`.

        The workhorse of every scan: an index i is an occurrence of the
        depth-n word at the start of the pattern exactly when lcp[i] > n,
        and a critical with that pattern sits inside the window piece
        [i, m] exactly when i + lcp[i] > m.
        """
        arr = self._lcp_cache.get(pattern_key)
        if arr is None:
            arr = _lcp_into(pattern_key, self.key)
            self._lcp_cache[pattern_key] = arr
        return arr

    @property
    def usable(self) -> int:
        """Number of consecutive clean labels from index 0."""
        first = min(self.flags) if self.flags else self.horizon + 1
        return first

    def word(self, start: int, stop: int) -> Tuple[Label, ...]:
        """labels[start:stop], refusing flagged or out-of-horizon indices."""
        if stop - 1 > self.horizon:
            raise HorizonExceeded(
                "itinerary window runs past the orbit horizon",
                depth=stop - 1 - start,
                horizon=self.horizon,
            )
        for j in range(start, stop):
            if self.labels[j] is None:
                raise OnGraph(j)
        return self.labels[start:stop]

    def piece(self, depth: int, start: int = 0) -> PieceId:
        """P_depth(f^start(seed)) as a symbolic piece."""
        return PieceId(depth=depth, word=self.word(start, start + depth + 1))

    def word_key(self, piece: PieceId) -> str:
        return _word_key(self.charmap, piece.word)


def _word_key(charmap: Mapping[Label, str], word: Sequence[Label]) -> str:
    try:
        return "".join(charmap[lab] for lab in word)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]} is not a depth-0 sector here") from exc


def _label_run(spec: PuzzleSpec, z: complex, horizon: int):
    """Label the orbit of z for horizon + 1 indices, the way locate would.

    Follows the same state machine as `locate`: plane positions decide while
    the iterate stays between the equipotentials, and the itinerary continues
    angularly once it has left through one of them. Refusals are recorded
    per index instead of raised, so a single grazing pass near the graph does
    not lose the rest of the orbit.
    """
    labels: List[Optional[Label]] = []
    flags: Dict[int, str] = {}
    w = complex(z)
    tracking = True
    sym = None
    for j in range(horizon + 1):
        lab: Optional[Label] = None
        if (
            tracking
            and abs(w) <= spec._far_radius
            and spec._segments.distance(w) < spec.tol_graph
        ):
            flags[j] = "on-graph"
        elif sym is not None:
            base, t, arcs, anchors = sym
            try:
                lab = spec.labels[_pick_sector(arcs, anchors, t, spec.tol_graph, j)]
            except OnGraph:
                flags[j] = "angle-near-cycle"
            sym = (base, (t * base) % 1.0, arcs, anchors)
        else:
            try:
                lab, angular = _plane_label(spec, w, j)
                if angular is not None:
                    base, t, arcs, anchors = angular
                    try:
                        lab = spec.labels[
                            _pick_sector(arcs, anchors, t, spec.tol_graph, j)
                        ]
                    except OnGraph:
                        lab = None
                        flags[j] = "angle-near-cycle"
                    sym = (base, (t * base) % 1.0, arcs, anchors)
                    tracking = False
            except OnGraph:
                flags[j] = "on-graph"
            except OutsideRegion:
                # the orbit hit the superattracting center, and stays there
                for i in range(j, horizon + 1):
                    flags[i] = "at-center"
                labels.extend([None] * (horizon + 1 - j))
                break
        labels.append(lab)
        if j < horizon and tracking:
            w = spec.poly(w)
            if not abs(w) < 1e12:
                tracking = False
    return labels, flags


def orbit_table(spec: PuzzleSpec, z: complex, horizon: int) -> OrbitTable:
    """Label the orbit of z to the horizon and freeze it for word matching."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    charmap = _charmap(spec)
    labels, flags = _label_run(spec, z, horizon)
    key = "".join(_GAP if lab is None else charmap[lab] for lab in labels)
    return OrbitTable(
        spec=spec,
        seed=complex(z),
        horizon=horizon,
        labels=tuple(labels),
        flags=MappingProxyType(flags),
        key=key,
        charmap=charmap,
    )


# ---------------------------------------------------------------------------
# critical points and ends


@dataclass(frozen=True)
class TrackedCritical:
    """One finite critical point of the polynomial, with its itinerary.

    `status` is "end" for criticals outside every preimage of the marked
    basin (the ones the combinatorics counts), "center" for the marked
    superattracting point itself, "attracted" for criticals that fall into
    the basin, and "escaping" for criticals that leave every bounded set.
    Attracted and escaping criticals still carry full itineraries; they can
    sit inside shallow pieces and then contribute honestly to map degrees.
    """

    point: complex
    local_degree: int
    status: str
    table: OrbitTable = field(repr=False)


@dataclass(frozen=True)
class CriticalEnd:
    """A class of critical points sharing every piece down to the merge depth.

    Criticals in one end cannot be separated by the puzzle, so the calculus
    treats them as a single critical point whose degree is the degree of the
    map on the shared pieces (one plus the sum of the local multiplicities).
    """

    name: str
    members: Tuple[TrackedCritical, ...]

    @property
    def degree(self) -> int:
        return 1 + sum(m.local_degree - 1 for m in self.members)

    @property
    def table(self) -> OrbitTable:
        return self.members[0].table

    @property
    def point(self) -> complex:
        return self.members[0].point


@dataclass(frozen=True)
class CriticalOrbitTable:
    """Itineraries of every finite critical point, grouped into ends.

    `ends` lists the critical ends (criticals that neither sit at the marked
    center, fall into its basin, nor escape), merged when their itineraries
    agree to the merge depth. `bystanders` keeps the excluded criticals with
    their own tables so that degree computations can still see them. `b` and
    `delta` are the two combinatorial constants all certificate bounds use.
    """

    spec: PuzzleSpec = field(repr=False)
    horizon: int
    merge_depth: int
    ends: Tuple[CriticalEnd, ...]
    bystanders: Tuple[TrackedCritical, ...]

    @property
    def b(self) -> int:
        return len(self.ends)

    @property
    def delta(self) -> int:
        return max((e.degree for e in self.ends), default=1)

    def end(self, c: Union[CriticalEnd, str, complex]) -> CriticalEnd:
        """Resolve an end by identity, name, or the position of a member."""
        if isinstance(c, CriticalEnd):
            return c
        if isinstance(c, str):
            for e in self.ends:
                if e.name == c:
                    return e
            raise ValueError(f"no critical end named {c!r}")
        z = complex(c)
        scale = 1.0 + max(abs(e.point) for e in self.ends)
        for e in self.ends:
            if any(abs(m.point - z) < 1e-7 * scale for m in e.members):
                return e
        raise ValueError(f"{z} is not a tracked critical end")

    def end_of_piece(self, piece: PieceId) -> CriticalEnd:
        """The unique end whose itinerary starts with the piece's word."""
        key = _word_key(_charmap(self.spec), piece.word)
        hits = [e for e in self.ends if e.table.key.startswith(key)]
        if not hits:
            raise ValueError("piece does not contain a critical end")
        if len(hits) > 1:
            names = ", ".join(e.name for e in hits)
            raise ValueError(
                f"piece word is shared by several critical ends ({names}); "
                f"deepen the word or lower the merge depth"
            )
        return hits[0]

    def criticals(self) -> Iterator[TrackedCritical]:
        for e in self.ends:
            yield from e.members
        yield from self.bystanders


def _basin_status(spec: PuzzleSpec, c: complex, probe: int) -> str:
    """Classify a critical point by where its orbit settles."""
    scale = 1.0 + abs(spec.c0)
    if abs(c - spec.c0) < 1e-9 * scale:
        return "center"
    w = complex(c)
    for _ in range(probe):
        if spec._int_cast.contains(w):
            return "attracted"
        if abs(w) > 4.0 * spec.poly.escape_radius_default:
            return "escaping"
        w = spec.poly(w)
    return "end"


def critical_table(
    spec: PuzzleSpec,
    horizon: int,
    merge_depth: int = 64,
    basin_probe: int = 4096,
) -> CriticalOrbitTable:
    """Build the per-critical itinerary tables and split them into ends.

    `basin_probe` bounds the orbit length used to decide whether a critical
    point falls into the marked basin or escapes; a critical that does
    neither within the probe is kept as an end, which can only make the
    certificate bounds more conservative. Ends whose itineraries agree on
    every index up to `merge_depth` are merged, since no working word that
    short can tell them apart.
    """
    tracked: List[TrackedCritical] = []
    for crit in spec.poly.criticals:
        status = _basin_status(spec, crit.point, basin_probe)
        table = orbit_table(spec, crit.point, horizon)
        tracked.append(
            TrackedCritical(
                point=crit.point,
                local_degree=crit.local_degree,
                status=status,
                table=table,
            )
        )
    tracked.sort(key=lambda t: (t.point.real, t.point.imag))

    free = [t for t in tracked if t.status == "end"]
    bystanders = tuple(t for t in tracked if t.status != "end")

    depth = min(merge_depth, horizon)
    groups: List[List[TrackedCritical]] = []
    for t in free:
        prefix = t.table.key[: depth + 1]
        for g in groups:
            if g[0].table.key[: depth + 1] == prefix and _GAP not in prefix:
                g.append(t)
                break
        else:
            groups.append([t])

    ends = tuple(
        CriticalEnd(name=f"c{i + 1}", members=tuple(g))
        for i, g in enumerate(groups)
    )
    return CriticalOrbitTable(
        spec=spec,
        horizon=horizon,
        merge_depth=depth,
        ends=ends,
        bystanders=bystanders,
    )


def piece_at(table: OrbitTable, start: int, depth: int) -> PieceId:
    """The depth-`depth` piece around the `start`-th iterate of the seed."""
    return table.piece(depth, start)


# ---------------------------------------------------------------------------
# degrees along words

def _piece_local_degree(crits: CriticalOrbitTable, window: str) -> int:
    """Degree of f on the piece whose word key is `window`.

    Riemann-Hurwitz on a disk: one plus the multiplicities of every critical
    point inside, bystanders included.
    """
    extra = 0
    for t in crits.criticals():
        if t.table.key.startswith(window):
            extra += t.local_degree - 1
    return 1 + extra


def _map_degree(crits: CriticalOrbitTable, key: str, steps: int) -> int:
    """Degree of f^steps on the piece whose full word key is `key`.

    A refused index anywhere in the word makes every window containing it
    untestable, so the product cannot be certified and the refusal is
    re-raised rather than absorbed as degree one.
    """
    gap = key.find(_GAP)
    if gap >= 0:
        raise OnGraph(gap)
    deg = 1
    for i in range(steps):
        deg *= _piece_local_degree(crits, key[i:])
    return deg


def _end_visits(
    crits: CriticalOrbitTable, key: str, steps: int
) -> Dict[str, int]:
    """How many of the first `steps` window pieces each end sits in."""
    counts: Dict[str, int] = {}
    for e in crits.ends:
        n = sum(
            1
            for i in range(steps)
            if any(m.table.key.startswith(key[i:]) for m in e.members)
        )
        if n:
            counts[e.name] = n
    return counts


def _bystander_hits(crits: CriticalOrbitTable, key: str, steps: int) -> List[str]:
    hits = []
    for t in crits.bystanders:
        if any(t.table.key.startswith(key[i:]) for i in range(steps)):
            hits.append(f"{t.status} critical at {t.point:.6g}")
    return hits


def _window_hits(
    scan: OrbitTable, pattern_key: str, d: int, steps: int
) -> np.ndarray:
    """Positions i < steps where the pattern sits in scan's window [i, d].

    The window piece at i has word scan.key[i : d + 1]; the pattern's point
    sits in it exactly when the pattern key extends that word, which the
    cached common-prefix array answers as i + lcp[i] > d. Equivalent to the
    startswith scans above on gap-free windows, but linear once per pattern.
    """
    lcp = scan.lcp(pattern_key)
    s = min(steps, len(lcp))
    idx = np.arange(s)
    return idx[idx + lcp[:s] > d]


def _map_degree_at(
    crits: CriticalOrbitTable, scan: OrbitTable, d: int, steps: int
) -> int:
    """`_map_degree` for the window key scan.key[: d + 1], via lcp arrays."""
    gap = scan.key.find(_GAP, 0, d + 1)
    if gap >= 0:
        raise OnGraph(gap)
    mult: Dict[int, int] = {}
    for t in crits.criticals():
        for i in _window_hits(scan, t.table.key, d, steps):
            mult[int(i)] = mult.get(int(i), 0) + t.local_degree - 1
    deg = 1
    for extra in mult.values():
        deg *= 1 + extra
    return deg


def _end_visits_at(
    crits: CriticalOrbitTable, scan: OrbitTable, d: int, steps: int
) -> Dict[str, int]:
    """`_end_visits` for the window key scan.key[: d + 1], via lcp arrays."""
    counts: Dict[str, int] = {}
    for e in crits.ends:
        seen: set = set()
        for m in e.members:
            seen.update(int(i) for i in _window_hits(scan, m.table.key, d, steps))
        if seen:
            counts[e.name] = len(seen)
    return counts


def _bystander_hits_at(
    crits: CriticalOrbitTable, scan: OrbitTable, d: int, steps: int
) -> List[str]:
    """`_bystander_hits` for the window key scan.key[: d + 1]."""
    hits = []
    for t in crits.bystanders:
        if len(_window_hits(scan, t.table.key, d, steps)):
            hits.append(f"{t.status} critical at {t.point:.6g}")
    return hits


def _base_visits_at(
    e0: CriticalEnd, scan: OrbitTable, d: int, steps: int
) -> int:
    """Windows among the first `steps` of scan.key[: d + 1] holding `e0`."""
    seen: set = set()
    for m in e0.members:
        seen.update(int(i) for i in _window_hits(scan, m.table.key, d, steps))
    return len(seen)


# ---------------------------------------------------------------------------
# entrances and returns


class Entrance(NamedTuple):
    """First entrance of an orbit into a piece, with its pullback.

    `piece` is the pullback along the entrance: the orbit's own word down to
    depth time + target depth. `degree` is the degree of f^time on it (None
    when no critical table was supplied), and `visits` counts, per critical
    end, the window pieces from start through arrival that contain it.
    """

    time: int
    piece: PieceId
    degree: Optional[int] = None
    visits: Optional[Mapping[str, int]] = None


def first_entrance(
    z_table: OrbitTable,
    target: PieceId,
    crits: Optional[CriticalOrbitTable] = None,
    first_return: bool = False,
) -> Entrance:
    """Minimal r with the r-th iterate inside the target piece.

    Entrances allow r = 0; pass `first_return=True` to demand r >= 1. The
    pullback piece L satisfies word(L) = itinerary[:r] + word(target), which
    is the itinerary of the seed itself down to depth r + depth(target).
    """
    n = target.depth
    tkey = z_table.word_key(target)
    lo = 1 if first_return else 0
    limit = z_table.horizon - n  # last index where a full window still fits
    if limit < lo:
        raise HorizonExceeded(
            "orbit horizon shorter than one target window",
            depth=n,
            horizon=z_table.horizon,
        )
    r = z_table.key.find(tkey, lo)
    if r < 0 or r > limit:
        raise HorizonExceeded(
            "no entrance into the target within the horizon",
            depth=n,
            horizon=z_table.horizon,
        )
    gap = z_table.key.find(_GAP, lo, r + n)
    if gap >= 0:
        # an earlier window is untestable, so "first" cannot be certified
        raise OnGraph(gap)
    piece = z_table.piece(n + r)
    degree = None
    visits = None
    if crits is not None:
        degree = _map_degree_at(crits, z_table, n + r, r)
        visits = MappingProxyType(_end_visits_at(crits, z_table, n + r, r + 1))
    return Entrance(time=r, piece=piece, degree=degree, visits=visits)


class ReturnTime(NamedTuple):
    """Either exact(k) or a lower bound at_least(v) from a finite word."""

    kind: str  # "exact" | "at_least"
    value: int

    @property
    def is_exact(self) -> bool:
        return self.kind == "exact"

    @classmethod
    def exact(cls, k: int) -> "ReturnTime":
        return cls("exact", k)

    @classmethod
    def at_least(cls, v: int) -> "ReturnTime":
        return cls("at_least", v)


def return_time(a: PieceId) -> ReturnTime:
    """Smallest k > 0 with f^k(A) containing A, read off the word.

    The word of f^k(A) is the word of A with k letters dropped, so f^k(A)
    contains A exactly when the word overlaps itself at lag k, that is,
    when k is a period of the word. The smallest period is the length
    minus the longest proper border, which one failure-function pass
    finds. If even that period exceeds the depth, the word alone only
    shows the return time exceeds the depth, and the answer is a lower
    bound.
    """
    w = a.word
    n = a.depth
    fail = [0] * (n + 1)
    j = 0
    for i in range(1, n + 1):
        while j and w[i] != w[j]:
            j = fail[j - 1]
        if w[i] == w[j]:
            j += 1
        fail[i] = j
    k = (n + 1) - fail[n]
    if k <= n:
        return ReturnTime.exact(k)
    return ReturnTime.at_least(n + 1)


def refine_return_time(z_table: OrbitTable, depth: int) -> ReturnTime:
    """return_time of the seed's piece re-located at a larger depth."""
    return return_time(z_table.piece(depth))


# ---------------------------------------------------------------------------
# children and successors


class ChildScan(list):
    """List of child pieces, with the scan bounds that produced it.

    `complete` is False when flagged itinerary indices cut the scan short of
    the horizon; the listed children are still correct, there may just be
    more past the cut.
    """

    def __init__(self, items, depth: int, horizon: int, complete: bool):
        super().__init__(items)
        self.depth = depth
        self.horizon = horizon
        self.complete = complete


class Successor(NamedTuple):
    piece: PieceId
    time: int
    degree: int
    visits: Mapping[str, int]


class SuccessorScan(list):
    """List of `Successor` entries with scan bounds, like `ChildScan`."""

    def __init__(self, items, depth: int, horizon: int, complete: bool):
        super().__init__(items)
        self.depth = depth
        self.horizon = horizon
        self.complete = complete


def _occurrences(key: str, sub: str, lo: int, hi: int) -> Iterator[int]:
    """Indices k in [lo, hi] with key[k:].startswith(sub)."""
    k = key.find(sub, lo)
    while 0 <= k <= hi:
        yield k
        k = key.find(sub, k + 1)


def _homeo_window(
    crits: CriticalOrbitTable, e: CriticalEnd, n: int, k: int
) -> bool:
    """No critical end inside the k-1 pieces from P_{n+k-1}(f(c')) on.

    These are the windows e.labels[1+i : n+k+1] for i = 0 .. k-2; the map on
    each is then injective, so the composition is a homeomorphism. Reference
    implementation, quadratic in the time; the scans use `_crit_reach_max`.
    """
    key = e.table.key
    for i in range(k - 1):
        window = key[1 + i : n + k + 1]
        for other in crits.ends:
            if any(m.table.key.startswith(window) for m in other.members):
                return False
        for t in crits.bystanders:
            if t.table.key.startswith(window):
                return False
    return True


def _crit_reach(table: CriticalOrbitTable, crit_key: str, scan: OrbitTable):
    """reach[i] = i + lcp(crit_key, scan.key[i:]).

    The critical with that itinerary sits inside the window piece [i, m]
    exactly when reach[i] > m.
    """
    return np.arange(len(scan.key), dtype=np.int64) + scan.lcp(crit_key)


def _crit_reach_max(table: CriticalOrbitTable, scan: OrbitTable) -> np.ndarray:
    """Elementwise max of reach over every tracked critical, prefix-maxed.

    Entry j is the largest window end m such that some critical sits in a
    window piece starting in [1, j]; a time-k composition starting at index
    1 is a homeomorphism onto depth n exactly when entry k-1 is <= n+k.
    """
    cache = scan._lcp_cache
    tag = "\x00reachmax"
    arr = cache.get(tag)
    if arr is None:
        best = np.zeros(len(scan.key), dtype=np.int64)
        for t in table.criticals():
            np.maximum(best, _crit_reach(table, t.table.key, scan), out=best)
        arr = np.zeros(len(scan.key), dtype=np.int64)
        if len(arr) > 1:
            arr[1:] = np.maximum.accumulate(best[1:])
        cache[tag] = arr
    return arr


def _scan_limit(e: CriticalEnd, n: int, horizon: Optional[int] = None):
    """Largest admissible time for windows of depth n in the end's table."""
    hi = e.table.horizon if horizon is None else min(horizon, e.table.horizon)
    hi -= n
    complete = True
    gap = e.table.key.find(_GAP)
    if gap >= 0:
        hi = min(hi, gap - n - 1)
        complete = False
    return hi, complete


def children(
    spec: PuzzleSpec, table: CriticalOrbitTable, a: PieceId
) -> ChildScan:
    """All pieces around criticals that map over `a` by a one-piece margin.

    A child around the critical c' at time k is the piece of depth
    depth(a) + k around c' whose k-th image is `a`, such that the map from
    the piece one level up around f(c') is a homeomorphism onto `a`. The
    scan enumerates every critical end and every k the horizon allows.
    """
    e_a = table.end_of_piece(a)  # validates that a is a critical piece
    n = a.depth
    found: List[Tuple[int, PieceId]] = []
    complete = True
    for e in table.ends:
        hi, whole = _scan_limit(e, n)
        complete = complete and whole
        if hi < 1:
            continue
        occ = e.table.lcp(e_a.table.key)
        ks = np.nonzero(occ[1 : hi + 1] > n)[0] + 1
        if len(ks) == 0:
            continue
        reach = _crit_reach_max(table, e.table)
        good = reach[ks - 1] <= n + ks
        for k in ks[good]:
            found.append((int(k), e.table.piece(n + int(k))))
    found.sort(key=lambda item: (item[0], item[1].word))
    pieces: List[PieceId] = []
    for _, piece in found:
        if not any(p.word == piece.word for p in pieces):
            pieces.append(piece)
    return ChildScan(
        pieces,
        depth=n,
        horizon=table.horizon,
        complete=complete,
    )


def _successors_ref(
    spec: PuzzleSpec, table: CriticalOrbitTable, a: PieceId
) -> SuccessorScan:
    """Quadratic reference implementation of `successors`, kept for tests."""
    e = table.end_of_piece(a)
    n = a.depth
    akey = _word_key(_charmap(spec), a.word)
    key = e.table.key
    hi, complete = _scan_limit(e, n)
    items: List[Successor] = []
    for k in _occurrences(key, akey, 1, hi):
        window_key = key[: n + k + 1]
        visits = _end_visits(table, window_key, k + 1)
        if all(v <= 2 for v in visits.values()):
            items.append(
                Successor(
                    piece=e.table.piece(n + k),
                    time=k,
                    degree=_map_degree(table, window_key, k),
                    visits=MappingProxyType(visits),
                )
            )
    return SuccessorScan(items, depth=n, horizon=table.horizon, complete=complete)


def _successor_sweep(
    table: CriticalOrbitTable,
    e: CriticalEnd,
    n: int,
    horizon: Optional[int] = None,
):
    """Yield (time, visits dict, window-match positions) for each successor.

    Linear sweep over candidate return times. A visit of any end to an
    intermediate window forces an occurrence of the end's depth-n word, so
    candidate times and visit positions both live on the sparse occurrence
    lists, and each end's matches in the growing window are tracked by its
    three largest reaches seen so far.
    """
    hi, complete = _scan_limit(e, n, horizon)
    if hi < 1:
        return [], complete
    own = e.table.lcp(e.table.key)
    cand = np.nonzero(own[1 : hi + 1] > n)[0] + 1

    others = []
    for e2 in table.ends:
        lcp = e.table.lcp(e2.table.key) if e2 is not e else own
        pos = np.nonzero(lcp[: hi + n + 1] > n)[0]
        if e2 is e:
            pos = pos[pos > 0]
        reach = pos + lcp[pos]
        others.append((e2, pos, reach))

    out = []
    ptrs = [0] * len(others)
    top: List[List[Tuple[int, int]]] = [[] for _ in others]  # (reach, pos)
    for k in cand:
        m = n + int(k)
        ok = True
        counts: Dict[str, int] = {}
        matches: List[Tuple[int, int]] = []  # (window index, extra degree)
        for idx, (e2, pos, reach) in enumerate(others):
            p = ptrs[idx]
            t3 = top[idx]
            lim = k if e2 is e else k + 1
            while p < len(pos) and pos[p] < lim:
                t3.append((int(reach[p]), int(pos[p])))
                t3.sort(reverse=True)
                if len(t3) > 3:
                    t3.pop()
                p += 1
            ptrs[idx] = p
            hits = [t for t in t3 if t[0] > m]
            base = 2 if e2 is e else 0  # the window's two ends hold e itself
            if len(hits) + base > 2:
                ok = False
                break
            counts[e2.name] = len(hits) + base
            for r, i in hits:
                if i < k:
                    matches.append((i, e2.degree - 1))
        if not ok:
            continue
        matches.append((0, e.degree - 1))
        out.append((int(k), counts, matches))
    return out, complete


def successors(
    spec: PuzzleSpec, table: CriticalOrbitTable, a: PieceId
) -> SuccessorScan:
    """Returns of a critical piece to itself with spread-out critical visits.

    A successor at time k is the piece of depth depth(a) + k around the same
    critical end whose k-th image is `a` and whose window pieces meet each
    critical end at most twice. Both endpoints of the window contain the end
    itself, so twice is the least the definition can demand.
    """
    e = table.end_of_piece(a)
    n = a.depth
    swept, complete = _successor_sweep(table, e, n)
    items: List[Successor] = []
    for k, counts, matches in swept:
        degree = _degree_from_matches(table, e, n, k, matches)
        items.append(
            Successor(
                piece=e.table.piece(n + k),
                time=k,
                degree=degree,
                visits=MappingProxyType({nm: c for nm, c in counts.items() if c}),
            )
        )
    return SuccessorScan(items, depth=n, horizon=table.horizon, complete=complete)


def _degree_from_matches(
    table: CriticalOrbitTable,
    e: CriticalEnd,
    n: int,
    k: int,
    matches: List[Tuple[int, int]],
) -> int:
    """Degree of f^k on the depth n+k piece from end-match positions.

    `matches` lists (window index, multiplicity) pairs for end visits with
    index below k; bystander criticals are counted here directly since the
    sweep does not track them.
    """
    m = n + k
    mult: Dict[int, int] = {}
    for i, extra in matches:
        mult[i] = mult.get(i, 0) + extra
    for t in table.bystanders:
        reach = _crit_reach(table, t.table.key, e.table)
        pos = np.nonzero(reach[:k] > m)[0]
        for i in pos:
            mult[int(i)] = mult.get(int(i), 0) + t.local_degree - 1
    deg = 1
    for extra in mult.values():
        deg *= 1 + extra
    return deg


def last_successor(
    spec: PuzzleSpec, table: CriticalOrbitTable, a: PieceId
) -> Tuple[PieceId, int]:
    """The successor with the largest time, and that time.

    An empty scan means no successor was visible within the horizon, which
    says nothing about the dynamics; it is reported as such.

    Only the winning piece is materialised.  Words whose successor lists
    are enormous would otherwise cost quadratic memory here for entries
    nobody asked about.
    """
    e = table.end_of_piece(a)
    swept, _ = _successor_sweep(table, e, a.depth)
    if not swept:
        raise HorizonExceeded(
            "no successor within the horizon",
            depth=a.depth,
            horizon=table.horizon,
        )
    k, _counts, _matches = max(swept, key=lambda s: s[0])
    return e.table.piece(a.depth + k), k


# ---------------------------------------------------------------------------
# combinatorial accumulation and recurrence


@dataclass(frozen=True)
class OmegaComb:
    """Critical ends accumulated by an orbit, at a finite depth and horizon.

    Membership means: some iterate within the horizon (at a strictly
    positive time) has the end's depth-`depth` word as its itinerary window.
    Deeper tests can only shrink the set, so this is an upper approximation
    whose honesty is the stamp it carries.
    """

    names: frozenset
    depth: int
    horizon: int

    def __contains__(self, item) -> bool:
        if isinstance(item, CriticalEnd):
            return item.name in self.names
        return item in self.names

    def __iter__(self):
        return iter(sorted(self.names))

    def __len__(self) -> int:
        return len(self.names)


def omega_comb(
    table: CriticalOrbitTable,
    z_table: OrbitTable,
    depth: int,
    horizon: Optional[int] = None,
) -> OmegaComb:
    """Which critical ends the orbit keeps entering, to the given depth.

    An end is accumulated when the orbit enters its depth-`depth` piece at
    some positive time within the horizon; entering the deepest tested piece
    implies entering all the shallower ones at the same moment, so a single
    window length suffices. Refused indices would turn the absence of a
    match into a guess, so they raise instead: either the end's own word is
    unavailable at this depth, or the scanned orbit has a hole before the
    horizon.
    """
    hi = z_table.horizon if horizon is None else min(horizon, z_table.horizon)
    if depth > hi:
        raise HorizonExceeded(
            "accumulation depth exceeds the horizon", depth=depth, horizon=hi
        )
    hi -= depth
    gap = z_table.key.find(_GAP, 0, hi + depth + 1)
    if gap >= 0:
        raise Inconclusive(
            f"scanned orbit has a refused index at {gap}, before the "
            f"horizon {hi + depth}; absence of an entrance would be a guess"
        )
    names = set()
    for e in table.ends:
        if _GAP in e.table.key[: depth + 1]:
            raise Inconclusive(
                f"end {e.name} has no clean depth-{depth} word to test"
            )
        lcp = z_table.lcp(e.table.key)
        if len(lcp) > 1 and int(lcp[1 : hi + 1].max(initial=0)) > depth:
            names.add(e.name)
    return OmegaComb(names=frozenset(names), depth=depth, horizon=hi + depth)


@dataclass(frozen=True)
class Classification:
    """Outcome of the recurrence trichotomy for one critical end.

    `kind` is one of "star_property_witness", "self_recurrent" and
    "persistently_recurrent_evidence". Witnesses carry the case number of
    the bounded-degree argument that applies, the certified degree bound,
    and sample (time, degree) pairs actually measured along the orbit.
    Persistence evidence records, per accumulated end, whether its successor
    list gained nothing over the second half of the horizon.
    """

    kind: str
    depth: int
    horizon: int
    omega: OmegaComb
    case: Optional[int] = None
    degree_bound: Optional[int] = None
    samples: Tuple[Tuple[int, int], ...] = ()
    stabilized: Optional[Mapping[str, bool]] = None


def _entrance_samples(
    table: CriticalOrbitTable,
    z_table: OrbitTable,
    target: CriticalEnd,
    depth: int,
) -> Tuple[Tuple[int, int], ...]:
    """Measured (time, degree) of first entrances into a deepening nest."""
    out = []
    for m in range(max(1, depth // 2), depth + 1, 2):
        try:
            ent = first_entrance(z_table, target.table.piece(m), crits=table)
        except (HorizonExceeded, OnGraph):
            continue
        out.append((ent.time, ent.degree))
    return tuple(out)


def classify_recurrence(
    table: CriticalOrbitTable,
    c: Union[CriticalEnd, str, complex],
    depth: int = 8,
    horizon: Optional[int] = None,
) -> Classification:
    """Sort a critical end into the bounded-degree/persistence trichotomy.

    The three bounded-degree cases are tried in order: nothing critical
    accumulated; an accumulated end that itself accumulates nothing; a pair
    of accumulated ends one of which does not accumulate the other. When all
    accumulated ends accumulate each other the end is self-recurrent, and it
    is upgraded to persistence evidence when every accumulated end's
    successor list stops growing over the second half of the horizon.
    """
    e0 = table.end(c)
    hi = table.horizon if horizon is None else min(horizon, table.horizon)
    if e0.table.usable < 2 * (depth + 1) + 2:
        raise Inconclusive(
            f"itinerary of {e0.name} is clean for only {e0.table.usable} "
            f"indices, too short to test depth {depth}"
        )
    b, delta = table.b, table.delta

    omega = omega_comb(table, e0.table, depth, hi)
    if len(omega) == 0:
        samples = tuple(
            (k, _map_degree(table, e0.table.key[: k + 1], k))
            for k in range(1, min(depth, 6) + 1)
        )
        return Classification(
            kind="star_property_witness",
            case=1,
            degree_bound=delta,
            samples=samples,
            omega=omega,
            depth=depth,
            horizon=hi,
        )

    member_omegas = {
        name: omega_comb(table, table.end(name).table, depth, hi)
        for name in omega
    }
    for name in sorted(omega):
        if len(member_omegas[name]) == 0:
            return Classification(
                kind="star_property_witness",
                case=2,
                degree_bound=delta ** (b + 1),
                samples=_entrance_samples(table, e0.table, table.end(name), depth),
                omega=omega,
                depth=depth,
                horizon=hi,
            )
    for n1 in sorted(omega):
        for n2 in sorted(omega):
            if n1 not in member_omegas[n2]:
                return Classification(
                    kind="star_property_witness",
                    case=3,
                    degree_bound=delta ** (2 * b),
                    samples=_entrance_samples(table, e0.table, table.end(n2), depth),
                    omega=omega,
                    depth=depth,
                    horizon=hi,
                )

    stabilized: Dict[str, bool] = {}
    for name in sorted(omega):
        e = table.end(name)
        piece = e.table.piece(depth)
        half = _successor_times(table, e, piece, hi // 2)
        full = _successor_times(table, e, piece, hi)
        stabilized[name] = half == full
    kind = (
        "persistently_recurrent_evidence"
        if all(stabilized.values())
        else "self_recurrent"
    )
    return Classification(
        kind=kind,
        omega=omega,
        depth=depth,
        horizon=hi,
        stabilized=MappingProxyType(stabilized),
    )


def _successor_times(
    table: CriticalOrbitTable, e: CriticalEnd, a: PieceId, horizon: int
) -> Tuple[int, ...]:
    """Successor times of `a` visible within a clipped horizon."""
    swept, _ = _successor_sweep(table, e, a.depth, horizon)
    return tuple(k for k, _counts, _matches in swept)


# ---------------------------------------------------------------------------
# pullbacks of unions and the Pc construction


def _in_piece(z_table: OrbitTable, k: int, piece: PieceId) -> bool:
    """Is the k-th iterate in the piece? Raises when the window is unusable.

    A clean mismatch anywhere in the window decides the answer no matter
    what the refused indices hide; otherwise a refused index or a horizon
    shortfall leaves membership open and is raised, never guessed.
    """
    pkey = z_table.word_key(piece)
    window = z_table.key[k : k + piece.depth + 1]
    for i, ch in enumerate(window):
        if ch != _GAP and ch != pkey[i]:
            return False
    gap = window.find(_GAP)
    if gap >= 0:
        raise OnGraph(k + gap)
    if len(window) < len(pkey):
        raise HorizonExceeded(
            "membership window runs past the orbit horizon",
            depth=piece.depth,
            horizon=z_table.horizon,
        )
    return True


def _first_entrance_into_union(
    z_table: OrbitTable, components: Mapping[str, PieceId], lo: int = 1
) -> Tuple[int, str]:
    """Earliest time >= lo the orbit enters any component; (time, name).

    Raises when a refused index leaves an earlier window untestable: a
    "first" entrance is only certified if every window before it is clean.
    """
    best: Optional[Tuple[int, str]] = None
    for name, piece in components.items():
        tkey = z_table.word_key(piece)
        hi = z_table.horizon - piece.depth
        k = z_table.key.find(tkey, lo)
        if 0 <= k <= hi and (best is None or k < best[0]):
            best = (k, name)
    if best is None:
        raise HorizonExceeded(
            "orbit never enters the union within the horizon",
            horizon=z_table.horizon,
        )
    dmax = max(piece.depth for piece in components.values())
    gap = z_table.key.find(_GAP, lo, best[0] + dmax)
    if gap >= 0:
        raise OnGraph(gap)
    return best


def _pullback_into(z_table: OrbitTable, piece: PieceId, k: int) -> PieceId:
    """The piece around the seed pulled back along entrance time k."""
    return z_table.piece(k + piece.depth)


def _pull_union(
    z_table: OrbitTable, components: Mapping[str, PieceId]
) -> PieceId:
    k, name = _first_entrance_into_union(z_table, components)
    return _pullback_into(z_table, components[name], k)


def _pull_union_second(
    z_table: OrbitTable, components: Mapping[str, PieceId]
) -> PieceId:
    """Pullback along the second entrance into the union."""
    k1, _ = _first_entrance_into_union(z_table, components)
    k2, name2 = _first_entrance_into_union(z_table, components, lo=k1 + 1)
    return _pullback_into(z_table, components[name2], k2)


def _check_decent(components: Mapping[str, PieceId]) -> None:
    """Alarm when the union is not decent.

    Decency asks that no iterate of a component lands exactly on a
    component, and (niceness) that no iterate lands strictly inside one.
    Images of pieces are pieces, so both conditions reduce to occurrences
    of one component's word inside another's at a positive offset: the
    image f^l of p lands exactly on q when the offset is depth(p) -
    depth(q), strictly inside q at any smaller positive offset. The
    construction below produces decent unions by design; a violation here
    means the itineraries contradict that, which is a precision alarm, not
    a recoverable state.
    """
    letters: Dict = {}
    for p in components.values():
        for lab in p.word:
            letters.setdefault(lab, _ALPHABET[len(letters)])
    keys = {
        name: "".join(letters[lab] for lab in p.word)
        for name, p in components.items()
    }
    for name, p in components.items():
        for name2, q in components.items():
            off = p.depth - q.depth
            l = keys[name].find(keys[name2], 1)
            if l < 0:
                continue
            if l < off or (l == off and keys[name][l:] == keys[name2]):
                verb = "strictly inside" if l < off else "exactly onto"
                raise DecencyViolation(
                    f"f^{l} maps component {name} {verb} {name2}"
                )


class PcResult(NamedTuple):
    """The two piece families of the induction, with their certificates."""

    Lambda: Mapping[str, PieceId]
    LambdaPrime: Mapping[str, PieceId]
    certificates: Mapping[str, Mapping]


def build_Pc(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    I: PieceId,
    c0: Union[CriticalEnd, str, complex],
) -> PcResult:
    """Pieces P_c and P'_c around every accumulated end, pulled back from I.

    Runs the tower induction: H starts as I alone, J as the first-entrance
    pullbacks of H around the tower ends. Whenever some accumulated end
    first enters H outside J, it joins the tower with the pullback along its
    second entrance, J is rebuilt, and the test repeats. The tower can grow
    at most (number of ends - 1) times. On success every accumulated end
    gets P_c (from H, or its first-entrance pullback for ends outside the
    tower) and P'_c (same from J), each with a degree and visit certificate.
    """
    e0 = table.end(c0)
    omega = omega_comb(table, e0.table, I.depth)
    if e0.name not in omega:
        raise Inconclusive(
            f"{e0.name} does not re-enter its own depth-{I.depth} piece "
            f"within the horizon; the construction needs a recurrent base"
        )
    if table.end_of_piece(I) is not e0:
        raise ValueError("I must be a piece around the base critical end")
    participants = sorted(omega)

    tower = [e0.name]
    H: Dict[str, PieceId] = {e0.name: I}
    J: Dict[str, PieceId] = {
        e0.name: _pull_union(e0.table, H)
    }
    steps = 0
    while True:
        _check_decent(H)
        violator: Optional[Tuple[int, str]] = None
        for name in participants:
            if name in tower:
                continue
            z = table.end(name).table
            k, comp = _first_entrance_into_union(z, H)
            inside_J = any(_in_piece(z, k, q) for q in J.values())
            if not inside_J and (violator is None or k < violator[0]):
                violator = (k, name)
        if violator is None:
            break
        steps += 1
        if steps > max(table.b - 1, 0):
            raise DecencyViolation(
                "tower induction exceeded the critical-end budget, which "
                "contradicts the termination argument"
            )
        _, new_name = violator
        z = table.end(new_name).table
        new_piece = _pull_union_second(z, H)
        H = {name: J[name] for name in tower}
        H[new_name] = new_piece
        tower.append(new_name)
        J = {name: _pull_union(table.end(name).table, H) for name in tower}
    _check_decent(J)

    Lambda: Dict[str, PieceId] = {}
    LambdaPrime: Dict[str, PieceId] = {}
    for name in participants:
        if name in tower:
            Lambda[name] = H[name]
            LambdaPrime[name] = J[name]
        else:
            z = table.end(name).table
            Lambda[name] = _pull_union(z, H)
            LambdaPrime[name] = _pull_union(z, J)

    b, delta = table.b, table.delta
    cap = delta ** max(b * b - b, 0)
    certificates: Dict[str, Dict] = {}
    for name in participants:
        p = Lambda[name].depth - I.depth
        scan = table.end(name).table
        word_tail = Lambda[name].word[p:]
        deg = _map_degree_at(table, scan, Lambda[name].depth, p)
        base_hits = _base_visits_at(e0, scan, Lambda[name].depth, p)
        certificates[name] = {
            "time": p,
            "degree": deg,
            "degree_cap": cap,
            "degree_ok": deg <= cap,
            "maps_onto_I": word_tail == I.word,
            "base_visits": base_hits,
            "base_visits_ok": base_hits <= max(b - 1, 0) or p == 0,
            "tower": name in tower,
            "bystander_hits": _bystander_hits_at(
                table, scan, Lambda[name].depth, max(p, 1)
            ),
        }
    certificates["_construction"] = {
        "tower": tuple(tower),
        "steps": steps,
        "participants": tuple(participants),
        "depth": I.depth,
        "horizon": table.horizon,
    }
    return PcResult(
        Lambda=MappingProxyType(Lambda),
        LambdaPrime=MappingProxyType(LambdaPrime),
        certificates=MappingProxyType(certificates),
    )


# ---------------------------------------------------------------------------
# the operators


class BResult(NamedTuple):
    piece: PieceId
    time: int
    degree: int
    certificate: Mapping


class AResult(NamedTuple):
    piece: PieceId
    time: int
    degree: int
    certificate: Mapping


def _tau_maximizer(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    Lambda: Mapping[str, PieceId],
    horizon: int,
) -> Tuple[str, PieceId, int]:
    """Deepest child over all P_c, ties broken by the smallest word.

    Returns (end name, child piece, tau) where tau is the time from the
    child to its P_c. The word order makes the choice reproducible; any
    maximizer would do mathematically. Children of a piece at depth n are
    occurrences k of its word with a critically clean window, exactly the
    scan `children` runs; only the maximizers are ever built as pieces.
    """
    best: Optional[Tuple[int, str, int]] = None  # (tau, end name, end k)
    best_piece: Optional[PieceId] = None
    for name in sorted(Lambda):
        pc = Lambda[name]
        e_a = table.end_of_piece(pc)
        n = pc.depth
        for e in table.ends:
            hi, _whole = _scan_limit(e, n, horizon)
            if hi < 1:
                continue
            occ = e.table.lcp(e_a.table.key)
            ks = np.nonzero(occ[1 : hi + 1] > n)[0] + 1
            if len(ks) == 0:
                continue
            reach = _crit_reach_max(table, e.table)
            ks = ks[reach[ks - 1] <= n + ks]
            if len(ks) == 0:
                continue
            k = int(ks.max())
            child = e.table.piece(n + k)
            tau = child.depth - pc.depth
            if (
                best is None
                or tau > best[0]
                or (tau == best[0] and child.word < best_piece.word)
            ):
                best = (tau, name, k)
                best_piece = child
    if best is None:
        raise HorizonExceeded(
            "no child of any P_c within the horizon", horizon=horizon
        )
    tau, name, _ = best
    return name, best_piece, tau


def operator_B(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    I: PieceId,
    strict: bool = False,
) -> BResult:
    """First-entrance pullback of the deepest child among the P_c family.

    Builds the P_c pieces from I, finds the child realizing the maximal
    child-to-parent time tau over all of them, and pulls it back along the
    base end's first entrance. The certificate records the tau choice, the
    stability of that choice against halving the horizon, the degree and the
    base-end visit count along the pullback.
    """
    e0 = table.end_of_piece(I)
    pc = build_Pc(spec, table, I, e0)
    name, child, tau = _tau_maximizer(spec, table, pc.Lambda, table.horizon)
    stable = True
    try:
        half = _tau_maximizer(spec, table, pc.Lambda, table.horizon // 2)
        stable = half[1] == child and half[2] == tau
    except HorizonExceeded:
        stable = False
    if strict and not stable:
        raise MaxChildUnstable(
            f"deepest child changed when the horizon was halved "
            f"(tau {tau} at end {name})"
        )

    k, _ = _first_entrance_into_union(e0.table, {"child": child})
    piece = e0.table.piece(k + child.depth)
    time = piece.depth - I.depth
    degree = _map_degree_at(table, e0.table, piece.depth, time)
    b, delta = table.b, table.delta
    base_hits = _base_visits_at(e0, e0.table, piece.depth, time)
    certificate = {
        "base": e0.name,
        "tau": tau,
        "tau_end": name,
        "tau_child_word_depth": child.depth,
        "tau_stable": stable,
        "entrance_time": k,
        "degree_cap": delta ** (b * b),
        "degree_ok": degree <= delta ** (b * b),
        "base_visits": base_hits,
        "base_visits_ok": base_hits <= b,
        "bystander_hits": _bystander_hits_at(table, e0.table, piece.depth, time),
        "Pc": pc.certificates,
    }
    return BResult(piece=piece, time=time, degree=degree, certificate=certificate)


def operator_A(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    I: PieceId,
    b_result: Optional[BResult] = None,
) -> AResult:
    """Pullback through the B piece of a first-entrance collar around I.

    Takes W, the pullback of I along the first entrance of the base end's
    time-b(I) iterate, and pulls W back by that iterate inside the B piece.
    The resulting piece contains the base critical end, sits inside the B
    piece, and its word extends the B word.
    """
    e0 = table.end_of_piece(I)
    if b_result is None:
        b_result = operator_B(spec, table, I)
    bt = b_result.time
    zkey = e0.table.key[bt:]
    ikey = e0.table.word_key(I)
    hi = len(zkey) - 1 - I.depth
    k = zkey.find(ikey, 1)
    if not 0 < k <= hi:
        raise HorizonExceeded(
            "the B-time iterate never re-enters I within the horizon",
            depth=I.depth,
            horizon=table.horizon,
        )
    piece = e0.table.piece(bt + k + I.depth)
    time = bt + k
    degree = _map_degree_at(table, e0.table, piece.depth, time)
    b, delta = table.b, table.delta
    base_hits = _base_visits_at(e0, e0.table, piece.depth, time)
    certificate = {
        "base": e0.name,
        "b_time": bt,
        "w_entrance": k,
        "degree_cap": delta ** (b * b + b),
        "degree_ok": degree <= delta ** (b * b + b),
        "base_visits": base_hits,
        "base_visits_ok": base_hits <= b + 1,
        "word_extends_B": piece.word[: b_result.piece.depth + 1]
        == b_result.piece.word,
        "bystander_hits": _bystander_hits_at(table, e0.table, piece.depth, time),
    }
    return AResult(piece=piece, time=time, degree=degree, certificate=certificate)


# ---------------------------------------------------------------------------
# the enhanced nest


@dataclass(frozen=True)
class NestStage:
    """One completed stage of the enhanced nest.

    `h`/`h_prime` are the depths of the inner and outer pieces, `p`/`p_prime`
    the times down to the previous stage's inner piece, `deg`/`deg_prime`
    the measured degrees of those maps. `checks` holds the per-stage
    invariant verdicts (None when a lower-bound return time leaves an
    inequality undecided). `degenerate_contact` reports whether the two
    pieces share a boundary-arc endpoint on the marked boundary, the word
    level's view of a pinched annulus; None when the words have no
    inner-sector realization to compare.
    """

    index: int
    piece: PieceId
    piece_prime: PieceId
    h: int
    h_prime: int
    p: int
    p_prime: int
    deg: int
    deg_prime: int
    return_prev: ReturnTime
    checks: Mapping[str, Optional[bool]]
    degenerate_contact: Optional[bool]
    mu: Optional[float] = None
    certificate: Mapping = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class NestRecord:
    """The enhanced nest around one critical end, stage by stage.

    `complete` is False when a horizon shortfall stopped the construction
    early; the stages already built remain valid. `degree_cap` is the
    uniform bound all stage degrees are checked against; it depends only on
    the end count, the maximal end degree and tau.
    """

    base: str
    tau: int
    b: int
    delta: int
    degree_cap: int
    start: PieceId
    stages: Tuple[NestStage, ...]
    complete: bool
    horizon: int
    failure: Optional[str] = None

    @property
    def checks(self) -> Dict[str, Optional[bool]]:
        """Conjunction of each named check across completed stages.

        False anywhere wins, then None (some stage undecided), then True.
        """
        out: Dict[str, Optional[bool]] = {}
        for stage in self.stages:
            for name, ok in stage.checks.items():
                prev = out.get(name, True)
                if prev is False or ok is False:
                    out[name] = False
                elif prev is None or ok is None:
                    out[name] = None
                else:
                    out[name] = True
        return out


def find_nest_start(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    c0: Union[CriticalEnd, str, complex],
    max_depth: int = 24,
) -> PieceId:
    """A starting piece whose boundary arc separates from an ancestor's.

    Scans the nest of the base end for the first pair of depths whose
    inner-sector arcs are strictly nested on both sides; the deeper piece
    then has closure inside the shallower one along the marked boundary, and
    the nest starts there. Falls back to the deepest scanned piece when no
    strict pair shows up (degenerate starts still produce valid stages, the
    annuli just may be pinched).
    """
    e0 = table.end(c0)
    arcs: List[Tuple[int, Fraction, Fraction]] = []
    for n in range(max_depth + 1):
        try:
            piece = e0.table.piece(n)
            lo, hi = _refined_interval(spec, piece)
        except (_NoInnerBranch, OnGraph, HorizonExceeded):
            continue
        for m, plo, phi in arcs:
            if plo < lo and hi < phi:
                return e0.table.piece(n)
        arcs.append((n, lo, hi))
    return e0.table.piece(min(max_depth, e0.table.usable - 1))


def _contact_proxy(
    spec: PuzzleSpec, inner: PieceId, outer: PieceId
) -> Optional[bool]:
    """Do the two pieces share an inner-sector arc endpoint?

    A shared endpoint means a common bounding ray pair, hence a pinch of the
    annulus between them at that ray's landing point. This sees only the
    marked-boundary side; contacts at interior preimages are not detected.
    """
    try:
        ilo, ihi = _refined_interval(spec, inner)
        olo, ohi = _refined_interval(spec, outer)
    except (_NoInnerBranch, ValueError):
        return None
    return ilo == olo or ihi == ohi


def enhanced_nest(
    spec: PuzzleSpec,
    table: CriticalOrbitTable,
    c0: Union[CriticalEnd, str, complex],
    K0: Optional[PieceId] = None,
    tau: Optional[int] = None,
    n_max: int = 8,
) -> NestRecord:
    """Iterate successor and pullback operators into a telescoping nest.

    Each stage applies the last-successor operator tau times to the previous
    inner piece, then the B and A operators to the result: the B piece is
    the stage's outer piece, the A piece its inner one. Times double from
    stage to stage while degrees stay under a cap depending only on the end
    data, which is what makes the nest useful. The construction stops early,
    with `complete=False`, when the horizon cannot support another stage.
    """
    e0 = table.end(c0)
    b, delta = table.b, table.delta
    if b == 0:
        raise ValueError("no critical ends: nothing to build a nest around")
    if tau is None:
        tau = b + 1
    if K0 is None:
        K0 = find_nest_start(spec, table, e0)
    cap = delta ** (b * b + b + 2 * b * tau)

    stages: List[NestStage] = []
    current = K0
    complete = True
    failure = None
    prev_p: Optional[int] = None
    for n in range(1, n_max + 1):
        try:
            M = current
            for _ in range(tau):
                M, _sigma = last_successor(spec, table, M)
            bres = operator_B(spec, table, M)
            ares = operator_A(spec, table, M, b_result=bres)
        except HorizonExceeded as exc:
            complete = False
            failure = str(exc)
            break
        K, Kp = ares.piece, bres.piece
        h, hp = K.depth, Kp.depth
        p, pp = h - current.depth, hp - current.depth
        deg = _map_degree_at(table, e0.table, h, p)
        degp = _map_degree_at(table, e0.table, hp, pp)
        r_prev = return_time(current)
        r_here = return_time(K)

        checks: Dict[str, Optional[bool]] = {
            "nested_words": (
                K.word[: hp + 1] == Kp.word
                and Kp.word[: current.depth + 1] == current.word
            ),
            "shift_matches": K.word[p:] == current.word,
            "degree_cap": deg <= cap,
            "time_doubling": None if prev_p is None else p >= 2 * prev_p,
            "annulus_height": (h - hp >= r_prev.value) if r_prev.is_exact else None,
            "return_doubling": (
                r_here.value >= (2**tau) * r_prev.value
                if r_prev.is_exact and r_here.is_exact
                else None
            ),
            "telescoping": sum(s.p for s in stages) + p < 2 * p,
        }
        stage = NestStage(
            index=n,
            piece=K,
            piece_prime=Kp,
            h=h,
            h_prime=hp,
            p=p,
            p_prime=pp,
            deg=deg,
            deg_prime=degp,
            return_prev=r_prev,
            checks=MappingProxyType(checks),
            degenerate_contact=_contact_proxy(spec, K, Kp),
            certificate={"B": bres.certificate, "A": ares.certificate},
        )
        stages.append(stage)
        prev_p = p
        current = K

    return NestRecord(
        base=e0.name,
        tau=tau,
        b=b,
        delta=delta,
        degree_cap=cap,
        start=K0,
        stages=tuple(stages),
        complete=complete,
        horizon=table.horizon,
        failure=failure,
    )


# ---------------------------------------------------------------------------
# serialization


def nest_record_to_json(record: NestRecord) -> dict:
    """JSON-ready dump of a nest record, words spelled as angle pairs."""
    stages = []
    for s in record.stages:
        entry = {
            "h": s.h,
            "h'": s.h_prime,
            "p": s.p,
            "p'": s.p_prime,
            "deg": s.deg,
            "deg'": s.deg_prime,
            "word_K": [_label_json(lab) for lab in s.piece.word],
            "word_K'": [_label_json(lab) for lab in s.piece_prime.word],
            "degenerate_contact": s.degenerate_contact,
            "checks": dict(s.checks),
        }
        if s.mu is not None:
            entry["mu"] = s.mu
        stages.append(entry)
    return {
        "schema": "nest-record/1",
        "base": record.base,
        "tau": record.tau,
        "b": record.b,
        "delta": record.delta,
        "degree_cap": record.degree_cap,
        "horizon": record.horizon,
        "complete": record.complete,
        "failure": record.failure,
        "start_depth": record.start.depth,
        "stages": stages,
    }


def certificate_log(record: NestRecord) -> str:
    """Line-oriented certificate log for a nest record."""
    lines = [
        f"nest base={record.base} tau={record.tau} b={record.b} "
        f"delta={record.delta} cap={record.degree_cap} "
        f"horizon={record.horizon} complete={record.complete}"
    ]
    if record.failure:
        lines.append(f"stopped: {record.failure}")
    for s in record.stages:
        lines.append(
            f"stage {s.index}: h={s.h} h'={s.h_prime} p={s.p} p'={s.p_prime} "
            f"deg={s.deg} deg'={s.deg_prime} r_prev={s.return_prev.kind}"
            f"({s.return_prev.value}) contact={s.degenerate_contact}"
        )
        for name, ok in s.checks.items():
            verdict = "undecided" if ok is None else ("ok" if ok else "FAIL")
            lines.append(f"  check {name}: {verdict}")
    return "\n".join(lines)
