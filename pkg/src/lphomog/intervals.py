"""Finite unions of closed intervals on the line and of arcs on the circle.

Everything here works with closed sets in normal form: parts are sorted,
pairwise disjoint and separated by a strictly positive gap (touching parts
are merged).  Open neighborhoods ``(x - r, x + r)`` are replaced by their
closures; the boundary is Lebesgue-null so every measure is unchanged.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# absolute tolerance for "x lies in A"; band edges come out of root finders
MEMBERSHIP_TOL = 1e-9


@dataclass(frozen=True, order=True)
class Interval:
    """Closed interval ``[lo, hi]``; ``lo == hi`` is a point."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise ValueError(f"non-finite endpoint in [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValueError(f"interval with lo > hi: [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol


def _as_interval(obj) -> Interval:
    if isinstance(obj, Interval):
        return obj
    lo, hi = obj
    return Interval(float(lo), float(hi))


@dataclass(frozen=True)
class IntervalSet:
    parts: tuple[Interval, ...] = ()

    @classmethod
    def of(cls, raw: Iterable) -> "IntervalSet":
        return normalize(raw)

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    def __len__(self):
        return len(self.parts)

    def __iter__(self):
        return iter(self.parts)

    def __bool__(self):
        return bool(self.parts)

    @property
    def lo(self) -> float:
        return self.parts[0].lo

    @property
    def hi(self) -> float:
        return self.parts[-1].hi

    def endpoints(self) -> list[float]:
        out = []
        for p in self.parts:
            out.append(p.lo)
            if p.hi != p.lo:
                out.append(p.hi)
        return out

    def gaps(self) -> list[Interval]:
        return [Interval(a.hi, b.lo) for a, b in zip(self.parts, self.parts[1:])]

    def contains(self, x: float, tol: float = MEMBERSHIP_TOL) -> bool:
        return any(p.contains(x, tol) for p in self.parts)

    def measure(self) -> float:
        return measure(self)

    def shift(self, c: float) -> "IntervalSet":
        return IntervalSet(tuple(Interval(p.lo + c, p.hi + c) for p in self.parts))

    def to_list(self) -> list[list[float]]:
        return [[p.lo, p.hi] for p in self.parts]

    def to_json(self) -> str:
        return json.dumps({"parts": self.to_list()})

    @classmethod
    def from_json(cls, text: str | dict) -> "IntervalSet":
        data = json.loads(text) if isinstance(text, str) else text
        return normalize(data["parts"])


def normalize(raw: Iterable) -> IntervalSet:
    """Sort and merge overlapping or touching intervals."""
    items = sorted(_as_interval(r) for r in raw)
    merged: list[list[float]] = []
    for iv in items:
        if merged and iv.lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], iv.hi)
        else:
            merged.append([iv.lo, iv.hi])
    return IntervalSet(tuple(Interval(lo, hi) for lo, hi in merged))


def measure(A: IntervalSet) -> float:
    return math.fsum(p.hi - p.lo for p in A.parts)


def intersect(A: IntervalSet, B: IntervalSet) -> IntervalSet:
    out = []
    i = j = 0
    a, b = A.parts, B.parts
    while i < len(a) and j < len(b):
        lo = max(a[i].lo, b[j].lo)
        hi = min(a[i].hi, b[j].hi)
        if lo <= hi:
            out.append(Interval(lo, hi))
        if a[i].hi < b[j].hi:
            i += 1
        else:
            j += 1
    # intersections of normal-form sets are already disjoint, but two
    # degenerate pieces can touch, so renormalize
    return normalize(out)


def union(A: IntervalSet, B: IntervalSet) -> IntervalSet:
    return normalize(list(A.parts) + list(B.parts))


def difference(A: IntervalSet, B: IntervalSet) -> IntervalSet:
    """Closure of ``A \\ B`` with zero-length leftovers dropped.

    Only the measure of the result is meaningful at shared endpoints.
    """
    out = []
    j = 0
    b = B.parts
    for p in A.parts:
        cur = p.lo
        while j < len(b) and b[j].hi < p.lo:
            j += 1
        k = j
        while k < len(b) and b[k].lo <= p.hi:
            if b[k].lo > cur:
                out.append(Interval(cur, b[k].lo))
            cur = max(cur, b[k].hi)
            k += 1
        if cur < p.hi:
            out.append(Interval(cur, p.hi))
    return normalize(iv for iv in out if iv.hi > iv.lo)


def neighborhood(A: IntervalSet, r: float) -> IntervalSet:
    if not r > 0:
        raise ValueError(f"neighborhood radius must be positive, got {r}")
    return normalize(Interval(p.lo - r, p.hi + r) for p in A.parts)


def distance_to_set(x: float, A: IntervalSet) -> float:
    if not A:
        raise ValueError("distance to an empty set")
    best = math.inf
    for p in A.parts:
        if x < p.lo:
            best = min(best, p.lo - x)
            break
        if x <= p.hi:
            return 0.0
        best = x - p.hi
    return best


def excess(A: IntervalSet, B: IntervalSet) -> float:
    """``sup_{a in A} dist(a, B)`` computed from endpoint geometry.

    ``dist(., B)`` is piecewise linear with local maxima only at midpoints of
    gaps of B, so it is enough to look at the endpoints of A and at the gap
    midpoints of B that fall inside A.
    """
    if not A or not B:
        raise ValueError("excess needs two nonempty sets")
    candidates = A.endpoints()
    for g in B.gaps():
        mid = 0.5 * (g.lo + g.hi)
        if A.contains(mid, tol=0.0):
            candidates.append(mid)
    return max(distance_to_set(x, B) for x in candidates)


def hausdorff_distance(A: IntervalSet, B: IntervalSet) -> float:
    if not A or not B:
        raise ValueError("Hausdorff distance is undefined for empty sets")
    return max(excess(A, B), excess(B, A))


# -- homogeneity -------------------------------------------------------------


def _window_measure(lo_rel: np.ndarray, hi_rel: np.ndarray, delta) -> np.ndarray:
    """Measure of ``(-delta, delta)`` intersected with parts given relative to x.

    Working in coordinates relative to x keeps tiny windows exact even when
    ``x + delta == x`` in floating point.
    """
    d = np.asarray(delta, dtype=float)[..., None]
    over = np.minimum(hi_rel, d) - np.maximum(lo_rel, -d)
    return np.clip(over, 0.0, None).sum(axis=-1)


def homogeneity_density(A: IntervalSet, x: float, delta: float,
                        tol: float = MEMBERSHIP_TOL) -> float:
    """``|B_delta(x) ∩ A| / delta`` for a point x of A; lies in [0, 2]."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not A.contains(x, tol):
        raise ValueError(f"{x} is not a point of the set")
    lo = np.array([p.lo - x for p in A.parts])
    hi = np.array([p.hi - x for p in A.parts])
    return float(_window_measure(lo, hi, delta)) / delta


@dataclass(frozen=True)
class GridSpec:
    """Sampling lattice for :func:`certify_homogeneity`.

    ``mesh_per_part`` uniform interior x-samples per part on top of all
    endpoints; the delta ladder is ``delta0 * 2**-k`` for ``k = 0..ladder``,
    augmented per x by the distances to endpoints that fall in (0, delta0].
    """

    mesh_per_part: int = 8
    ladder: int = 40

    def describe(self) -> str:
        return (f"x: endpoints + {self.mesh_per_part} interior/part; "
                f"delta: delta0*2^-k, k=0..{self.ladder}, + endpoint distances")


@dataclass
class HomogeneityReport:
    tau: float
    delta0: float
    min_density: float
    witness_x: float
    witness_delta: float
    grid: str
    n_samples: int
    passed: bool
    profile: list[tuple[float, float, float]] | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "delta0": self.delta0,
            "min_density": self.min_density,
            "witness_x": self.witness_x,
            "witness_delta": self.witness_delta,
            "grid": self.grid,
            "n_samples": self.n_samples,
            "pass": self.passed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HomogeneityReport":
        return cls(float(d["tau"]), float(d["delta0"]), float(d["min_density"]),
                   float(d["witness_x"]), float(d["witness_delta"]), d["grid"],
                   int(d["n_samples"]), bool(d["pass"]))

    def profile_csv(self) -> str:
        return profile_to_csv(self.profile or [])


def profile_to_csv(rows: Sequence[tuple[float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "delta", "density"])
    for x, d, rho in rows:
        w.writerow([repr(float(x)), repr(float(d)), repr(float(rho))])
    return buf.getvalue()


def _x_samples(parts_lo: np.ndarray, parts_hi: np.ndarray, mesh: int) -> np.ndarray:
    xs = [parts_lo, parts_hi]
    if mesh > 0:
        frac = np.arange(1, mesh + 1) / (mesh + 1)
        xs.append((parts_lo[:, None] + np.outer(parts_hi - parts_lo, frac)).ravel())
    return np.unique(np.concatenate(xs))


def _certify(lo: np.ndarray, hi: np.ndarray, xs: np.ndarray, tau: float,
             delta0: float, grid: GridSpec, keep_profile: bool):
    ends = np.unique(np.concatenate([lo, hi]))
    ladder = delta0 * 2.0 ** -np.arange(grid.ladder + 1)
    best = (math.inf, math.inf, math.inf)
    n = 0
    rows = [] if keep_profile else None
    for x in xs:
        lo_rel, hi_rel = lo - x, hi - x
        near = (lo_rel < delta0) & (hi_rel > -delta0)
        lo_rel, hi_rel = lo_rel[near], hi_rel[near]
        dist = np.abs(ends - x)
        extra = dist[(dist > 0) & (dist <= delta0)]
        deltas = np.unique(np.concatenate([ladder, extra]))
        dens = _window_measure(lo_rel, hi_rel, deltas) / deltas
        n += deltas.size
        k = int(np.argmin(dens))
        cand = (float(dens[k]), float(x), float(deltas[k]))
        if cand < best:
            best = cand
        if rows is not None:
            rows.extend(zip([float(x)] * deltas.size, deltas.tolist(), dens.tolist()))
    return best, n, rows


def certify_homogeneity(A: IntervalSet, tau: float, delta0: float,
                        grid: GridSpec | None = None,
                        keep_profile: bool = False) -> HomogeneityReport:
    """Minimum of the homogeneity density over a deterministic (x, delta) lattice."""
    if not A:
        raise ValueError("cannot certify an empty set")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not delta0 > 0:
        raise ValueError("delta0 must be positive")
    grid = grid or GridSpec()
    if grid.ladder < 0 or grid.mesh_per_part < 0:
        raise ValueError("degenerate sampling grid")
    lo = np.array([p.lo for p in A.parts])
    hi = np.array([p.hi for p in A.parts])
    xs = _x_samples(lo, hi, grid.mesh_per_part)
    (rho, wx, wd), n, rows = _certify(lo, hi, xs, tau, delta0, grid, keep_profile)
    return HomogeneityReport(tau, delta0, rho, wx, wd, grid.describe(), n,
                             rho >= tau, rows)


# -- circle ------------------------------------------------------------------


def _wrap(theta: float) -> float:
    t = math.fmod(theta, TWO_PI)
    return t + TWO_PI if t < 0 else t


@dataclass(frozen=True)
class CircularArcSet:
    """Closed arcs on the unit circle, angles in radians.

    Each arc is ``(start, end)`` with ``0 <= start < 2π`` and
    ``start <= end <= start + 2π``; at most one arc wraps past 2π.
    The full circle is ``((0, 2π),)``.
    """

    arcs: tuple[tuple[float, float], ...] = ()

    @classmethod
    def full(cls) -> "CircularArcSet":
        return cls(((0.0, TWO_PI),))

    @classmethod
    def of(cls, raw: Iterable[Sequence[float]]) -> "CircularArcSet":
        pieces = []
        for s, e in raw:
            s, e = float(s), float(e)
            if e < s:
                raise ValueError(f"arc with end < start: ({s}, {e})")
            if e - s >= TWO_PI:
                return cls.full()
            s0 = _wrap(s)
            e0 = s0 + (e - s)
            if e0 > TWO_PI:
                pieces += [(s0, TWO_PI), (0.0, e0 - TWO_PI)]
            else:
                pieces.append((s0, e0))
        return cls.from_intervals(normalize(pieces))

    @classmethod
    def from_intervals(cls, S: IntervalSet) -> "CircularArcSet":
        """Rebuild arcs from a normal-form subset of [0, 2π], joining across 0."""
        parts = [(p.lo, p.hi) for p in S.parts]
        if not parts:
            return cls(())
        if len(parts) == 1 and parts[0][0] <= 0.0 and parts[0][1] >= TWO_PI:
            return cls.full()
        if len(parts) > 1 and parts[0][0] <= 0.0 and parts[-1][1] >= TWO_PI:
            first = parts.pop(0)
            last = parts.pop()
            parts.append((last[0], TWO_PI + first[1]))
        return cls(tuple(parts))

    def to_intervals(self) -> IntervalSet:
        pieces = []
        for s, e in self.arcs:
            if e > TWO_PI:
                pieces += [(s, TWO_PI), (0.0, e - TWO_PI)]
            else:
                pieces.append((s, e))
        return normalize(pieces)

    def lifted(self) -> IntervalSet:
        """Three copies of the unwrapped set covering [-2π, 4π]."""
        base = self.to_intervals()
        return union(union(base.shift(-TWO_PI), base), base.shift(TWO_PI))

    def is_full(self) -> bool:
        return arc_measure(self) >= TWO_PI

    def endpoints(self) -> list[float]:
        if self.is_full():
            return []
        out = []
        for s, e in self.arcs:
            out += [s, _wrap(e)]
        return sorted(set(out))

    def contains(self, theta: float, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.lifted().contains(_wrap(theta), tol)

    def to_list(self) -> list[list[float]]:
        return [[s, e] for s, e in self.arcs]

    def to_json(self) -> str:
        return json.dumps({"arcs": self.to_list()})


def arc_measure(A: CircularArcSet) -> float:
    return min(measure(A.to_intervals()), TWO_PI)


def arc_intersect(A: CircularArcSet, B: CircularArcSet) -> CircularArcSet:
    return CircularArcSet.from_intervals(intersect(A.to_intervals(), B.to_intervals()))


def arc_hausdorff_distance(A: CircularArcSet, B: CircularArcSet) -> float:
    """Hausdorff distance in the arc-length metric."""
    if not A.arcs or not B.arcs:
        raise ValueError("Hausdorff distance is undefined for empty sets")
    a, b = A.to_intervals(), B.to_intervals()
    return max(excess(a, B.lifted()), excess(b, A.lifted()))


def arc_homogeneity_density(A: CircularArcSet, theta: float, delta: float,
                            tol: float = MEMBERSHIP_TOL) -> float:
    if not 0 < delta <= math.pi:
        raise ValueError("angular delta must lie in (0, π]")
    x = _wrap(theta)
    if not A.contains(x, tol):
        raise ValueError(f"{theta} is not a point of the arc set")
    L = A.lifted()
    lo = np.array([p.lo - x for p in L.parts])
    hi = np.array([p.hi - x for p in L.parts])
    return float(_window_measure(lo, hi, delta)) / delta


def certify_arc_homogeneity(A: CircularArcSet, tau: float, delta0: float,
                            grid: GridSpec | None = None,
                            keep_profile: bool = False) -> HomogeneityReport:
    if not A.arcs:
        raise ValueError("cannot certify an empty arc set")
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if not 0 < delta0 <= math.pi:
        raise ValueError("angular delta0 must lie in (0, π]")
    grid = grid or GridSpec()
    if grid.ladder < 0 or grid.mesh_per_part < 0:
        raise ValueError("degenerate sampling grid")
    base = A.to_intervals()
    L = A.lifted()
    lo = np.array([p.lo for p in L.parts])
    hi = np.array([p.hi for p in L.parts])
    blo = np.array([p.lo for p in base.parts])
    bhi = np.array([p.hi for p in base.parts])
    xs = _x_samples(blo, bhi, grid.mesh_per_part)
    xs = xs[xs < TWO_PI]
    if xs.size == 0:
        xs = np.array([0.0])
    (rho, wx, wd), n, rows = _certify(lo, hi, xs, tau, delta0, grid, keep_profile)
    return HomogeneityReport(tau, delta0, rho, wx, wd, grid.describe(), n,
                             rho >= tau, rows)
