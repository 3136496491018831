"""Checkers for the quantitative band estimates, with constant fitting.

Every verifier works in two modes.  Given a constant it counts violations;
without one it fits the smallest constant that makes the inequality hold
over the ensemble and then replays the check with that value.  Fitted
constants are empirical: the estimates only assert that *some* universal
constant exists.

Per-sample constants are solved in closed form and then nudged up one ulp at
a time until the floating-point check passes, so a fitted value always
replays with zero violations.  The fitted constant is the maximum of the
per-sample values, hence it never decreases when the ensemble grows.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import continuum as cont
from . import jacobi as jac
from .bands import BandStructure
from .intervals import Interval, IntervalSet

SCHEMA_VERSION = 1
THREADS_ENV = "LPHOMOG_THREADS"
TINY = 5e-324


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _pmap(fn, items, threads: int | None):
    threads = threads or default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- fitting ----------------------------------------------------------------


def _lambert_w(y: float) -> float:
    """Principal branch of ``w e^w = y`` for y >= 0."""
    if y == 0:
        return 0.0
    w = math.log1p(y) if y < 3 else math.log(y) - math.log(math.log(y))
    for _ in range(60):
        ew = math.exp(w)
        f = w * ew - y
        step = f / (ew * (w + 1) - (w + 2) * f / (2 * w + 2))
        w -= step
        if abs(step) <= 1e-15 * (1 + abs(w)):
            break
    return w


def solve_c_exp(r: float, B: float) -> float:
    """Positive root of ``C e^{B C} = r``."""
    if r <= 0:
        return 0.0
    if B == 0:
        return r
    # BC e^{BC} = B r; for huge B r use the log form
    y = B * r
    if y < 1e-6:
        # W(y)/B loses everything when y is tiny or subnormal
        return r * (1.0 - y + 1.5 * y * y)
    if math.isinf(y):
        lw = math.log(B) + math.log(r)
        w = lw - math.log(lw)
        for _ in range(60):
            w_new = lw - math.log(w)
            if abs(w_new - w) <= 1e-15 * w:
                break
            w = w_new
        return w / B
    return _lambert_w(y) / B


def _nudge(C: float, ok: Callable[[float], bool]) -> float:
    """Smallest float at or above C (by ulp steps) that passes ``ok``."""
    C = max(C, TINY)
    for _ in range(256):
        if ok(C):
            return C
        C = math.nextafter(C, math.inf)
    for _ in range(2000):
        if ok(C):
            return C
        C *= 1 + 1e-12
    raise ArithmeticError("could not find a constant satisfying the check")


@dataclass
class Check:
    """One instance of an inequality ``lhs <= rhs(C)``.

    ``kind`` selects the dependence on C:
      linear      rhs = C * a
      growth      rhs = C * a * exp(C * b)
      decay       lhs >= 4 a exp(-C b) / C  (band-length form, stored with lhs = length)
    """

    member: int
    label: str
    at: float
    lhs: float
    a: float
    b: float = 0.0
    kind: str = "linear"

    def rhs(self, C: float) -> float:
        if self.kind == "linear":
            return C * self.a
        if self.kind == "growth":
            try:
                return C * self.a * math.exp(C * self.b)
            except OverflowError:
                return math.inf
        return 4.0 * self.a * math.exp(-C * self.b) / C

    def holds(self, C: float) -> bool:
        if self.kind == "decay":
            return self.lhs >= self.rhs(C)
        return self.lhs <= self.rhs(C)

    def minimal_constant(self) -> float:
        if self.kind == "linear":
            if self.lhs <= 0:
                return TINY
            if self.a <= 0:
                return math.inf
            C = self.lhs / self.a
        elif self.kind == "growth":
            if self.lhs <= 0:
                return TINY
            C = solve_c_exp(self.lhs / self.a, self.b)
        else:
            # 4 a e^{-Cb} / C <= lhs  <=>  C e^{Cb} >= 4 a / lhs
            C = solve_c_exp(4.0 * self.a / self.lhs, self.b)
        return _nudge(C, self.holds)

    def row(self, C: float) -> dict:
        return {"member": self.member, "label": self.label, "at": self.at,
                "lhs": self.lhs, "rhs": self.rhs(C), "pass": self.holds(C)}


@dataclass
class FitResult:
    constant_name: str
    fitted_value: float
    ensemble_spec: str
    worst_case_witness: dict
    n_checks: int

    def to_dict(self) -> dict:
        return {"constant_name": self.constant_name, "fitted_value": self.fitted_value,
                "ensemble_spec": self.ensemble_spec,
                "worst_case_witness": self.worst_case_witness, "n_checks": self.n_checks}

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(d["constant_name"], float(d["fitted_value"]), d["ensemble_spec"],
                   dict(d["worst_case_witness"]), int(d["n_checks"]))


@dataclass
class VerifierReport:
    check: str
    constant_name: str
    constant: float
    mode: str
    checks: list[Check] = field(repr=False)
    ensemble_spec: str = ""
    fit: FitResult | None = None
    note: str = "constants are empirical fits, not proven values"
    extra: dict = field(default_factory=dict)

    @property
    def violations(self) -> list[Check]:
        return [c for c in self.checks if not c.holds(self.constant)]

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        v = self.violations
        return {
            "schema_version": SCHEMA_VERSION,
            "check": self.check,
            "constant_name": self.constant_name,
            "constant": self.constant,
            "mode": self.mode,
            "n_checks": len(self.checks),
            "n_violations": len(v),
            "violations": [c.row(self.constant) for c in v[:50]],
            "fit": self.fit.to_dict() if self.fit else None,
            "ensemble_spec": self.ensemble_spec,
            "pass": not v,
            "note": self.note,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["member", "label", "at", "lhs", "rhs", "pass"])
        for c in self.checks:
            r = c.row(self.constant)
            w.writerow([r["member"], r["label"], repr(r["at"]), repr(r["lhs"]),
                        repr(r["rhs"]), int(r["pass"])])
        return buf.getvalue()


def fit_constant(name: str, checks: Sequence[Check], spec: str = "") -> FitResult:
    if not checks:
        raise ValueError("cannot fit a constant on an empty set of checks")
    best, witness = -math.inf, None
    for c in checks:
        v = c.minimal_constant()
        if v > best:
            best, witness = v, c
    return FitResult(name, best, spec, witness.row(best), len(checks))


def _finish(check: str, name: str, checks: list[Check], C: float | None,
            spec: str, extra: dict | None = None) -> VerifierReport:
    if C is None:
        fit = fit_constant(name, checks, spec)
        return VerifierReport(check, name, fit.fitted_value, "fit", checks, spec, fit,
                              extra=extra or {})
    if not C > 0:
        raise ValueError(f"{name} must be positive")
    return VerifierReport(check, name, float(C), "verify", checks, spec, extra=extra or {})


# -- spectra helpers -----------------------------------------------------------


def _interior_samples(band: Interval, k: int = 32) -> np.ndarray:
    t = np.arange(1, k + 1) / (k + 1)
    pts = np.concatenate([[band.lo, 0.5 * (band.lo + band.hi), band.hi],
                          band.lo + t * (band.hi - band.lo)])
    return pts


def _bands(op, E_max: float | None) -> BandStructure:
    if isinstance(op, jac.PeriodicJacobi):
        return jac.band_structure(op)
    if E_max is None:
        raise ValueError("continuum operators need an energy window E_max")
    return cont.band_structure_window(op, E_max)


def _E0(bs: BandStructure) -> float:
    return min(0.0, bs.bands.lo)


def _ensemble_spec(ensemble) -> str:
    kinds = sorted({type(op).__name__ for op in ensemble})
    return f"{len(ensemble)} operators ({', '.join(kinds)})"


# -- derivative bound ---------------------------------------------------------


def _derivative_checks(idx: int, op, E_max: float | None, k: int) -> list[Check]:
    bs = _bands(op, E_max)
    out = []
    if isinstance(op, jac.PeriodicJacobi):
        # discrete analogue: |Δ'| <= C p^3 exp(C p ‖J‖^{1/2})
        p, Q = op.p, jac.operator_norm(op)
        for band in bs.floquet_bands():
            E = _interior_samples(band, k)
            d = np.abs(np.asarray(jac.discriminant_derivative(op, E)))
            for e, v in zip(E.tolist(), d.tolist()):
                out.append(Check(idx, "derivative", e, v, p ** 3, p * math.sqrt(Q), "growth"))
        return out
    T = op.T
    QB = cont.besicovitch_norm(op)
    B = T * (math.sqrt(QB) + math.sqrt(abs(_E0(bs))))
    for band in bs.floquet_bands():
        E = _interior_samples(band, k)
        d = np.abs(np.asarray(cont.discriminant_derivative(op, E)))
        for e, v in zip(E.tolist(), d.tolist()):
            a = T ** 3 / (T + math.sqrt(abs(e)))
            out.append(Check(idx, "derivative", e, v, a, B, "growth"))
    return out


def verify_derivative_bound(ensemble: Sequence, C: float | None = None,
                            E_max: float | None = 100.0, interior: int = 32,
                            threads: int | None = None) -> VerifierReport:
    """``|Δ'(E)| <= C T^3 (T + |E|^{1/2})^{-1} exp(C T (‖V‖_B^{1/2} + |E_0|^{1/2}))``.

    ``E_0 = min(0, inf σ)``.  Samples: edges, midpoint and ``interior``
    uniform points of every complete band in the window.
    """
    ensemble = list(ensemble)
    if not ensemble:
        raise ValueError("empty ensemble")
    per = _pmap(lambda item: _derivative_checks(item[0], item[1], E_max, interior),
                list(enumerate(ensemble)), threads)
    checks = [c for group in per for c in group]
    return _finish("derivative-bound", "C", checks, C, _ensemble_spec(ensemble))


# -- band-length bound ---------------------------------------------------------


def normalize_bottom(V: cont.PiecewisePotential, E_max: float) -> tuple[cont.PiecewisePotential, float]:
    """Shift V by a constant so that inf σ = 0; returns the shifted V and the shift."""
    bottom = cont.band_structure_window(V, max(E_max, V.max_value + 1.0)).bands.lo
    c = -bottom
    return (V.shifted(c) if c else V), c


def _band_length_checks(idx: int, op, E_max: float | None) -> list[Check]:
    out = []
    if isinstance(op, jac.PeriodicJacobi):
        # discrete analogue: length >= 4 C^{-1} exp(-C p ‖J‖^{1/2}) p^{-2}
        bs = jac.band_structure(op)
        p, Q = op.p, jac.operator_norm(op)
        for band in bs.floquet_bands():
            out.append(Check(idx, "band-length", band.lo, band.length,
                             float(p) ** -2, p * math.sqrt(Q), "decay"))
        return out
    V, c = normalize_bottom(op, E_max)
    # E_max is given in the original energy frame
    bs = cont.band_structure_window(V, E_max + c)
    T = V.T
    Q = cont.besicovitch_norm(V)
    B = T * math.sqrt(Q)  # E_0 = 0 after the shift
    for j, band in enumerate(bs.floquet_bands()):
        # the lowest band starts at inf σ = 0; its computed edge is only ~1e-17 off
        lam0 = 0.0 if j == 0 else max(band.lo, 0.0)
        a = (T + math.sqrt(lam0)) / T ** 3
        out.append(Check(idx, "band-length", band.lo, band.length, a, B, "decay"))
    return out


def verify_band_length_bound(ensemble: Sequence, C: float | None = None,
                             E_max: float = 100.0,
                             threads: int | None = None) -> VerifierReport:
    """``|β_j - α_j| >= 4 C^{-1} e^{-C T (Q^{1/2} + |E_0|^{1/2})} (T + λ_0^{1/2}) T^{-3}``.

    Continuum operators are shifted so that inf σ = 0 (then E_0 = 0) and
    ``Q = ‖V‖_B`` of the shifted potential.  Only complete bands inside the
    window are checked.
    """
    ensemble = list(ensemble)
    if not ensemble:
        raise ValueError("empty ensemble")
    per = _pmap(lambda item: _band_length_checks(item[0], item[1], E_max),
                list(enumerate(ensemble)), threads)
    checks = [c for group in per for c in group]
    return _finish("band-length-bound", "C", checks, C, _ensemble_spec(ensemble))


# -- edge stability --------------------------------------------------------------


def _edge_checks(idx: int, pair, n_max: int, Q: float | None) -> tuple[list[Check], dict]:
    V1, V2 = pair
    out = []
    if isinstance(V1, jac.PeriodicJacobi):
        if V1.p != V2.p:
            raise ValueError(f"mismatched periods {V1.p} and {V2.p}")
        e1 = [E for E, _ in jac.band_structure(V1).edges]
        e2 = [E for E, _ in jac.band_structure(V2).edges]
        dist = jac.sup_distance(V1, V2).operator_bound
        for n, (x, y) in enumerate(zip(e1, e2), start=1):
            out.append(Check(idx, "edge", n, abs(x - y), dist))
        return out, {"distance": dist}
    if abs(V1.T - V2.T) > 1e-12 * max(V1.T, V2.T):
        raise ValueError(f"mismatched periods {V1.T} and {V2.T}")
    T = V1.T
    q = Q if Q is not None else max(cont.besicovitch_norm(V1), cont.besicovitch_norm(V2))
    dist = cont.besicovitch_distance(V1, V2)
    E1 = cont.periodic_eigenvalues(V1, n_max)
    E2 = cont.periodic_eigenvalues(V2, n_max)
    for n in range(n_max):
        a = (1 + T * T * q) * (1 + T * math.sqrt(abs(E2[n]))) * dist
        out.append(Check(idx, "edge", n + 1, abs(float(E1[n]) - float(E2[n])), a))
    g = q + T * T * q * q
    for j, E in ((1, E1[0]), (2, E2[0])):
        out.append(Check(idx, f"ground-{j}", float(E), max(0.0, -float(E)), g))
    return out, {"distance": dist, "Q": q}


def verify_edge_stability(pairs: Sequence, C1: float | None = None, n_max: int = 20,
                          Q: float | None = None, threads: int | None = None) -> VerifierReport:
    """``|E_n(V_1) - E_n(V_2)| <= C_1 (1 + T^2 Q)(1 + T|E_n(V_2)|^{1/2}) ‖V_1 - V_2‖_B``.

    E_n are the periodic eigenvalues on one period, counted with
    multiplicity.  The ground-state bound ``E_1 >= -C_1 (Q + T^2 Q^2)`` is
    checked for both members with the same constant.  Jacobi pairs use
    sorted band edges and the operator-norm distance ``2 max|Δa| + max|Δb|``.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty ensemble")
    per = _pmap(lambda item: _edge_checks(item[0], item[1], n_max, Q),
                list(enumerate(pairs)), threads)
    checks = [c for group, _ in per for c in group]
    extra = {"pair_info": [info for _, info in per]}
    return _finish("edge-stability", "C1", checks, C1, f"{len(pairs)} pairs", extra)


# -- level spectra -----------------------------------------------------------------


def level_spectrum(op, E_max: float | None = None):
    """Spectrum of one periodic level: IntervalSet, or CircularArcSet for CMV."""
    from .cmv import PeriodicCMV, arc_band_structure

    if isinstance(op, PeriodicCMV):
        return arc_band_structure(op).arcs
    return _bands(op, E_max).bands


def level_spectra(S, E_max: float | None = None, threads: int | None = None) -> list:
    return _pmap(lambda op: level_spectrum(op, E_max), list(S.levels), threads)


def _as_line(A) -> IntervalSet:
    return A if isinstance(A, IntervalSet) else A.to_intervals()


# -- semicontinuity ------------------------------------------------------------------


@dataclass
class SemicontinuityReport:
    interval: tuple[float, float]
    measures: list[float]
    deepest: float
    trailing_max: float
    tolerance: float
    hausdorff_to_deepest: list[float]
    inclusion_radius: float
    passed: bool
    note: str = "the deepest computed level stands in for the limit spectrum"

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "interval": list(self.interval),
                "measures": self.measures, "deepest": self.deepest,
                "trailing_max": self.trailing_max, "tolerance": self.tolerance,
                "hausdorff_to_deepest": self.hausdorff_to_deepest,
                "inclusion_radius": self.inclusion_radius, "pass": self.passed,
                "note": self.note}


def _excess_or_zero(A: IntervalSet, B: IntervalSet) -> float:
    from .intervals import excess

    if not A:
        return 0.0
    if not B:
        return math.inf
    return excess(A, B)


def verify_semicontinuity(S, I: Interval | Sequence[float], E_max: float | None = None,
                          spectra: list | None = None, tol_factor: float = 10.0,
                          trailing: int | None = None, increments: Sequence[float] | None = None,
                          limit=None) -> SemicontinuityReport:
    """``|I ∩ Σ| >= max_j |I ∩ Σ_j| - tol_factor * (sum of increments)``.

    Σ is ``limit`` when given, otherwise the deepest level.  ``S`` may be
    None for synthetic sets, in which case ``spectra`` and ``increments``
    are required.  ``trailing`` limits the max to the last few levels
    (default: all).  The report also gives ``sup_{y in Σ_j ∩ I} dist(y, Σ ∩ I)``
    per level and their maximum as the fitted inclusion radius.
    """
    from .intervals import hausdorff_distance, intersect

    I = I if isinstance(I, Interval) else Interval(*I)
    if S is None:
        if spectra is None or increments is None:
            raise ValueError("synthetic input needs spectra and increments")
    elif S.kind == "continuum":
        if E_max is None or I.hi > E_max:
            raise ValueError("energy window does not contain the interval")
    spectra = spectra if spectra is not None else level_spectra(S, E_max)
    increments = list(increments) if increments is not None else S.increments
    lines = [_as_line(A) for A in spectra]
    II = IntervalSet((I,))
    cuts = [intersect(A, II) for A in lines]
    m = [c.measure() for c in cuts]
    deep = intersect(_as_line(limit), II) if limit is not None else cuts[-1]
    m_deep = deep.measure()
    tail = math.fsum(increments)
    window = m if trailing is None else m[-trailing:]
    best = max(window)
    radii = [_excess_or_zero(c, deep) for c in cuts]
    hd = []
    for c in cuts:
        hd.append(hausdorff_distance(c, deep) if c and deep else (0.0 if not c and not deep else math.inf))
    return SemicontinuityReport((I.lo, I.hi), m, m_deep, best, tol_factor * tail, hd,
                                max(radii), m_deep >= best - tol_factor * tail)


# -- gap-length partial sums ------------------------------------------------------------


@dataclass
class GapSumReport:
    window: tuple[float, float] | None
    sums: list[float]
    counts: list[int]
    nondecreasing: bool
    tolerance: float
    note: str = "illustrative only: finite partial sums cannot show divergence"

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "window": self.window, "sums": self.sums,
                "counts": self.counts, "nondecreasing": self.nondecreasing,
                "tolerance": self.tolerance, "note": self.note}


def gap_length_partial_sums(S, E_max: float | None = None, spectra: list | None = None,
                            tol_factor: float = 10.0) -> GapSumReport:
    """Total length of open gaps per level (inside the energy window for the continuum)."""
    from .cmv import PeriodicCMV
    from .intervals import TWO_PI, arc_measure

    spectra = spectra if spectra is not None else level_spectra(S, E_max)
    sums, counts = [], []
    for A in spectra:
        if S.levels and isinstance(S.levels[0], PeriodicCMV):
            sums.append(TWO_PI - arc_measure(A))
            counts.append(0 if A.is_full() else len(A.arcs))
            continue
        g = A.gaps()
        if S.kind == "continuum" and E_max is not None:
            g = [x for x in g if x.hi <= E_max]
        sums.append(math.fsum(x.length for x in g))
        counts.append(len(g))
    tol = tol_factor * math.fsum(S.increments)
    mono = all(b >= a - tol for a, b in zip(sums, sums[1:]))
    window = (float(min(A.lo for A in spectra if not hasattr(A, "arcs"))), E_max) \
        if S.kind == "continuum" else None
    return GapSumReport(window, sums, counts, mono, tol)


# -- calibration of the universal constants ----------------------------------------------


@dataclass
class Calibration:
    C: FitResult | None
    C1: FitResult | None
    seed: int
    size: int

    def to_dict(self) -> dict:
        return {"C": self.C.to_dict() if self.C else None,
                "C1": self.C1.to_dict() if self.C1 else None,
                "seed": self.seed, "size": self.size}


def calibrate_constants(kind: str, periods: Sequence[float], seed: int = 0, size: int = 16,
                        E_max: float = 30.0, threads: int | None = None) -> Calibration:
    """Fit C and C_1 on a seeded random ensemble resembling the sequence levels.

    Jacobi members use the same coefficient ranges as the generator
    (a in [0.75, 1.25], b in [-1, 1]); continuum members are π-lattice
    potentials with values in [-1, 1].  Pairs differ by a bump of size 0.1.
    The CMV class has no calibrated constants.
    """
    if kind == "cmv":
        return Calibration(None, None, seed, 0)
    rng = np.random.default_rng([seed, 9001])
    # keep the calibration cheap: the largest periods add cost, not information
    ps = sorted({max(1, round(T / (math.pi if kind == "continuum" else 1.0))) for T in periods})
    ps = [p for p in ps if p <= 16] or [ps[0]]
    ops, pairs = [], []
    for k in range(size):
        p = ps[k % len(ps)]
        if kind == "jacobi":
            J = jac.random_jacobi(rng, p, a_range=(0.75, 1.25), b_range=(-1.0, 1.0))
            db = rng.uniform(-0.1, 0.1, size=p)
            J2 = jac.PeriodicJacobi(J.a, tuple(np.add(J.b, db)), gamma=0.5)
        else:
            p = min(p, 4)
            v = rng.uniform(-1.0, 1.0, size=p)
            bp = tuple(j * math.pi for j in range(p + 1))
            J = cont.PiecewisePotential(bp[-1], bp, tuple(v))
            J2 = cont.PiecewisePotential(bp[-1], bp, tuple(v + rng.uniform(-0.1, 0.1, size=p)))
        ops.append(J)
        pairs.append((J, J2))
    der = verify_derivative_bound(ops, E_max=E_max, threads=threads)
    edge = verify_edge_stability(pairs, n_max=8, threads=threads)
    return Calibration(der.fit, edge.fit, seed, size)


# -- step-by-step homogeneity ------------------------------------------------------------------


def budget_K(C: float, C1: float, Q: float) -> float:
    return max(C, C1, Q, C * math.sqrt(Q), 8.0)


def budget_delta0(K: float, T1: float, tau: float) -> float:
    return min(1.0 / K * T1 ** -3 * math.exp(-K * T1), (1.0 - tau) / 3.0)


def budget_tail_threshold(K: float, tau: float) -> float:
    return (1.0 - tau) / (3.0 * K ** 4)


def replay_coefficient(tau):
    """Final density coefficient of the replay: ``(2+τ)/3 - 2(1-τ)/3``.

    Works with ``fractions.Fraction`` for exact arithmetic; equals τ.
    """
    return (2 + tau) / 3 - 2 * (1 - tau) / 3


def _reconcile(spectra: list[IntervalSet], resolution: float) -> tuple[list[IntervalSet], int]:
    """Snap endpoints of each level onto the next level's endpoints within ``resolution``.

    Adjacent levels that are the same operator in floating point then get
    identical spectra, instead of spectra differing by eigen-solver noise.
    """
    out = [None] * len(spectra)
    out[-1] = spectra[-1]
    snapped = 0
    for l in range(len(spectra) - 2, -1, -1):
        ref = np.array(out[l + 1].endpoints())
        parts = []
        for p in spectra[l].parts:
            ends = []
            for e in (p.lo, p.hi):
                if ref.size:
                    k = int(np.argmin(np.abs(ref - e)))
                    if 0 < abs(ref[k] - e) <= resolution * max(1.0, abs(e)):
                        e = float(ref[k])
                        snapped += 1
                ends.append(e)
            parts.append((ends[0], max(ends)))
        out[l] = IntervalSet.of(parts)
    return out, snapped


@dataclass
class ReplayFailure:
    x: float
    delta: float
    reason: str

    def to_dict(self) -> dict:
        return {"x": self.x, "delta": self.delta, "reason": self.reason}


@dataclass
class ReplaySummary:
    samples: int = 0
    band_case: int = 0
    scale_counts: dict = field(default_factory=dict)
    max_level_ratio: float = 0.0
    max_shift_ratio: float = 0.0
    failures: list[ReplayFailure] = field(default_factory=list)
    snapped_endpoints: int = 0
    skipped: str | None = None

    def to_dict(self) -> dict:
        return {"samples": self.samples, "band_case": self.band_case,
                "scale_counts": {str(k): v for k, v in sorted(self.scale_counts.items())},
                "max_level_ratio": self.max_level_ratio,
                "max_shift_ratio": self.max_shift_ratio,
                "snapped_endpoints": self.snapped_endpoints,
                "n_failures": len(self.failures),
                "failures": [f.to_dict() for f in self.failures[:20]],
                "skipped": self.skipped}


@dataclass
class StepHomogeneityBudget:
    tau: float
    K: float
    C: float | None
    C1: float | None
    Q: float
    Q_upper: float
    q_mode: str
    delta0: float
    tail_sum: float
    tail_threshold: float
    tail_ok: bool
    dropped: int
    levels_kept: list[int]
    level_reports: list[dict]
    replay: ReplaySummary
    shift: float = 0.0
    calibration: dict | None = None
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return (self.failure is None and self.tail_ok
                and all(r["pass"] for r in self.level_reports)
                and not self.replay.failures)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "tau": self.tau, "K": self.K, "C": self.C, "C1": self.C1,
            "Q": self.Q, "Q_upper": self.Q_upper, "q_mode": self.q_mode,
            "delta0": self.delta0, "tail_sum": self.tail_sum,
            "tail_threshold": self.tail_threshold, "tail_ok": self.tail_ok,
            "dropped": self.dropped, "levels_kept": self.levels_kept,
            "shift": self.shift, "levels": self.level_reports,
            "replay": self.replay.to_dict(), "calibration": self.calibration,
            "failure": self.failure, "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "period", "kept", "min_density", "witness_x", "witness_delta", "pass"])
        for r in self.level_reports:
            w.writerow([r["level"], repr(r["period"]), int(r["kept"]), repr(r["min_density"]),
                        repr(r["witness_x"]), repr(r["witness_delta"]), int(r["pass"])])
        return buf.getvalue()


def _level_norm(kind: str, op, shift: float) -> float:
    if kind == "continuum":
        return cont.besicovitch_norm(op.shifted(shift) if shift else op)
    if kind == "jacobi":
        return jac.operator_norm(op)
    return max(abs(x) for x in op.alpha)


def _drop_levels(S, K: float, tau: float, min_levels: int):
    from .limit_periodic import tail_sum

    thr = budget_tail_threshold(K, tau)
    last = None
    for k in range(S.N):
        Sk = S.drop_front(k)
        if S.N >= 2 and Sk.N < min_levels:
            break
        ts = tail_sum(Sk, K) if Sk.N > 1 else 0.0
        last = (k, Sk, ts)
        if ts < thr:
            return k, Sk, ts, True
    return last[0], last[1], last[2], False


def step_homogeneity(S, tau: float, C: float | None = None, C1: float | None = None,
                     q_mode: str = "finite", E_max: float | None = None, grid=None,
                     replay_stride: int = 4, resolution: float = 1e-12,
                     min_levels: int = 2, calibration_seed: int = 0,
                     threads: int | None = None) -> StepHomogeneityBudget:
    """Finite-N version of ``|B_δ(x) ∩ Σ_N| >= τδ`` for ``x in Σ_N`` and ``δ <= δ_0``.

    ``K = max(C, C_1, Q, C Q^{1/2}, 8)``.  Leading levels are dropped until
    ``Σ T_{n+1}^6 e^{K T_{n+1}} ‖V_n - V_{n+1}‖ < (1-τ)/(3K^4)``; then
    ``δ_0 = min(K^{-1} T_1^{-3} e^{-K T_1}, (1-τ)/3)`` on the renumbered
    sequence.  Every level is certified on the (x, δ) lattice, and the
    scale-selection bookkeeping is replayed on the kept levels.
    """
    from .intervals import GridSpec, certify_arc_homogeneity, certify_homogeneity

    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if q_mode not in ("finite", "upper"):
        raise ValueError("q_mode must be 'finite' or 'upper'")
    kind = S.kind
    if kind == "continuum" and E_max is None:
        raise ValueError("continuum sequences need an energy window E_max")
    grid = grid or GridSpec()

    spectra = level_spectra(S, E_max, threads)
    shift = 0.0
    if kind == "continuum":
        bottom = min(A.lo for A in spectra)
        shift = max(0.0, 1.0 - bottom)

    calib = None
    if kind != "cmv" and (C is None or C1 is None):
        cal = calibrate_constants(kind, S.periods, seed=calibration_seed, threads=threads)
        calib = cal.to_dict()
        C = cal.C.fitted_value if C is None else C
        C1 = cal.C1.fitted_value if C1 is None else C1
    Cv = C if C is not None else 0.0
    C1v = C1 if C1 is not None else 0.0

    Q = max(_level_norm(kind, op, shift) for op in S.levels)
    Q_upper = Q + math.fsum(S.increments)
    K = budget_K(Cv, C1v, Q if q_mode == "finite" else Q_upper)

    dropped, Sk, ts, tail_ok = _drop_levels(S, K, tau, min_levels)
    thr = budget_tail_threshold(K, tau)
    T1 = Sk.periods[0]
    delta0 = budget_delta0(K, T1, tau)
    failure = None
    if not tail_ok:
        failure = (f"tail condition unachievable: sum {ts!r} >= {thr!r} "
                   f"with {Sk.N} levels left")
    elif not delta0 > 0:
        failure = "delta0 underflows to zero"

    reports = []
    if failure is None:
        for n, (op, A) in enumerate(zip(S.levels, spectra)):
            if kind == "cmv":
                rep = certify_arc_homogeneity(A, tau, delta0, grid=grid)
            else:
                rep = certify_homogeneity(A, tau, delta0, grid=grid)
            d = rep.to_dict()
            d.update(level=n + 1, period=S.periods[n], kept=n >= dropped)
            reports.append(d)

    replay = ReplaySummary()
    if failure is not None:
        replay.skipped = "budget failed"
    elif kind == "cmv":
        replay.skipped = "no calibrated constants for the CMV class; certification only"
    else:
        kept = [A.shift(shift) if shift else A for A in spectra[dropped:]]
        kept, snapped = _reconcile(kept, resolution)
        replay = _replay(kept, Sk, K, tau, delta0, grid, replay_stride, kind)
        replay.snapped_endpoints = snapped

    return StepHomogeneityBudget(tau, K, C, C1, Q, Q_upper, q_mode, delta0, ts, thr,
                                 tail_ok, dropped, list(range(dropped + 1, S.N + 1)),
                                 reports, replay, shift, calib, failure)


def _replay(spectra: list[IntervalSet], S, K: float, tau: float, delta0: float,
            grid, stride: int, kind: str) -> ReplaySummary:
    from .intervals import _x_samples, difference, intersect, measure

    N = len(spectra)
    T = S.periods
    log_inc = S.log_increments
    logK = math.log(K)
    out = ReplaySummary()
    last = spectra[-1]
    lo_N = np.array([p.lo for p in last.parts])
    hi_N = np.array([p.hi for p in last.parts])
    xs = _x_samples(lo_N, hi_N, min(grid.mesh_per_part, 2))
    deltas = [delta0 * 2.0 ** -k for k in range(0, grid.ladder + 1, max(1, stride))]
    arrays = [(np.array([p.lo for p in A.parts]), np.array([p.hi for p in A.parts]))
              for A in spectra]

    def fail(x, d, msg):
        out.failures.append(ReplayFailure(float(x), float(d), msg))

    for x in xs.tolist():
        s = 1.0 + math.sqrt(x) if kind == "continuum" else 1.0
        thr = [math.log(s) - logK - 3 * math.log(t) - K * t for t in T]
        rel = [(lo - x, hi - x) for lo, hi in arrays]
        for delta in deltas:
            out.samples += 1
            ld = math.log(delta)
            lo_r, hi_r = rel[-1]
            got = float(np.clip(np.minimum(hi_r, delta) - np.maximum(lo_r, -delta), 0, None).sum())
            if ld <= thr[-1]:
                out.band_case += 1
                k = np.nonzero((lo_r <= 0) & (hi_r >= 0))[0]
                if not k.size or hi_r[k[0]] - lo_r[k[0]] < delta:
                    fail(x, delta, "band shorter than delta in the small-scale case")
                elif got < tau * delta:
                    fail(x, delta, "density below tau in the small-scale case")
                continue
            n = max([i for i in range(N - 1) if ld <= thr[i]], default=0)
            out.scale_counts[n + 1] = out.scale_counts.get(n + 1, 0) + 1
            lo_n, hi_n = rel[n]
            near = np.clip(0.0, lo_n, hi_n)
            j = int(np.argmin(np.abs(near)))
            x0 = float(near[j])
            shift_bound = s * K ** 3 * math.fsum(
                T[l + 1] ** 3 * math.exp(log_inc[l]) for l in range(n, N - 1))
            if abs(x0) > shift_bound:
                fail(x, delta, f"nearest point of level {n + 1} is {abs(x0)!r} away")
                continue
            if shift_bound > 0:
                out.max_shift_ratio = max(out.max_shift_ratio, abs(x0) / shift_bound)
            L = (2 + tau) * delta / 3
            w_lo, w_hi = max(lo_n[j], -delta), min(hi_n[j], delta)
            if w_hi - w_lo < L:
                fail(x, delta, "no room for I_0 inside the band of the coarse level")
                continue
            a = min(max(x0 - L / 2, w_lo), w_hi - L)
            I0 = IntervalSet.of([(a, a + L)])
            local = [IntervalSet.of([(l_, h_) for l_, h_ in zip(lo, hi)
                                     if h_ >= -2 * delta and l_ <= 2 * delta])
                     for lo, hi in rel]
            lost = []
            for l in range(n, N - 1):
                m = measure(intersect(I0, difference(local[l], local[l + 1])))
                lb = (math.log(2 * delta) + 4 * logK + 6 * math.log(T[l + 1])
                      + K * T[l + 1] + log_inc[l])
                bound = math.exp(lb) if lb < 700 else math.inf
                if m > bound:
                    fail(x, delta, f"level {l + 1} loses {m!r} > {bound!r}")
                if bound > 0:
                    out.max_level_ratio = max(out.max_level_ratio, m / bound)
                lost.append(m)
            lower = measure(intersect(I0, local[n])) - math.fsum(lost)
            if lower < tau * delta * (1 - 1e-12):
                fail(x, delta, f"lower bound {lower!r} below tau*delta")
            elif got < lower * (1 - 1e-12):
                fail(x, delta, f"measured {got!r} below replayed bound {lower!r}")
    return out
