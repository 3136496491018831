"""One test per acceptance criterion, each with its tolerance and time limit.

Every test prints a single PASS/FAIL line (visible without ``-s``).
"""

import math
import time

import numpy as np
import pytest

from lphomog import continuum as cont
from lphomog import jacobi as jac
from lphomog.cmv import PeriodicCMV, arc_band_structure, ring_matrix
from lphomog.intervals import TWO_PI, Interval, arc_measure, certify_homogeneity, hausdorff_distance
from lphomog.limit_periodic import Schedule, generate_pt_sequence, tail_sum
from lphomog.verifiers import (budget_delta0, budget_K, budget_tail_threshold, level_spectra,
                               step_homogeneity, verify_band_length_bound,
                               verify_derivative_bound, verify_edge_stability,
                               verify_semicontinuity)


@pytest.fixture
def report(capsys):
    def emit(n, name, checks, elapsed, limit):
        ok = all(checks.values()) and elapsed < limit
        failed = [k for k, v in checks.items() if not v]
        if elapsed >= limit:
            failed.append(f"runtime {elapsed:.2f}s >= {limit}s")
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}  ({elapsed:.2f}s, limit {limit}s)"
        if failed:
            line += "  failed: " + "; ".join(failed)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def square_wells(seed, n):
    rng = np.random.default_rng(seed)
    return [cont.square_well(rng.uniform(0.5, 3.0), rng.uniform(-4, 4), rng.uniform(0.2, 0.8))
            for _ in range(n)]


def test_criterion_01_free_continuum(report):
    t = time.perf_counter()
    V = cont.PiecewisePotential.constant(math.pi)
    E = np.linspace(0, 100, 10_000)
    err = np.max(np.abs(np.asarray(cont.discriminant(V, E)) - 2 * np.cos(math.pi * np.sqrt(E))))
    bs = cont.band_structure_window(V, 100)
    gaps = bs.gap_lengths()
    elapsed = time.perf_counter() - t
    report(1, "free continuum oracle", {
        f"max |Δ - 2cos(π√E)| = {err:.2e} < 1e-12": err < 1e-12,
        "all gaps < 1e-9": all(g < 1e-9 for g in gaps),
        "window [0, 100] covered": len(bs.bands.parts) == 1 and
        abs(bs.bands.lo) < 1e-9 and abs(bs.bands.hi - 100) < 1e-9,
    }, elapsed, 1.0)


def test_criterion_02_period_two_jacobi(report):
    t = time.perf_counter()
    bs = jac.band_structure(jac.PeriodicJacobi((1.0, 1.0), (1.0, -1.0)))
    elapsed = time.perf_counter() - t
    r5 = math.sqrt(5)
    edges = [E for E, _ in bs.edges]
    want = [-r5, -1.0, 1.0, r5]
    err = max(abs(a - b) for a, b in zip(edges, want)) if len(edges) == 4 else math.inf
    report(2, "period-2 Jacobi closed form", {
        f"edge error {err:.1e} < 1e-10": err < 1e-10,
        "two bands": len(bs.bands.parts) == 2,
    }, elapsed, 0.1)


def test_criterion_03_eigen_root_equivalence(report):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        J = jac.random_jacobi(rng, int(rng.integers(1, 9)))
        for sign in (1, -1):
            eig = np.linalg.eigvalsh(jac.periodic_matrix(J, sign))
            res = np.abs(np.asarray(jac.discriminant(J, eig)) - 2 * sign)
            worst = max(worst, float(res.max()))
        for E, lab in jac.band_structure(J).edges:
            worst = max(worst, abs(jac.discriminant(J, E) - lab))
    elapsed = time.perf_counter() - t
    report(3, "eigenvalue / discriminant-root equivalence",
           {f"max |Δ(edge) ∓ 2| = {worst:.1e} < 1e-8": worst < 1e-8}, elapsed, 10.0)


def test_criterion_04_hausdorff_stability(report):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = -math.inf
    for _ in range(100):
        p = int(rng.integers(1, 9))
        J1 = jac.random_jacobi(rng, p)
        J2 = jac.PeriodicJacobi(tuple(np.maximum(0.3, np.add(J1.a, rng.uniform(-0.3, 0.3, p)))),
                                tuple(np.add(J1.b, rng.uniform(-0.5, 0.5, p))))
        dh = hausdorff_distance(jac.band_structure(J1).bands, jac.band_structure(J2).bands)
        worst = max(worst, dh - jac.sup_distance(J1, J2).operator_bound)
    elapsed = time.perf_counter() - t
    report(4, "Hausdorff stability of Jacobi bands",
           {f"max d_H - bound = {worst:.2e} <= 1e-9": worst <= 1e-9}, elapsed, 10.0)


def test_criterion_05_edge_stability(report):
    t = time.perf_counter()
    shift_err = 0.0
    for V in square_wells(5, 5):
        c = 0.3125
        E1 = cont.periodic_eigenvalues(V, 20)
        E2 = cont.periodic_eigenvalues(V.shifted(c), 20)
        shift_err = max(shift_err, float(np.max(np.abs(np.abs(E2 - E1) - c) / (1 + np.abs(E1)))))
    rng = np.random.default_rng(11)
    pairs = []
    for V in square_wells(11, 50):
        W = cont.PiecewisePotential(V.T, V.breakpoints,
                                    tuple(np.add(V.values, rng.uniform(-0.1, 0.1, 2))))
        pairs.append((V, W))
    fit = verify_edge_stability(pairs, n_max=20)
    C1 = fit.constant
    replay = verify_edge_stability(pairs, C1=C1, n_max=20)
    grounds = [c for c in replay.checks if c.label.startswith("ground")]
    elapsed = time.perf_counter() - t
    report(5, f"edge stability (fitted C1 = {C1:.4g})", {
        f"shift equality error {shift_err:.1e} at machine precision": shift_err < 1e-12,
        "zero violations on replay": replay.passed,
        "ground-state bound with the same C1": len(grounds) == 100 and all(c.holds(C1) for c in grounds),
    }, elapsed, 30.0)


def test_criterion_06_derivative_and_band_length(report):
    t = time.perf_counter()
    ens = square_wells(6, 50)
    checks = {}
    for name, fn in (("derivative", verify_derivative_bound), ("band-length", verify_band_length_bound)):
        fit = fn(ens, E_max=100)
        again = fn(ens, C=fit.constant, E_max=100)
        checks[f"{name} closure (C = {fit.constant:.4g})"] = again.passed and math.isfinite(fit.constant)
    free = cont.PiecewisePotential.constant(math.pi)
    cd = verify_derivative_bound([free], E_max=100).constant
    cb = verify_band_length_bound([free], E_max=100).constant
    checks[f"free-case C finite (derivative {cd:.4g}, band-length {cb:.5g})"] = \
        math.isfinite(cd) and math.isfinite(cb)
    elapsed = time.perf_counter() - t
    report(6, "derivative and band-length bounds", checks, elapsed, 60.0)


def test_criterion_07_flagship(report):
    t = time.perf_counter()
    S = generate_pt_sequence("jacobi", 7, 4, Schedule.default(4))
    B = step_homogeneity(S, 0.5)
    elapsed = time.perf_counter() - t
    T1 = S.periods[B.dropped]
    K = budget_K(B.C, B.C1, B.Q)
    d0 = min(1 / K * T1 ** -3 * math.exp(-K * T1), (1 - 0.5) / 3)
    kept = S.drop_front(B.dropped)
    report(7, f"flagship step homogeneity (δ0 = {B.delta0:.4e})", {
        "schedule is T_n = 2^n, ε_n = exp(-4^{n+1})": S.schedule == Schedule.default(4),
        "δ0 from the formula": B.delta0 == pytest.approx(d0, rel=1e-15) and
        B.delta0 == budget_delta0(K, T1, 0.5),
        "tail condition": B.tail_ok and tail_sum(kept, K) < budget_tail_threshold(K, 0.5),
        "every level certified": len(B.level_reports) == 4 and all(r["pass"] for r in B.level_reports),
        "replay without failures": not B.replay.failures and B.replay.samples > 0,
        "overall pass": B.passed,
    }, elapsed, 120.0)


def test_criterion_08_cmv(report):
    t = time.perf_counter()
    free = arc_measure(arc_band_structure(PeriodicCMV((0j,) * 4)).arcs)
    ev = np.angle(np.linalg.eigvals(ring_matrix(PeriodicCMV((0.5, 0.5)), 400)))
    half_truncation = float(np.min(np.abs(ev)))
    arcs = arc_band_structure(PeriodicCMV((0.5, 0.5))).arcs
    half_arcs = arcs.to_list()[0][0]
    elapsed = time.perf_counter() - t
    report(8, "CMV free and constant cases", {
        f"free arc measure error {abs(free - TWO_PI):.1e} < 1e-10": abs(free - TWO_PI) < 1e-10,
        f"truncation half-width {half_truncation:.5f} vs π/3": abs(half_truncation - math.pi / 3) < 1e-3,
        f"arc half-width {half_arcs:.12f} vs π/3": abs(half_arcs - math.pi / 3) < 1e-3,
    }, elapsed, 30.0)


def test_criterion_09_semicontinuity(report):
    t = time.perf_counter()
    S = generate_pt_sequence("jacobi", 7, 4)
    spectra = level_spectra(S)
    first = spectra[0].parts[0]
    # the cluster descending from the first band of the first level
    cluster = [p for A in spectra for p in A.parts if p.hi >= first.lo - 1e-6 and p.lo <= first.hi + 1e-6]
    I = Interval(min(p.lo for p in cluster), max(p.hi for p in cluster))
    rep = verify_semicontinuity(S, I, spectra=spectra)
    elapsed = time.perf_counter() - t
    report(9, "semicontinuity of band measure", {
        f"|I∩Σ_N| = {rep.deepest:.12f} >= max {rep.trailing_max:.12f} - {rep.tolerance:.2e}": rep.passed,
        "tolerance is 10 x tail sum": rep.tolerance == pytest.approx(10 * math.fsum(S.increments)),
    }, elapsed, 30.0)


def test_criterion_10_norms(report):
    t = time.perf_counter()
    rng = np.random.default_rng(10)
    ok = all(cont.besicovitch_norm(V) <= cont.stepanov_norm(V)
             for V in (cont.random_piecewise(rng) for _ in range(100)))
    ind = cont.PiecewisePotential(2.0, (0.0, 1.0, 2.0), (1.0, 0.0))
    nb, ns = cont.besicovitch_norm(ind), cont.stepanov_norm(ind)
    elapsed = time.perf_counter() - t
    report(10, "Besicovitch and Stepanov norms", {
        "‖V‖_B <= ‖V‖_S on 100 potentials": ok,
        f"indicator norms ({nb!r}, {ns!r})": nb == math.sqrt(0.5) and ns == 1.0,
    }, elapsed, 5.0)
