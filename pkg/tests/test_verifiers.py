import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lphomog import continuum as cont
from lphomog import jacobi as jac
from lphomog.intervals import Interval, IntervalSet, certify_homogeneity, normalize
from lphomog.limit_periodic import Schedule, generate_pt_sequence, tail_sum
from lphomog.verifiers import (Check, FitResult, budget_delta0, budget_K, budget_tail_threshold,
                               calibrate_constants, fit_constant, gap_length_partial_sums,
                               level_spectra, normalize_bottom, replay_coefficient,
                               solve_c_exp, step_homogeneity, verify_band_length_bound,
                               verify_derivative_bound, verify_edge_stability,
                               verify_semicontinuity)

FREE_PI = cont.PiecewisePotential.constant(math.pi)


def square_wells(seed, n):
    rng = np.random.default_rng(seed)
    return [cont.square_well(rng.uniform(0.5, 3.0), rng.uniform(-4, 4), rng.uniform(0.2, 0.8))
            for _ in range(n)]


def well_pairs(seed, n):
    rng = np.random.default_rng(seed)
    out = []
    for V in square_wells(seed, n):
        dv = rng.uniform(-0.1, 0.1, size=2)
        W = cont.PiecewisePotential(V.T, V.breakpoints, tuple(np.add(V.values, dv)))
        out.append((V, W))
    return out


# -- fitting primitives ---------------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0, 50))
def test_solve_c_exp(r, B):
    C = solve_c_exp(r, B)
    assert C * math.exp(B * C) == pytest.approx(r, rel=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-8, 1e3), st.floats(1e-3, 1e3), st.floats(0, 20),
       st.sampled_from(["linear", "growth", "decay"]))
def test_minimal_constant_is_tight(lhs, a, b, kind):
    c = Check(0, "x", 0.0, lhs, a, b, kind)
    C = c.minimal_constant()
    assert c.holds(C)
    if C > 1e-300:
        assert not c.holds(C * (1 - 1e-9))


def test_fit_monotone_in_ensemble():
    rng = np.random.default_rng(0)
    checks = [Check(i, "x", 0.0, float(rng.uniform(0, 3)), float(rng.uniform(0.1, 2)),
                    float(rng.uniform(0, 2)), "growth") for i in range(40)]
    fits = [fit_constant("C", checks[:k]).fitted_value for k in range(1, 41)]
    assert fits == sorted(fits)
    with pytest.raises(ValueError):
        fit_constant("C", [])


def test_fit_result_round_trip():
    f = fit_constant("C", [Check(0, "x", 1.0, 2.0, 1.0)])
    assert FitResult.from_dict(json.loads(json.dumps(f.to_dict()))) == f


# -- derivative bound -----------------------------------------------------------------------

def test_free_derivative_fit_finite():
    rep = verify_derivative_bound([FREE_PI], E_max=100)
    assert rep.mode == "fit" and 0 < rep.constant < math.inf
    assert rep.passed
    # the closed form stays below π/√E
    for c in rep.checks:
        if c.at > 0:
            assert c.lhs <= math.pi / math.sqrt(c.at) * (1 + 1e-9)


def test_derivative_fit_then_verify():
    ens = square_wells(1, 12)
    fit = verify_derivative_bound(ens, E_max=40)
    again = verify_derivative_bound(ens, C=fit.constant, E_max=40)
    assert again.mode == "verify" and again.passed
    smaller = verify_derivative_bound(ens, C=fit.constant * (1 - 1e-6), E_max=40)
    assert not smaller.passed


def test_derivative_samples_cover_edges_and_midpoints():
    rep = verify_derivative_bound([cont.square_well(2.0, 3.0)], C=50.0, E_max=20)
    bs = cont.band_structure_window(cont.square_well(2.0, 3.0), 20)
    at = {c.at for c in rep.checks}
    for band in bs.floquet_bands():
        assert band.lo in at and band.hi in at and 0.5 * (band.lo + band.hi) in at
    # 3 fixed points plus 32 interior samples per band
    assert len(rep.checks) == 35 * len(bs.floquet_bands())


def test_derivative_rescaling_covariance():
    V = cont.square_well(2.0, 1.5)
    Vp = V.rescaled_to_pi()
    s = (V.T / math.pi) ** 2
    for E in (0.3, 2.0, 7.5):
        d = cont.discriminant_derivative(V, E)
        dp = cont.discriminant_derivative(Vp, s * E)
        assert dp * s == pytest.approx(d, rel=1e-8)


def test_jacobi_derivative_fit():
    rng = np.random.default_rng(2)
    ens = [jac.random_jacobi(rng, int(rng.integers(1, 7))) for _ in range(20)]
    rep = verify_derivative_bound(ens)
    assert rep.passed and math.isfinite(rep.constant)


# -- band length ------------------------------------------------------------------------------

def test_free_band_length_constant():
    rep = verify_band_length_bound([FREE_PI], E_max=100)
    # edges carry ~1e-11 absolute error on bands of length ~1
    assert rep.constant == pytest.approx(4 / math.pi ** 2, rel=1e-8)


def test_band_length_fit_then_verify_and_shift():
    ens = square_wells(3, 10)
    fit = verify_band_length_bound(ens, E_max=40)
    assert verify_band_length_bound(ens, C=fit.constant, E_max=40).passed
    shifted = [V.shifted(2.5) for V in ens]
    assert verify_band_length_bound(shifted, C=fit.constant, E_max=42.5).passed


def test_normalize_bottom():
    V = cont.square_well(2.0, -3.0)
    W, shift = normalize_bottom(V, 30)
    assert cont.band_structure_window(W, 30 + shift).bands.lo == pytest.approx(0.0, abs=1e-10)


def test_verifier_errors():
    with pytest.raises(ValueError):
        verify_band_length_bound([], E_max=10)
    with pytest.raises(ValueError):
        verify_edge_stability([])
    with pytest.raises(ValueError):
        verify_derivative_bound([FREE_PI], C=-1.0, E_max=10)


# -- edge stability ---------------------------------------------------------------------------

def test_constant_shift_pair_exact():
    V = cont.square_well(1.5, 2.0)
    c = 0.375
    rep = verify_edge_stability([(V, V.shifted(c))], C1=1.0, n_max=10)
    assert rep.passed
    for ch in rep.checks:
        if ch.label == "edge":
            assert ch.lhs == pytest.approx(c, abs=1e-12)
    assert rep.extra["pair_info"][0]["distance"] == pytest.approx(c, rel=1e-14)


def test_identical_pair_zero():
    V = cont.square_well(1.5, 2.0)
    rep = verify_edge_stability([(V, V)], C1=1e-9, n_max=6)
    assert all(c.lhs == 0 for c in rep.checks if c.label == "edge")


def test_edge_fit_closure_and_growth():
    pairs = well_pairs(4, 10)
    fit = verify_edge_stability(pairs, n_max=12)
    C1 = fit.constant
    assert verify_edge_stability(pairs, C1=C1, n_max=12).passed
    # ratio |ΔE_n| / ((1+T²Q)‖δV‖) against the (1 + T√|E_n|) profile with 10% slack
    for (V, W), info in zip(pairs, fit.extra["pair_info"]):
        E2 = cont.periodic_eigenvalues(W, 12)
        E1 = cont.periodic_eigenvalues(V, 12)
        base = (1 + V.T ** 2 * info["Q"]) * info["distance"]
        for n in range(12):
            ratio = abs(E1[n] - E2[n]) / base
            assert ratio <= 1.1 * C1 * (1 + V.T * math.sqrt(abs(E2[n])))
    grounds = [c for c in fit.checks if c.label.startswith("ground")]
    assert grounds and all(c.holds(C1) for c in grounds)


def test_edge_mismatched_periods():
    with pytest.raises(ValueError):
        verify_edge_stability([(cont.square_well(1.0, 1.0), cont.square_well(2.0, 1.0))])
    J = jac.PeriodicJacobi((1.0,), (0.0,))
    K = jac.PeriodicJacobi((1.0, 1.0), (0.0, 0.0))
    with pytest.raises(ValueError):
        verify_edge_stability([(J, K)])


def test_jacobi_edge_analogue():
    rng = np.random.default_rng(6)
    pairs = []
    for _ in range(10):
        J = jac.random_jacobi(rng, 4)
        db = rng.uniform(-0.05, 0.05, size=4)
        pairs.append((J, jac.PeriodicJacobi(J.a, tuple(np.add(J.b, db)))))
    rep = verify_edge_stability(pairs, C1=1.0)
    assert rep.passed


# -- budget ------------------------------------------------------------------------------------

def reference_budget(C, C1, Q, T1, tau):
    K = max(C, C1, Q, C * Q ** 0.5, 8)
    d0 = min(K ** -1 * T1 ** -3 * math.exp(-K * T1), (1 - tau) / 3)
    return K, d0, (1 - tau) / (3 * K ** 4)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 50), st.floats(1, 40), st.floats(0.01, 0.99))
def test_budget_matches_reference(C, C1, Q, T1, tau):
    K, d0, thr = reference_budget(C, C1, Q, T1, tau)
    assert budget_K(C, C1, Q) == pytest.approx(K, rel=1e-15)
    # exp(-K T1) magnifies a one-ulp difference in K; check the rest from the same K
    K = budget_K(C, C1, Q)
    d0 = min(K ** -1 * T1 ** -3 * math.exp(-K * T1), (1 - tau) / 3)
    thr = (1 - tau) / (3 * K ** 4)
    assert budget_delta0(K, T1, tau) == pytest.approx(d0, rel=1e-15)
    assert budget_tail_threshold(K, tau) == pytest.approx(thr, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.fractions(0, 1))
def test_replay_coefficient_exact(tau):
    assert replay_coefficient(Fraction(tau)) == tau
    assert (2 + tau) / 3 - 2 * (1 - tau) / 3 == tau


def test_flagship_budget():
    S = generate_pt_sequence("jacobi", 7, 4)
    B = step_homogeneity(S, 0.5)
    assert B.passed and B.tail_ok and B.failure is None
    T1 = S.periods[B.dropped]
    K, d0, thr = reference_budget(B.C, B.C1, B.Q, T1, 0.5)
    assert B.K == pytest.approx(K, rel=1e-15) and B.delta0 == pytest.approx(d0, rel=1e-15)
    assert B.tail_threshold == pytest.approx(thr, rel=1e-15)
    kept = S.drop_front(B.dropped)
    assert B.tail_sum == pytest.approx(tail_sum(kept, K), rel=1e-12)
    assert B.tail_sum < B.tail_threshold
    assert len(B.level_reports) == 4 and all(r["pass"] for r in B.level_reports)
    assert B.replay.samples > 0 and not B.replay.failures
    assert B.Q_upper >= B.Q


def test_dropping_is_minimal():
    S = generate_pt_sequence("jacobi", 7, 4)
    B = step_homogeneity(S, 0.5)
    if B.dropped:
        prev = S.drop_front(B.dropped - 1)
        assert tail_sum(prev, B.K) >= B.tail_threshold


def test_slow_schedule_fails_tail():
    S = generate_pt_sequence("jacobi", 7, 4, Schedule.exponential(4, 3.0))
    B = step_homogeneity(S, 0.99)
    assert not B.passed and not B.tail_ok
    assert "tail" in B.failure


def test_single_level_reduces_to_periodic():
    S = generate_pt_sequence("jacobi", 3, 1)
    B = step_homogeneity(S, 0.5)
    assert B.passed and B.tail_sum == 0 and B.dropped == 0
    bands = jac.band_structure(S.levels[0]).bands
    assert min(p.length for p in bands.parts) >= B.delta0
    assert certify_homogeneity(bands, 0.5, B.delta0).passed


def test_cmv_step_homogeneity_skips_replay():
    B = step_homogeneity(generate_pt_sequence("cmv", 2, 4), 0.5)
    assert B.passed and B.replay.skipped


def test_budget_serialization():
    B = step_homogeneity(generate_pt_sequence("jacobi", 7, 4), 0.5)
    d = json.loads(B.to_json())
    assert d["schema_version"] == 1 and d["pass"] is True
    assert B.to_csv().splitlines()[0] == "level,period,kept,min_density,witness_x,witness_delta,pass"


def test_calibration_deterministic():
    a = calibrate_constants("jacobi", [2, 4], seed=1, size=6)
    b = calibrate_constants("jacobi", [2, 4], seed=1, size=6)
    assert a.to_dict() == b.to_dict()
    assert calibrate_constants("cmv", [2]).C is None


# -- semicontinuity and gap sums -------------------------------------------------------------

def test_constant_sequence_semicontinuity():
    S = generate_pt_sequence("jacobi", 1, 3, Schedule((2, 4, 8), (-math.inf, -math.inf)))
    rep = verify_semicontinuity(S, (-3, 3))
    assert rep.passed
    assert rep.measures == pytest.approx([rep.measures[0]] * 3, rel=1e-12)


def test_synthetic_semicontinuity():
    N = 40
    spectra = [normalize([(0.0, 1 + 1 / j)]) for j in range(1, N + 1)]
    dists = [1 / j - 1 / (j + 1) for j in range(1, N)]
    rep = verify_semicontinuity(None, (0, 2), spectra=spectra, increments=dists,
                                limit=IntervalSet((Interval(0.0, 1.0),)), trailing=10)
    assert rep.deepest == 1.0 and rep.passed
    assert rep.measures[-1] == pytest.approx(1 + 1 / N)
    with pytest.raises(ValueError):
        verify_semicontinuity(None, (0, 2), spectra=spectra)


def test_flagship_semicontinuity():
    S = generate_pt_sequence("jacobi", 7, 4)
    spectra = level_spectra(S)
    first = spectra[0].parts[0]
    rep = verify_semicontinuity(S, first, spectra=spectra)
    assert rep.passed
    assert rep.tolerance == pytest.approx(10 * math.fsum(S.increments))


def test_continuum_window_must_contain_interval():
    S = generate_pt_sequence("continuum", 1, 2)
    with pytest.raises(ValueError):
        verify_semicontinuity(S, (0, 30), E_max=20)


def test_free_gap_sums_vanish():
    S = generate_pt_sequence("continuum", 0, 2, Schedule((1, 2), (-math.inf,)))
    free = type(S)(S.kind, 0, S.schedule, [FREE_PI, FREE_PI.extended(2)], [-math.inf], [0.0])
    rep = gap_length_partial_sums(free, E_max=60)
    assert all(s < 1e-8 for s in rep.sums)


def test_square_well_gap_sum_stable():
    V = cont.square_well(math.pi, 3.0)
    S = generate_pt_sequence("continuum", 0, 2, Schedule((1, 2), (-math.inf,)))
    const = type(S)(S.kind, 0, S.schedule, [V, V.extended(2)], [-math.inf], [0.0])
    rep = gap_length_partial_sums(const, E_max=30)
    assert rep.sums[0] > 0.1
    assert rep.sums[1] == pytest.approx(rep.sums[0], abs=1e-9)


@pytest.mark.parametrize("kind", ["jacobi", "cmv"])
def test_default_gap_sums_nondecreasing(kind):
    rep = gap_length_partial_sums(generate_pt_sequence(kind, 7, 4))
    assert rep.nondecreasing
