"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import itertools
import math
import time
from fractions import Fraction
from importlib import resources

import numpy as np
import pytest
from scipy.special import expit

from seqtrial.binary import Action, BinaryDesignSpec, solve, transition_probs
from seqtrial.dist import BetaParams, RngStream
from seqtrial.harness import (Scenario, comparison_designs, ecmo_study, power_frontier, prior_sensitivity,
                              run_oc, scenarios, simulate_replications)
from seqtrial.monitor import thompson_prob, thompson_prob_rational
from seqtrial.normal import NormalDesignSpec, quadrature_weights, solve_normal
from seqtrial.pg import (CentreData, GibbsConfig, PgLaplaceProblem, gibbs_batch, gibbs_multicentre,
                         pg_laplace_prob_superior, pg_mean, sample_pg, validate_pg_laplace)
from seqtrial.samplesize import DEFAULT_DELTAS, DEFAULT_SIGMAS, DesignInputs, constancy_grid, freq_n, inoue_constant

from test_binary import expectimax
from test_monitor import literal_thompson
from test_pg import PUBLISHED


def report(capsys, number, title, checks, elapsed=None, limit=None):
    """Print one line for the criterion and fail with every unmet check listed."""
    if limit is not None:
        checks = list(checks) + [(f"runtime {elapsed:.1f}s < {limit:g}s", elapsed < limit)]
    failed = [name for name, ok in checks if not ok]
    status = "PASS" if not failed else "FAIL"
    timing = f" [{elapsed:.1f}s]" if elapsed is not None else ""
    with capsys.disabled():
        print(f"\n{status} criterion {number}: {title}{timing}")
        for name in failed:
            print(f"    unmet: {name}")
    assert not failed, f"criterion {number}: " + "; ".join(failed)


def test_goal_constancy_and_sample_sizes(capsys):
    t = time.perf_counter()
    base = DesignInputs(alpha=0.05, beta=0.10, pi0=0.5, K=1.0)
    const = inoue_constant(0.05, 0.10, 0.5, 1.0)
    rows = constancy_grid(base, DEFAULT_DELTAS, DEFAULT_SIGMAS)
    worst = max(abs(r["G_B"] - 0.928) for r in rows)
    checks = [
        (f"constant {const:.6f} rounds to 0.928", round(const, 3) == 0.928),
        (f"max |G_B - constant| {max(abs(r['G_B'] - const) for r in rows):.1e} < 1e-9",
         all(abs(r["G_B"] - const) < 1e-9 for r in rows)),
        (f"max |G_B - 0.928| {worst:.2e} within rounding of the stated constant", worst < 5e-4),
        (f"grid covers {len(rows)} (delta, sigma) pairs", len(rows) == 100 * 3),
    ]
    for delta, want in ((0.10, 857), (0.05, 3426), (0.20, 214)):
        n_real, n_ceil = freq_n(DesignInputs(delta=delta))
        checks.append((f"n_ceil at delta={delta} is {n_ceil} (n_real {n_real:.3f}), expected {want}", n_ceil == want))
    report(capsys, 1, "goal-function constancy and frequentist sample sizes", checks,
           time.perf_counter() - t, 1.0)


def test_ecmo_exact_numbers(capsys):
    t = time.perf_counter()
    sup = thompson_prob_rational((11, 11), (0, 1))
    trt = BetaParams(1, 1).update(11, 11)
    ctrl = BetaParams(1, 1).update(0, 1)
    inf = BetaParams(4, 16).update(0, 1)
    checks = [
        (f"superiority {sup} == 90/91", sup == Fraction(90, 91)),
        ("treatment posterior mean 12/13", Fraction(int(trt.alpha), int(trt.alpha + trt.beta)) == Fraction(12, 13)),
        ("control posterior mean 1/3", Fraction(int(ctrl.alpha), int(ctrl.alpha + ctrl.beta)) == Fraction(1, 3)),
        ("informative control mean 4/21", Fraction(int(inf.alpha), int(inf.alpha + inf.beta)) == Fraction(4, 21)),
        ("float route agrees", abs(thompson_prob((11, 11), (0, 1)) - 90 / 91) < 1e-15),
    ]
    report(capsys, 2, "ECMO exact posterior numbers", checks, time.perf_counter() - t, 1.0)


# published validation panel: (n, delta) -> (mean, max) absolute error
PANEL = {(10, 0.0): (0.0085, 0.0281), (10, 0.15): (0.0038, 0.0182), (10, 0.25): (0.0019, 0.0115),
         (50, 0.0): (0.0097, 0.0303), (50, 0.15): (0.0038, 0.0097), (50, 0.25): (0.0012, 0.0079),
         (200, 0.0): (0.0093, 0.0213), (200, 0.15): (0.0009, 0.0084), (200, 0.25): (0.0000, 0.0007)}


def test_pg_laplace_parity(capsys):
    t = time.perf_counter()
    checks = []
    for n, f1, f0, _, pg_pub in PUBLISHED:
        s1, s0 = round(f1 * n), round(f0 * n)
        got = pg_laplace_prob_superior(PgLaplaceProblem(s1, n, s0, n)).prob
        checks.append((f"cell n={n} s1={s1} s0={s0}: {got:.4f} vs {pg_pub}", abs(got - pg_pub) <= 0.01))
    small = validate_pg_laplace(n_datasets=50, rng=RngStream(0))
    for c in small:
        checks.append((f"50-dataset mean error n={c.n} delta={c.delta}: {c.mean_abs_error:.4f} < 0.01",
                       c.mean_abs_error < 0.01))
    big = validate_pg_laplace(n_datasets=200, rng=RngStream(0))
    for c in big:
        want = PANEL[(c.n, c.delta)][0]
        checks.append((f"200-dataset mean error n={c.n} delta={c.delta}: {c.mean_abs_error:.4f} vs {want}",
                       abs(c.mean_abs_error - want) <= 0.003))
    last = [c for c in big if (c.n, c.delta) == (200, 0.25)][0]
    checks.append((f"n=200 delta=0.25 max error {last.max_abs_error:.4f} near 0.0007", last.max_abs_error < 0.003))
    report(capsys, 3, "Polya-Gamma Laplace parity with the published accuracy table", checks,
           time.perf_counter() - t, 120.0)


# published comparison table: (delta, design index) -> (E[N], declaration rate)
COMPARISON = {
    (0.00, 0): (25.9, 0.029), (0.00, 1): (42.4, 0.043), (0.00, 2): (99.5, 0.033), (0.00, 3): (100.0, 0.028),
    (0.05, 0): (25.5, 0.047), (0.05, 1): (52.9, 0.145), (0.05, 2): (97.8, 0.134), (0.05, 3): (100.0, 0.120),
    (0.15, 0): (20.0, 0.100), (0.15, 1): (62.8, 0.587), (0.15, 2): (85.4, 0.625), (0.15, 3): (100.0, 0.600),
    (0.25, 0): (14.3, 0.179), (0.25, 1): (47.5, 0.931), (0.25, 2): (64.8, 0.959), (0.25, 3): (100.0, 0.954),
}
FLOOR = {0: 0.015, 1: 0.03, 2: 0.03, 3: 0.015}


def test_design_comparison_parity(capsys):
    t = time.perf_counter()
    designs = comparison_designs()
    checks = []
    for s in scenarios(root_seed=2024, reps=10_000):
        delta = round(s.delta, 2)
        for i, d in enumerate(designs):
            n_used, declared = simulate_replications(d, s)
            en, dec = n_used.mean(), declared.mean()
            se_n = n_used.std() / math.sqrt(s.n_replications)
            se_d = math.sqrt(dec * (1 - dec) / s.n_replications)
            want_n, want_d = COMPARISON[(delta, i)]
            tol_n, tol_d = max(3 * se_n, FLOOR[i]), max(3 * se_d, FLOOR[i])
            checks.append((f"{d.label} delta={delta} E[N] {en:.2f} vs {want_n} (tol {tol_n:.3f})",
                           abs(en - want_n) <= tol_n))
            checks.append((f"{d.label} delta={delta} declare {dec:.4f} vs {want_d} (tol {tol_d:.4f})",
                           abs(dec - want_d) <= tol_d))
    report(capsys, 4, "operating characteristics of the four comparison designs", checks,
           time.perf_counter() - t, 600.0)


def test_calibrated_sensitivity_and_frontier(capsys):
    t = time.perf_counter()
    priors = (BetaParams(1, 1), BetaParams(0.5, 0.5), BetaParams(3, 7))
    rows = prior_sensitivity(priors, deltas=(0.0, 0.25), reps=5000, root_seed=7)
    get = {(r.prior, round(r.delta, 2)): r for r in rows}
    uni = get[(BetaParams(1, 1), 0.25)]
    inf = get[(BetaParams(3, 7), 0.0)]
    front = power_frontier(costs=(1e-4,), deltas=(0.25,), reps=5000, root_seed=7)[0]
    checks = [
        (f"Beta(1,1) delta=0.25 E[N] {uni.expected_n:.2f} vs 23.8 +- 1.0", abs(uni.expected_n - 23.8) <= 1.0),
        (f"Beta(1,1) delta=0.25 power {uni.power:.4f} vs 0.704 +- 0.03", abs(uni.power - 0.704) <= 0.03),
        (f"c=1e-4 delta=0.25 power {front.power:.4f} vs 0.81 +- 0.03", abs(front.power - 0.81) <= 0.03),
        (f"c=1e-4 delta=0.25 E[N] {front.expected_n:.2f} vs 29 +- 1.5", abs(front.expected_n - 29) <= 1.5),
        (f"Beta(3,7) delta=0 power {inf.power:.4f} vs 0.078 +- 0.02", abs(inf.power - 0.078) <= 0.02),
    ]
    report(capsys, 5, "calibrated design prior sensitivity and power frontier", checks,
           time.perf_counter() - t, 1200.0)


def test_ecmo_design_characteristics(capsys):
    t = time.perf_counter()
    rep = ecmo_study(root_seed=42, reps=10_000)
    oc = {(r["p1"], r["p0"]): r for r in rep["operating_characteristics"]}
    strong, mid, null = oc[(0.8, 0.2)], oc[(0.5, 0.2)], oc[(0.2, 0.2)]
    checks = [
        (f"(0.8,0.2) E[N] {strong['expected_n_per_arm']:.3f} vs 3.0 +- 0.3",
         abs(strong["expected_n_per_arm"] - 3.0) <= 0.3),
        (f"(0.8,0.2) median stop {strong['median_stop_stage']:g} == 2", strong["median_stop_stage"] == 2),
        (f"(0.8,0.2) declare {strong['declare_rate']:.4f} vs 0.83 +- 0.02", abs(strong["declare_rate"] - 0.83) <= 0.02),
        (f"(0.2,0.2) declare {null['declare_rate']:.4f} vs 0.13 +- 0.015", abs(null["declare_rate"] - 0.13) <= 0.015),
        (f"(0.5,0.2) median stop {mid['median_stop_stage']:g} vs 6 +- 1", abs(mid["median_stop_stage"] - 6) <= 1),
    ]
    report(capsys, 6, "ECMO calibrated design operating characteristics", checks, time.perf_counter() - t, 120.0)


def test_binary_solve_runtime(capsys):
    spec = BinaryDesignSpec(BetaParams(1, 1), BetaParams(1, 1), 5e-4, 200)
    t = time.perf_counter()
    table = solve(spec)
    elapsed = time.perf_counter() - t
    checks = [("table covers 201 stages", len(table.actions) == 201)]
    target = "met" if elapsed < 1.0 else "missed"
    report(capsys, 7, f"T=200 lattice backward induction runtime (1 s target {target})", checks, elapsed, 10.0)


def test_oracle_suites(capsys):
    t = time.perf_counter()
    checks = []
    # lattice solver against exhaustive rational tree search
    ok = True
    for T, cost in itertools.product((1, 2, 3, 4), (Fraction(1, 1000), Fraction(1, 100))):
        value = expectimax(1, 1, 1, 1, cost, T)
        table = solve(BinaryDesignSpec(BetaParams(1, 1), BetaParams(1, 1), float(cost), T))
        for k in range(T + 1):
            for seq in itertools.product(itertools.product((0, 1), repeat=2), repeat=k):
                s1, s0 = sum(y for y, _ in seq), sum(y for _, y in seq)
                v, h, cont = value(seq)
                ok &= abs(table.value(k, s1, s0) - float(v)) < 1e-14
                ok &= (table.action(k, s1, s0) == Action.CONTINUE) == (cont is not None and cont < h)
    checks.append(("lattice DP equals exhaustive expectimax for T <= 4", ok))
    v = [solve_normal(NormalDesignSpec(grid_points=g)).value_at_zero(0) for g in (2001, 4001, 8001)]
    checks.append((f"normal V_0(0) under grid doubling {v[0]:.6f}/{v[1]:.6f}/{v[2]:.6f}",
                   abs(v[1] - v[0]) < 1e-3 and abs(v[2] - v[1]) < 1e-3))
    grid = np.linspace(-6, 6, 601)
    rows = max(np.max(np.abs(quadrature_weights(grid, tau).sum(axis=1) - 1)) for tau in (0.02, 0.45, 1.5))
    checks.append((f"quadrature rows sum to one ({rows:.1e})", rows < 1e-12))
    spec = BinaryDesignSpec(BetaParams(0.5, 0.5), BetaParams(3, 7), 5e-4, 200)
    mass = max(np.max(np.abs(transition_probs(spec, k).sum(axis=(0, 1)) - 1)) for k in (0, 10, 199))
    checks.append((f"transition mass conserved ({mass:.1e})", mass < 1e-14))
    g = np.random.default_rng(10)
    ok = True
    for _ in range(100):
        n1, n2 = (int(x) for x in g.integers(0, 30, 2))
        r1, r2 = int(g.integers(0, n1 + 1)), int(g.integers(0, n2 + 1))
        ok &= thompson_prob_rational((r2, n2), (r1, n1)) == literal_thompson(r1, n1, r2, n2)
    checks.append(("Thompson closed form equals the literal sum on 100 tallies", ok))
    for c in (0.0, 0.5, 2.0):
        w = sample_pg(1, np.full(100_000, c), RngStream(3))
        se = w.std() / math.sqrt(w.size)
        checks.append((f"PG(1,{c}) mean {w.mean():.5f} vs {pg_mean(c):.5f} within 4 SE",
                       abs(w.mean() - pg_mean(c)) < 4 * se))
    R, N, nn = 200, 8, 10
    gen = RngStream(11).generator()
    mu_true = np.array([0.4, -0.3])
    psi = gen.multivariate_normal(mu_true, [[0.8, 0.2], [0.2, 0.8]], size=(R, N))
    n = np.full((R, N, 2), nn)
    mus, _, _ = gibbs_batch(gen.binomial(n, expit(psi)), n, GibbsConfig(n_burn=300, n_keep=700), gen,
                            keep_psi=False)
    lo, hi = np.quantile(mus, 0.05, axis=0), np.quantile(mus, 0.95, axis=0)
    cover = ((lo <= mu_true) & (mu_true <= hi)).mean(axis=0)
    checks.append((f"Gibbs 90% interval coverage {cover[0]:.3f}/{cover[1]:.3f} within 0.90 +- 0.05",
                   bool(np.all(np.abs(cover - 0.90) <= 0.05))))
    report(capsys, 8, "oracle suites", checks, time.perf_counter() - t)


def test_bundled_centre_data(capsys):
    t = time.perf_counter()
    data = CentreData.from_csv(resources.files("seqtrial") / "data" / "synthetic_centres.csv")
    res = gibbs_multicentre(data, GibbsConfig(n_burn=500, n_keep=2000, seed=0))
    p = res.prob_mu1_gt_mu2
    checks = [
        ("bundled file has eight centres", data.n_centres == 8),
        ("chain finite", bool(np.all(np.isfinite(res.mu)) and np.all(np.isfinite(res.psi)))),
        (f"Pr(mu1 > mu2) = {p:.3f} is a probability", 0.0 <= p <= 1.0),
    ]
    report(capsys, 9, "bundled eight-centre data through the Gibbs sampler", checks, time.perf_counter() - t)
