import itertools
import math
import time
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqtrial.binary import (Action, BinaryDesignSpec, BinaryPolicyTable, BinaryState, evaluate_path,
                             posterior_delta, predictive_success, solve, stopping_region, terminal_value,
                             transition_probs)
from seqtrial.dist import BetaParams, RngStream, prob_superior_normal_approx

U = BetaParams(1, 1)


def spec(cost=0.01, horizon=4, prior1=U, prior0=U, **kw):
    return BinaryDesignSpec(prior1, prior0, cost, horizon, **kw)


def expectimax(a1, b1, a0, b0, cost: Fraction, T: int):
    """Exhaustive tree search over outcome sequences in exact rational arithmetic.

    Recurses on the full outcome history rather than on success counts, so it
    shares no state-space reduction with the lattice solver.
    """

    @lru_cache(maxsize=None)
    def value(history):
        k = len(history)
        s1 = sum(y1 for y1, _ in history)
        s0 = sum(y0 for _, y0 in history)
        d = Fraction(a1 + s1, a1 + b1 + k) - Fraction(a0 + s0, a0 + b0 + k)
        h = -max(Fraction(0), d)
        if k == T:
            return h, h, None
        q1 = Fraction(a1 + s1, a1 + b1 + k)
        q0 = Fraction(a0 + s0, a0 + b0 + k)
        cont = cost
        for y1, y0 in itertools.product((0, 1), repeat=2):
            w = (q1 if y1 else 1 - q1) * (q0 if y0 else 1 - q0)
            cont += w * value(history + ((y1, y0),))[0]
        return min(h, cont), h, cont

    return value


@pytest.mark.parametrize("T", [1, 2, 3, 4])
@pytest.mark.parametrize("cost", [Fraction(1, 1000), Fraction(1, 100), Fraction(3, 100)])
@pytest.mark.parametrize("priors", [(1, 1, 1, 1), (2, 3, 1, 4)])
def test_matches_expectimax(T, cost, priors):
    a1, b1, a0, b0 = priors
    value = expectimax(a1, b1, a0, b0, cost, T)
    table = solve(spec(float(cost), T, BetaParams(a1, b1), BetaParams(a0, b0)))
    for k in range(T + 1):
        for seq in itertools.product(itertools.product((0, 1), repeat=2), repeat=k):
            s1 = sum(y for y, _ in seq)
            s0 = sum(y for _, y in seq)
            v, h, cont = value(seq)
            assert table.value(k, s1, s0) == pytest.approx(float(v), abs=1e-14)
            cont_expected = cont is not None and cont < h
            assert (table.action(k, s1, s0) == Action.CONTINUE) == cont_expected


def test_transition_mass_conservation():
    for prior1, prior0 in [(U, U), (BetaParams(0.5, 0.5), BetaParams(3, 7)), (BetaParams(4, 16), U)]:
        for k in (0, 1, 7, 50, 200):
            P = transition_probs(spec(prior1=prior1, prior0=prior0, horizon=200), k)
            assert np.max(np.abs(P.sum(axis=(0, 1)) - 1.0)) < 1e-14
            assert P.min() >= 0


def test_predictive_success_examples():
    assert predictive_success(U, 0, 0) == 0.5
    assert predictive_success(U, 11, 11) == pytest.approx(12 / 13)
    assert predictive_success(BetaParams(4, 16), 0, 1) == pytest.approx(4 / 21)


def test_terminal_value_examples():
    s = spec()
    assert terminal_value(s, BinaryState(1, 1, 0)) == pytest.approx(-1 / 3)
    assert terminal_value(s, BinaryState(1, 0, 1)) == 0.0
    cal = spec(calibrated=True, gamma=0.975)
    assert prob_superior_normal_approx(BetaParams(2, 1), BetaParams(1, 2)) < 0.975
    assert terminal_value(cal, BinaryState(1, 1, 0)) == 0.0
    # large, clear effect passes the gate
    assert terminal_value(cal, BinaryState(40, 35, 10)) == pytest.approx(-(36 / 42 - 11 / 42))
    with pytest.raises(ValueError):
        BinaryState(2, 3, 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        spec(horizon=-1)
    with pytest.raises(ValueError):
        spec(cost=-0.1)
    with pytest.raises(ValueError):
        spec(gamma=1.0)
    s = spec(prior1=BetaParams(0.5, 0.5), prior0=BetaParams(0.5, 0.5))
    assert s.declare_draws == 100_000


def test_horizon_zero_forced_stop():
    t = solve(spec(horizon=0))
    assert t.n_states == 1
    assert t.action(0, 0, 0) == Action.STOP_CONTROL
    r = evaluate_path(t, [])
    assert r.stop_stage == 0 and not r.declared and r.prob_superior == 0.5


def test_large_cost_stops_immediately():
    t = solve(spec(cost=1.0, horizon=20))
    assert t.action(0, 0, 0) != Action.CONTINUE
    region = stopping_region(solve(spec(cost=0.1, horizon=30)))
    assert all(region.continuation_empty(k) for k in range(31))


@pytest.mark.parametrize("calibrated", [False, True])
def test_bellman_consistency(calibrated):
    s = spec(cost=5e-4, horizon=60, calibrated=calibrated)
    t = solve(s)
    for k in range(s.horizon + 1):
        sv = np.arange(k + 1)
        h = np.array([[terminal_value(s, BinaryState(k, a, b)) for b in sv] for a in sv])
        V = t.values[k]
        assert np.all(V <= h + 1e-15)
        stop = ~t.continue_mask(k)
        assert np.array_equal(V[stop], h[stop])
        if k < s.horizon:
            P = transition_probs(s, k)
            W = t.values[k + 1]
            Q = s.cost_per_stage + (P[0, 0] * W[:-1, :-1] + P[1, 0] * W[1:, :-1]
                                    + P[0, 1] * W[:-1, 1:] + P[1, 1] * W[1:, 1:])
            cont = t.continue_mask(k)
            assert np.max(np.abs(V[cont] - Q[cont]), initial=0.0) < 1e-12
        else:
            assert not t.continue_mask(k).any()


@pytest.mark.parametrize("T", [5, 12, 30])
@pytest.mark.parametrize("calibrated", [False, True])
def test_value_monotone_in_treatment_successes(T, calibrated):
    for cost in (1e-4, 1e-3, 1e-2):
        t = solve(spec(cost=cost, horizon=T, calibrated=calibrated))
        for k in range(T + 1):
            assert np.all(np.diff(t.values[k], axis=0) <= 1e-15)


@pytest.mark.parametrize("cost", [2e-4, 5e-4, 2e-3])
def test_symmetric_priors_give_symmetric_continuation(cost):
    # with identical priors V(s1, s0) - V(s0, s1) = -delta_hat, so the
    # continuation region is mirror-symmetric about delta_hat = 0
    s = spec(cost=cost, horizon=80)
    t = solve(s)
    for k in range(s.horizon + 1):
        c = t.continue_mask(k)
        assert np.array_equal(c, c.T)
        sv = np.arange(k + 1)
        d = posterior_delta(s, k, sv[:, None], sv[None, :])
        assert np.allclose(t.values[k] - t.values[k].T, -d, atol=1e-12)
    r = stopping_region(t)
    both = ~np.isnan(r.cont_min)
    assert np.allclose(r.cont_min[both], -r.cont_max[both], atol=1e-12)


def test_stopping_region_shape():
    s = spec(cost=5e-4, horizon=200)
    t = solve(s)
    r = stopping_region(t)
    assert r.continuation_empty(200)
    assert not r.continuation_empty(0)
    width = np.nan_to_num(r.cont_max - r.cont_min, nan=0.0)
    # the continuation region narrows in the second half
    half = width[100:]
    assert np.all(np.diff(half) <= 1e-12)
    csv = r.to_csv().splitlines()
    assert csv[0] == "stage,lower_delta,upper_delta"
    assert len(csv) == 202


def test_solve_runtime_t200():
    s = spec(cost=5e-4, horizon=200)
    t0 = time.perf_counter()
    t = solve(s)
    assert time.perf_counter() - t0 < 10
    assert t.n_states == sum((k + 1) ** 2 for k in range(201))


def test_json_round_trip():
    t = solve(spec(cost=5e-4, horizon=40, calibrated=True))
    acts = BinaryPolicyTable.actions_from_json(t.to_json())
    assert all(np.array_equal(a, b) for a, b in zip(acts, t.actions))


def test_table_read_only():
    t = solve(spec())
    with pytest.raises(ValueError):
        t.actions[0][0, 0] = 1


def test_evaluate_path_walk_and_trace():
    s = spec(cost=5e-4, horizon=200)
    t = solve(s)
    outcomes = [(1, 0)] * 200
    r = evaluate_path(t, outcomes)
    assert t.action(r.stop_stage, r.stop_stage, 0) != Action.CONTINUE
    assert all(t.action(k, k, 0) == Action.CONTINUE for k in range(r.stop_stage))
    assert [x[0] for x in r.trace] == list(range(r.stop_stage + 1))
    assert r.trace[-1][3] == pytest.approx(float(posterior_delta(s, r.stop_stage, r.stop_stage, 0)))
    with pytest.raises(ValueError):
        evaluate_path(t, [(1, 0)])


def test_all_failure_treatment_not_declared():
    t = solve(spec(cost=5e-4, horizon=100))
    r = evaluate_path(t, [(0, 1)] * 100)
    assert not r.declared
    assert r.prob_superior < 0.5


def test_ecmo_paths_stop_early():
    s = BinaryDesignSpec(U, BetaParams(4, 16), 1e-3, 100, 0.975, True)
    t = solve(s)
    g = RngStream(8).generator()
    for _ in range(50):
        y0 = [0] + list((g.random(99) < 0.2).astype(int))
        r = evaluate_path(t, [(1, b) for b in y0])
        assert r.stop_stage <= 10


def test_declaration_mc_reproducible():
    s = spec(cost=5e-4, horizon=50, declare_draws=10_000)
    t = solve(s)
    out = [(1, 0), (1, 1), (1, 0)] * 20
    a = evaluate_path(t, out, RngStream(4, 2))
    b = evaluate_path(t, out, RngStream(4, 2))
    assert a.prob_superior == b.prob_superior
