"""Allocation rules and interim-monitoring designs.

Every design simulates replications the same way: replication ``r`` owns one
generator, first draws the full treatment and control outcome sequences
(uniforms compared against the true rates), then uses the same generator for
any Monte Carlo posterior evaluations. ``simulate`` runs a batch of
replications; :func:`run_design` runs one. Both consume the random streams
identically, so a batch is just the replications run side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtr, ndtri

from .binary import Action, BinaryPolicyTable
from .dist import BetaParams, RngLike, as_generator, prob_superior_exact, superiority_estimate

STATISTICS = ("wald", "pooled", "posterior")


# -- allocation ---------------------------------------------------------------

def thompson_prob(arm1: tuple[int, int], arm2: tuple[int, int]) -> float:
    """Posterior probability that arm 1 beats arm 2 under uniform priors.

    Each arm is ``(successes, patients)``.
    """
    (r1, n1), (r2, n2) = arm1, arm2
    if not (0 <= r1 <= n1 and 0 <= r2 <= n2):
        raise ValueError("tallies need 0 <= r <= n")
    return _exact(r1 + 1, n1 - r1 + 1, r2 + 1, n2 - r2 + 1)


def thompson_prob_rational(arm1: tuple[int, int], arm2: tuple[int, int]) -> Fraction:
    """Exact rational Pr(arm 1 beats arm 2) under uniform priors, from the
    binomial-coefficient sum over arm 1's successes."""
    (r2, n2), (r1, n1) = arm1, arm2
    if not (0 <= r1 <= n1 and 0 <= r2 <= n2):
        raise ValueError("tallies need 0 <= r <= n")
    f1, f2 = n1 - r1, n2 - r2
    num = sum(math.comb(r1 + r2 - a, r1) * math.comb(f1 + f2 + 1 + a, f1) for a in range(r2 + 1))
    return Fraction(num, math.comb(n1 + n2 + 2, n1 + 1))


@lru_cache(maxsize=1 << 18)
def _exact(a1, b1, a0, b0) -> float:
    return prob_superior_exact(BetaParams(a1, b1), BetaParams(a0, b0))


def thall_wathen_alloc(posterior_best_probs: Sequence[float], tau: float) -> np.ndarray:
    """Allocation probabilities proportional to ``p_k ** tau``."""
    p = np.asarray(posterior_best_probs, dtype=float)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("posterior probabilities must be nonnegative and sum to 1")
    if tau == 0:
        return np.full(p.size, 1.0 / p.size)
    with np.errstate(divide="ignore"):
        logw = tau * np.log(p)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def simulate_thompson_path(p_true: tuple[float, float], n_patients: int, rng: RngLike) -> np.ndarray:
    """Running proportion of patients assigned to treatment under Thompson allocation.

    ``p_true = (p1, p0)``; entry ``i`` is the proportion after ``i + 1`` patients.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    g = as_generator(rng)
    p1, p0 = p_true
    r = [0, 0]
    n = [0, 0]
    on_trt = 0
    out = np.empty(n_patients)
    for i in range(n_patients):
        prob = thompson_prob((r[1], n[1]), (r[0], n[0]))
        arm = 1 if g.random() < prob else 0
        success = g.random() < (p1 if arm == 1 else p0)
        n[arm] += 1
        r[arm] += int(success)
        on_trt += arm
        out[i] = on_trt / (i + 1)
    return out


# -- interim statistics -------------------------------------------------------

def predictive_probability(p_n, r, alpha):
    """Approximate predictive probability of final success.

    ``p_n`` is the interim one-sided p-value, ``r`` the information fraction in
    (0, 1) and ``alpha`` the final one-sided level.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any((r_arr <= 0) | (r_arr >= 1)):
        raise ValueError("information fraction must lie in (0, 1); use the final-analysis rule at r = 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = ndtri(1.0 - np.asarray(p_n, dtype=float))
        out = ndtr((z - ndtri(1.0 - alpha) * np.sqrt(r_arr)) / np.sqrt(1.0 - r_arr))
    return out[()] if np.ndim(out) == 0 else out


def z_statistic(s1, s0, n, kind: str = "wald"):
    """One-sided two-proportion z (treatment minus control).

    With zero estimated variance the arms are degenerate: z is 0 when they agree
    and +-inf under complete separation.
    """
    s1 = np.asarray(s1, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    a = s1 / n
    b = s0 / n
    if kind == "wald":
        var = (a * (1 - a) + b * (1 - b)) / n
    elif kind == "pooled":
        p = (a + b) / 2
        var = 2 * p * (1 - p) / n
    else:
        raise ValueError(f"unknown z statistic {kind!r}")
    safe = np.where(var > 0, var, 1.0)
    z = np.where(var > 0, (a - b) / np.sqrt(safe), np.where(a > b, np.inf, -np.inf))
    z = np.where((var > 0) | (a != b), z, 0.0)
    return z[()] if z.ndim == 0 else z


@dataclass
class InterimSnapshot:
    n_per_arm: int
    s1: int
    s0: int
    z: float
    p_one_sided: float
    info_fraction: float


def interim_snapshot(s1: int, s0: int, n: int, n_max: int, kind: str = "wald",
                     draws: int | None = None, rng: RngLike | None = None) -> InterimSnapshot:
    """Test statistic and one-sided p-value at an interim look.

    With ``kind="posterior"`` the p-value is one minus the flat-prior posterior
    probability that treatment is better (optionally a ``draws`` Monte Carlo
    estimate) and ``z`` is its normal score.
    """
    if kind == "posterior":
        prob = superiority_estimate(BetaParams(1 + s1, 1 + n - s1), BetaParams(1 + s0, 1 + n - s0), draws, rng)
        p = 1.0 - prob
        with np.errstate(divide="ignore"):
            z = float(ndtri(prob))
    else:
        z = float(z_statistic(s1, s0, n, kind))
        p = float(1.0 - ndtr(z))
    return InterimSnapshot(n, s1, s0, z, p, n / n_max)


# -- designs ------------------------------------------------------------------

def _draw_outcomes(g: np.random.Generator, n: int, p1: float, p0: float):
    y1 = g.random(n) < p1
    y0 = g.random(n) < p0
    return y1, y0


def _cumulative(gens, n, p1, p0):
    c1 = np.zeros((len(gens), n + 1), dtype=np.int64)
    c0 = np.zeros((len(gens), n + 1), dtype=np.int64)
    for i, g in enumerate(gens):
        y1, y0 = _draw_outcomes(g, n, p1, p0)
        c1[i, 1:] = np.cumsum(y1)
        c0[i, 1:] = np.cumsum(y0)
    return c1, c0


def _p_values(kind, s1, s0, n, draws, gens, idx):
    """One-sided p-values for replications ``idx`` at look size ``n``."""
    if kind != "posterior":
        return 1.0 - ndtr(z_statistic(s1, s0, n, kind))
    out = np.empty(len(idx))
    for j, (i, a, b) in enumerate(zip(idx, s1, s0)):
        exact = _exact(1 + int(a), 1 + n - int(a), 1 + int(b), 1 + n - int(b))
        if draws is None:
            out[j] = 1.0 - exact
        else:
            out[j] = 1.0 - gens[i].binomial(draws, exact) / draws
    return out


@dataclass
class DesignOutcome:
    n_used: np.ndarray
    declared: np.ndarray

    @property
    def stop_stage(self) -> np.ndarray:
        return self.n_used


@dataclass(frozen=True)
class PredictiveProbability:
    """Interim looks with efficacy/futility stopping on the predictive probability.

    ``statistic`` chooses the interim p-value: ``"posterior"`` (one minus the
    flat-prior posterior probability of superiority, ``posterior_draws`` Monte
    Carlo draws or exact when ``None``), ``"wald"`` or ``"pooled"`` z-tests.
    """

    n_max_per_arm: int = 100
    n_looks: int = 10
    efficacy_threshold: float = 0.95
    futility_threshold: float = 0.05
    final_alpha: float = 0.025
    statistic: str = "posterior"
    posterior_draws: int | None = None
    label: str = "Predictive prob."

    def __post_init__(self):
        _check_looks(self.n_max_per_arm, self.n_looks)
        for t in (self.efficacy_threshold, self.futility_threshold, self.final_alpha):
            if not 0 < t < 1:
                raise ValueError("thresholds must lie in (0, 1)")
        if self.efficacy_threshold <= self.futility_threshold:
            raise ValueError("efficacy threshold must exceed futility threshold")
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")

    @property
    def max_n(self) -> int:
        return self.n_max_per_arm

    def looks(self) -> list[int]:
        return _look_schedule(self.n_max_per_arm, self.n_looks)

    def simulate(self, p_true, gens) -> DesignOutcome:
        p1, p0 = p_true
        N = self.n_max_per_arm
        c1, c0 = _cumulative(gens, N, p1, p0)
        R = len(gens)
        active = np.ones(R, dtype=bool)
        n_used = np.full(R, N)
        declared = np.zeros(R, dtype=bool)
        looks = self.looks()
        for n in looks:
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            pv = _p_values(self.statistic, c1[idx, n], c0[idx, n], n, self.posterior_draws, gens, idx)
            if n < N:
                pp = predictive_probability(pv, n / N, self.final_alpha)
                eff = pp > self.efficacy_threshold
                fut = pp < self.futility_threshold
                declared[idx[eff]] = True
                stop = idx[eff | fut]
                n_used[stop] = n
                active[stop] = False
            else:
                declared[idx[pv <= self.final_alpha]] = True
                active[idx] = False
        return DesignOutcome(n_used, declared)


@dataclass(frozen=True)
class ObrienFleming:
    """Efficacy-only group sequential design with boundaries ``z_alpha * sqrt(K / j)``."""

    n_max_per_arm: int = 100
    n_looks: int = 5
    alpha: float = 0.025
    statistic: str = "wald"
    label: str = "O'Brien-Fleming"

    def __post_init__(self):
        _check_looks(self.n_max_per_arm, self.n_looks)
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.statistic not in ("wald", "pooled"):
            raise ValueError("statistic must be 'wald' or 'pooled'")

    @property
    def max_n(self) -> int:
        return self.n_max_per_arm

    def looks(self) -> list[int]:
        return _look_schedule(self.n_max_per_arm, self.n_looks)

    def boundary(self, j: int) -> float:
        return float(ndtri(1 - self.alpha) * math.sqrt(self.n_looks / j))

    def simulate(self, p_true, gens) -> DesignOutcome:
        p1, p0 = p_true
        N = self.n_max_per_arm
        c1, c0 = _cumulative(gens, N, p1, p0)
        R = len(gens)
        n_used = np.full(R, N)
        declared = np.zeros(R, dtype=bool)
        for j, n in enumerate(self.looks(), start=1):
            z = z_statistic(c1[:, n], c0[:, n], n, self.statistic)
            hit = ~declared & (z >= self.boundary(j))
            declared |= hit
            n_used[hit] = n
        return DesignOutcome(n_used, declared)


@dataclass(frozen=True)
class FixedSample:
    n_per_arm: int = 100
    alpha: float = 0.025
    statistic: str = "wald"
    label: str = "Fixed-sample"

    def __post_init__(self):
        if self.n_per_arm < 1:
            raise ValueError("n_per_arm must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def max_n(self) -> int:
        return self.n_per_arm

    def simulate(self, p_true, gens) -> DesignOutcome:
        p1, p0 = p_true
        N = self.n_per_arm
        c1, c0 = _cumulative(gens, N, p1, p0)
        z = z_statistic(c1[:, N], c0[:, N], N, self.statistic)
        return DesignOutcome(np.full(len(gens), N), z >= ndtri(1 - self.alpha))


@dataclass(frozen=True, eq=False)
class BackwardInduction:
    """A solved lattice policy run as a monitoring design."""

    table: BinaryPolicyTable
    label: str = "Backward induction"

    @property
    def max_n(self) -> int:
        return self.table.horizon

    def simulate(self, p_true, gens) -> DesignOutcome:
        p1, p0 = p_true
        spec = self.table.spec
        T = spec.horizon
        c1, c0 = _cumulative(gens, T, p1, p0)
        R = len(gens)
        stage = np.full(R, T)
        active = np.ones(R, dtype=bool)
        for k in range(T):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            a = self.table.actions[k][c1[idx, k], c0[idx, k]]
            stop = idx[a != Action.CONTINUE]
            stage[stop] = k
            active[stop] = False
        s1 = c1[np.arange(R), stage]
        s0 = c0[np.arange(R), stage]
        declared = np.empty(R, dtype=bool)
        for i in range(R):
            k, a, b = int(stage[i]), int(s1[i]), int(s0[i])
            post1 = spec.prior1.update(a, k)
            post0 = spec.prior0.update(b, k)
            if spec.declare_draws is None:
                prob = _exact(post1.alpha, post1.beta, post0.alpha, post0.beta)
            elif post1.is_integer and post0.is_integer:
                prob = gens[i].binomial(spec.declare_draws, _exact(post1.alpha, post1.beta, post0.alpha, post0.beta)) / spec.declare_draws
            else:
                prob = superiority_estimate(post1, post0, spec.declare_draws, gens[i])
            declared[i] = prob > spec.gamma
        return DesignOutcome(stage, declared)


MonitoringDesign = Union[PredictiveProbability, ObrienFleming, FixedSample, BackwardInduction]


def run_design(design: MonitoringDesign, p_true: tuple[float, float], rng: RngLike) -> tuple[int, bool]:
    """One simulated trial: ``(patients used per arm, treatment declared)``."""
    out = design.simulate(p_true, [as_generator(rng)])
    return int(out.n_used[0]), bool(out.declared[0])


def _check_looks(n_max: int, n_looks: int):
    if n_max < 1 or n_looks < 1:
        raise ValueError("need at least one patient and one look")
    if n_max % n_looks:
        raise ValueError("looks must be evenly spaced: n_max_per_arm divisible by n_looks")


def _look_schedule(n_max: int, n_looks: int) -> list[int]:
    step = n_max // n_looks
    return [step * j for j in range(1, n_looks + 1)]
