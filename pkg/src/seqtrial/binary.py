"""Exact backward induction for two-arm Beta-Binomial trials.

One patient per arm per stage. After ``k`` stages the posterior is summarised
by the success counts ``(s1, s0)``, so stage ``k`` has ``(k + 1)**2`` states and
each continuation value is a weighted sum of four successor values.

The terminal loss at a state is ``-max(0, d)`` where ``d`` is the posterior mean
treatment effect. In the calibrated variant ``d`` only counts when the normal
approximation to Pr(p1 > p0) exceeds ``gamma``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .dist import BetaParams, RngLike, superiority_estimate


class Action(enum.IntEnum):
    CONTINUE = 0
    STOP_TREATMENT = 1
    STOP_CONTROL = 2


@dataclass(frozen=True)
class BinaryDesignSpec:
    """Design parameters for the two-arm lattice recursion.

    ``declare_draws`` selects how Pr(p1 > p0) is evaluated when a path stops:
    ``None`` uses the exact closed form (integer posteriors only), an integer
    uses a Monte Carlo estimate from that many posterior draws.
    """

    prior1: BetaParams
    prior0: BetaParams
    cost_per_stage: float
    horizon: int
    gamma: float = 0.975
    calibrated: bool = False
    declare_draws: int | None = None

    def __post_init__(self):
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.cost_per_stage < 0:
            raise ValueError("cost_per_stage must be nonnegative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.declare_draws is not None and self.declare_draws < 1:
            raise ValueError("declare_draws must be positive or None")
        if self.declare_draws is None and not (self.prior1.is_integer and self.prior0.is_integer):
            # exact declaration is unavailable; fall back to the 1e5-draw estimator
            object.__setattr__(self, "declare_draws", 100_000)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BinaryState:
    k: int
    s1: int
    s0: int

    def __post_init__(self):
        if not (0 <= self.s1 <= self.k and 0 <= self.s0 <= self.k):
            raise ValueError(f"invalid lattice state {self}")


def predictive_success(prior: BetaParams, s, k):
    """Posterior predictive probability that the next patient on the arm succeeds."""
    return (prior.alpha + np.asarray(s, dtype=float)) / (prior.alpha + prior.beta + k)


def _stage_means(spec: BinaryDesignSpec, k: int):
    s = np.arange(k + 1, dtype=float)
    return predictive_success(spec.prior1, s, k), predictive_success(spec.prior0, s, k)


def _stage_terminal(spec: BinaryDesignSpec, k: int):
    """Terminal loss and stop action for every state at stage k."""
    m1, m0 = _stage_means(spec, k)
    delta = m1[:, None] - m0[None, :]
    if spec.calibrated:
        n1 = spec.prior1.alpha + spec.prior1.beta + k
        n0 = spec.prior0.alpha + spec.prior0.beta + k
        v1 = m1 * (1 - m1) / (n1 + 1)
        v0 = m0 * (1 - m0) / (n0 + 1)
        prob = ndtr(delta / np.sqrt(v1[:, None] + v0[None, :]))
        delta = np.where(prob > spec.gamma, delta, 0.0)
    h = -np.maximum(0.0, delta)
    stop = np.where(delta > 0, Action.STOP_TREATMENT, Action.STOP_CONTROL).astype(np.int8)
    return h, stop


def terminal_value(spec: BinaryDesignSpec, state: BinaryState) -> float:
    h, _ = _stage_terminal(spec, state.k)
    return float(h[state.s1, state.s0])


def posterior_delta(spec: BinaryDesignSpec, k: int, s1, s0):
    return predictive_success(spec.prior1, s1, k) - predictive_success(spec.prior0, s0, k)


def transition_probs(spec: BinaryDesignSpec, k: int):
    """Outcome probabilities ``P[y1, y0]`` for every stage-k state, shape (2, 2, k+1, k+1)."""
    p1, p0 = _stage_means(spec, k)
    p1 = p1[:, None]
    p0 = p0[None, :]
    return np.array([
        [(1 - p1) * (1 - p0), (1 - p1) * p0],
        [p1 * (1 - p0), p1 * p0],
    ])


class BinaryPolicyTable:
    """Per-stage value and action arrays produced by :func:`solve`.

    ``values[k]`` and ``actions[k]`` are (k+1, k+1) arrays indexed ``[s1, s0]``.
    """

    def __init__(self, spec: BinaryDesignSpec, values: list[np.ndarray], actions: list[np.ndarray]):
        self.spec = spec
        self.values = values
        self.actions = actions
        for a in actions:
            a.setflags(write=False)
        for v in values:
            v.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    @property
    def n_states(self) -> int:
        return sum(a.size for a in self.actions)

    def action(self, k: int, s1: int, s0: int) -> Action:
        return Action(int(self.actions[k][s1, s0]))

    def value(self, k: int, s1: int, s0: int) -> float:
        return float(self.values[k][s1, s0])

    def continue_mask(self, k: int) -> np.ndarray:
        return self.actions[k] == Action.CONTINUE

    def to_json(self) -> str:
        """Spec header plus run-length-encoded action rows (one row per s1)."""
        stages = []
        for k, a in enumerate(self.actions):
            rows = []
            for row in a:
                runs = []
                start = 0
                for j in range(1, len(row) + 1):
                    if j == len(row) or row[j] != row[start]:
                        runs.append([int(row[start]), j - start])
                        start = j
                rows.append(runs)
            stages.append(rows)
        header = _spec_header(self.spec)
        return json.dumps({"spec": header, "action_codes": {a.name: int(a) for a in Action},
                           "stages": stages})

    @classmethod
    def actions_from_json(cls, text: str) -> list[np.ndarray]:
        doc = json.loads(text)
        out = []
        for rows in doc["stages"]:
            arr = np.array([[code for code, n in runs for _ in range(n)] for runs in rows], dtype=np.int8)
            out.append(arr)
        return out


def _spec_header(spec: BinaryDesignSpec) -> dict:
    return {
        "prior1": [spec.prior1.alpha, spec.prior1.beta],
        "prior0": [spec.prior0.alpha, spec.prior0.beta],
        "cost_per_stage": spec.cost_per_stage,
        "horizon": spec.horizon,
        "gamma": spec.gamma,
        "calibrated": spec.calibrated,
        "declare_draws": spec.declare_draws,
    }


def solve(spec: BinaryDesignSpec) -> BinaryPolicyTable:
    """Backward induction over the success-count lattice.

    Ties between stopping and continuing resolve to stopping.
    """
    T = spec.horizon
    c = spec.cost_per_stage
    values: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    actions: list[np.ndarray] = [None] * (T + 1)  # type: ignore[list-item]
    h, stop = _stage_terminal(spec, T)
    values[T] = h
    actions[T] = stop
    V = h
    for k in range(T - 1, -1, -1):
        h, stop = _stage_terminal(spec, k)
        P = transition_probs(spec, k)
        Q = c + (P[0, 0] * V[:-1, :-1] + P[1, 0] * V[1:, :-1]
                 + P[0, 1] * V[:-1, 1:] + P[1, 1] * V[1:, 1:])
        cont = Q < h
        V = np.where(cont, Q, h)
        values[k] = V
        actions[k] = np.where(cont, np.int8(Action.CONTINUE), stop).astype(np.int8)
    return BinaryPolicyTable(spec, values, actions)


@lru_cache(maxsize=64)
def solve_cached(spec: BinaryDesignSpec) -> BinaryPolicyTable:
    return solve(spec)


@dataclass
class StoppingRegion:
    """Per-stage boundaries on the posterior-mean effect scale.

    ``upper[k]`` is the smallest effect among treatment-stop states and
    ``lower[k]`` the largest among control-stop states (NaN when absent).
    ``cont_min``/``cont_max`` bound the continuation states (NaN when empty).
    """

    upper: np.ndarray
    lower: np.ndarray
    cont_min: np.ndarray
    cont_max: np.ndarray

    def continuation_empty(self, k: int) -> bool:
        return bool(np.isnan(self.cont_min[k]))

    def to_csv(self) -> str:
        lines = ["stage,lower_delta,upper_delta"]
        for k, (lo, up) in enumerate(zip(self.lower, self.upper)):
            lines.append(f"{k},{_fmt(lo)},{_fmt(up)}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else f"{x:.10g}"


def stopping_region(table: BinaryPolicyTable) -> StoppingRegion:
    T = table.horizon
    upper = np.full(T + 1, np.nan)
    lower = np.full(T + 1, np.nan)
    cmin = np.full(T + 1, np.nan)
    cmax = np.full(T + 1, np.nan)
    for k in range(T + 1):
        s = np.arange(k + 1)
        delta = posterior_delta(table.spec, k, s[:, None], s[None, :])
        a = table.actions[k]
        for code, reducer, out in ((Action.STOP_TREATMENT, np.min, upper), (Action.STOP_CONTROL, np.max, lower)):
            sel = a == code
            if sel.any():
                out[k] = reducer(delta[sel])
        sel = a == Action.CONTINUE
        if sel.any():
            cmin[k] = delta[sel].min()
            cmax[k] = delta[sel].max()
    return StoppingRegion(upper, lower, cmin, cmax)


@dataclass
class PathResult:
    stop_stage: int
    declared: bool
    prob_superior: float
    trace: list[tuple[int, int, int, float]]


def declaration_probability(spec: BinaryDesignSpec, k: int, s1: int, s0: int,
                            rng: RngLike | None = None) -> float:
    post1 = spec.prior1.update(s1, k)
    post0 = spec.prior0.update(s0, k)
    return superiority_estimate(post1, post0, spec.declare_draws, rng)


def evaluate_path(table: BinaryPolicyTable, outcomes: Iterable[Sequence[int]],
                  rng: RngLike | None = None) -> PathResult:
    """Follow the policy along one sequence of per-stage ``(y1, y0)`` outcomes.

    Stops at the first stop action (always by the horizon). Treatment is
    declared when Pr(p1 > p0) at the stop state exceeds ``gamma``.
    """
    spec = table.spec
    it = iter(outcomes)
    s1 = s0 = 0
    k = 0
    trace = []
    while True:
        trace.append((k, s1, s0, float(posterior_delta(spec, k, s1, s0))))
        if k == spec.horizon or table.actions[k][s1, s0] != Action.CONTINUE:
            break
        try:
            y1, y0 = next(it)
        except StopIteration:
            raise ValueError("outcome sequence shorter than the stopping stage") from None
        s1 += int(y1)
        s0 += int(y0)
        k += 1
    prob = declaration_probability(spec, k, s1, s0, rng)
    return PathResult(k, prob > spec.gamma, prob, trace)
