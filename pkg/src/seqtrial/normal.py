"""Grid backward induction for the Normal model with known variance.

Outcomes are ``Z ~ N(theta, sigma2)`` with prior ``theta ~ N(0, sigma0_2)``.
After ``n`` patients the posterior mean ``S_n`` is the only state; its posterior
variance follows a deterministic schedule and ``S_{n+1} | S_n`` is Gaussian.
Choosing treatment loses ``-theta``, choosing control loses nothing, and each
further patient costs ``cost``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .binary import Action
from .dist import RngLike, as_generator

log = logging.getLogger(__name__)

#: quadrature kernel half-width, in transition standard deviations
KERNEL_SDS = 8.0


@dataclass(frozen=True)
class NormalDesignSpec:
    sigma2: float = 4.0
    sigma0_2: float = 1.0
    cost: float = 0.005
    horizon: int = 50
    grid_min: float = -6.0
    grid_max: float = 6.0
    grid_points: int = 4001

    def __post_init__(self):
        if self.sigma2 <= 0 or self.sigma0_2 <= 0:
            raise ValueError("variances must be positive")
        if self.cost < 0:
            raise ValueError("cost must be nonnegative")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.grid_min < 0 < self.grid_max:
            raise ValueError("grid must straddle zero")
        if self.grid_points < 101:
            raise ValueError("grid_points must be >= 101")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_min, self.grid_max, self.grid_points)

    @property
    def spacing(self) -> float:
        return (self.grid_max - self.grid_min) / (self.grid_points - 1)


def variance_schedule(spec: NormalDesignSpec) -> np.ndarray:
    """Posterior variances psi_n^2 for n = 0..T."""
    psi2 = np.empty(spec.horizon + 1)
    psi2[0] = spec.sigma0_2
    for n in range(1, spec.horizon + 1):
        psi2[n] = spec.sigma2 * psi2[n - 1] / (spec.sigma2 + psi2[n - 1])
    return psi2


def transition_std(spec: NormalDesignSpec, n: int) -> float:
    """Standard deviation of S_{n+1} given S_n."""
    if not 0 <= n < spec.horizon:
        raise ValueError("transition defined for 0 <= n < horizon")
    psi2 = variance_schedule(spec)[n]
    return math.sqrt(psi2 * psi2 / (spec.sigma2 + psi2))


def _kernel(tau: float, spacing: float, limit: int) -> np.ndarray:
    m = min(int(math.floor(KERNEL_SDS * tau / spacing)), limit)
    offsets = np.arange(-m, m + 1) * spacing
    return np.exp(-0.5 * (offsets / tau) ** 2)


def quadrature_weights(grid: np.ndarray, tau: float) -> np.ndarray:
    """Dense transition matrix ``W[j, i]`` from source ``s_j`` to target ``s_i``.

    Gaussian weights truncated at ``KERNEL_SDS`` standard deviations and
    renormalised so that each row sums to one. Meant for small grids; the
    solver applies the same operator as a convolution.
    """
    spacing = grid[1] - grid[0]
    d = grid[None, :] - grid[:, None]
    w = np.exp(-0.5 * (d / tau) ** 2)
    w[np.abs(d) > KERNEL_SDS * tau + 1e-9 * spacing] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def _apply_transition(V: np.ndarray, kern: np.ndarray, norm: np.ndarray) -> np.ndarray:
    m = (len(kern) - 1) // 2
    full = np.convolve(V, kern)
    return full[m:m + len(V)] / norm


def _row_norm(G: int, kern: np.ndarray) -> np.ndarray:
    m = (len(kern) - 1) // 2
    return np.convolve(np.ones(G), kern)[m:m + G]


@dataclass
class NormalPolicy:
    spec: NormalDesignSpec
    grid: np.ndarray
    variances: np.ndarray
    values: list[np.ndarray]
    actions: list[np.ndarray]
    lower: np.ndarray
    upper: np.ndarray

    def action_at(self, n: int, s: float) -> Action:
        if s <= self.grid[0] or s >= self.grid[-1]:
            return Action.STOP_TREATMENT if s > 0 else Action.STOP_CONTROL
        j = int(round((s - self.grid[0]) / self.spec.spacing))
        return Action(int(self.actions[n][j]))

    def value_at_zero(self, n: int = 0) -> float:
        return float(np.interp(0.0, self.grid, self.values[n]))

    def boundaries_csv(self) -> str:
        lines = ["stage,lower_s,upper_s"]
        for n, (lo, up) in enumerate(zip(self.lower, self.upper)):
            lo_s = "" if np.isnan(lo) else f"{lo:.10g}"
            up_s = "" if np.isnan(up) else f"{up:.10g}"
            lines.append(f"{n},{lo_s},{up_s}")
        return "\n".join(lines) + "\n"


def continuation_values(spec: NormalDesignSpec, n: int, next_values: np.ndarray) -> np.ndarray:
    """Q_n on the grid: cost plus expected next-stage value."""
    tau = transition_std(spec, n)
    kern = _kernel(tau, spec.spacing, spec.grid_points - 1)
    return spec.cost + _apply_transition(next_values, kern, _row_norm(spec.grid_points, kern))


def solve_normal(spec: NormalDesignSpec) -> NormalPolicy:
    grid = spec.grid
    psi2 = variance_schedule(spec)
    if min(-spec.grid_min, spec.grid_max) < 6 * math.sqrt(spec.sigma0_2):
        log.warning("grid does not cover +-6 prior standard deviations of the posterior mean")
    h = np.minimum(0.0, -grid)
    stop = np.where(grid > 0, Action.STOP_TREATMENT, Action.STOP_CONTROL).astype(np.int8)
    T = spec.horizon
    values = [None] * (T + 1)
    actions = [None] * (T + 1)
    values[T] = h.copy()
    actions[T] = stop.copy()
    lower = np.full(T + 1, np.nan)
    upper = np.full(T + 1, np.nan)
    V = values[T]
    for n in range(T - 1, -1, -1):
        Q = continuation_values(spec, n, V)
        cont = Q < h
        V = np.where(cont, Q, h)
        values[n] = V
        actions[n] = np.where(cont, np.int8(Action.CONTINUE), stop).astype(np.int8)
        idx = np.flatnonzero(cont)
        if idx.size:
            lower[n] = grid[idx[0]]
            upper[n] = grid[idx[-1]]
    return NormalPolicy(spec, grid, psi2, values, actions, lower, upper)


@dataclass
class NormalPath:
    stop_stage: int
    decision: Action
    path: np.ndarray
    observations: np.ndarray

    def to_csv(self) -> str:
        lines = ["stage,S_n"] + [f"{n},{s:.10g}" for n, s in enumerate(self.path)]
        return "\n".join(lines) + "\n"


def simulate_normal_path(spec: NormalDesignSpec, policy: NormalPolicy, theta_true: float,
                         rng: RngLike) -> NormalPath:
    g = as_generator(rng)
    psi2 = policy.variances
    s = 0.0
    path = [s]
    zs = []
    n = 0
    while n < spec.horizon and policy.action_at(n, s) == Action.CONTINUE:
        z = g.normal(theta_true, math.sqrt(spec.sigma2))
        s = psi2[n + 1] * (s / psi2[n] + z / spec.sigma2)
        zs.append(z)
        path.append(s)
        n += 1
    decision = Action.STOP_TREATMENT if s > 0 else Action.STOP_CONTROL
    return NormalPath(n, decision, np.array(path), np.array(zs))

