"""Fixed-sample size and the goal-function correspondence for Normal data.

A one-sided frequentist design needs ``n = (z_alpha + z_beta)^2 (sigma / delta)^2``
patients. A Bayesian with prior mass ``pi0`` on the null and a 0-1-K loss scores
a design by the goal function ``G_B(n)``. At the frequentist ``n`` the goal
function no longer depends on ``delta`` or ``sigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy.special import ndtr, ndtri


@dataclass(frozen=True)
class DesignInputs:
    alpha: float = 0.05
    beta: float = 0.10
    sigma: float = 1.0
    delta: float = 0.10
    pi0: float = 0.5
    K: float = 1.0

    def __post_init__(self):
        if not (0 < self.alpha < 0.5 and 0 < self.beta < 0.5):
            raise ValueError("alpha and beta must lie in (0, 0.5)")
        if not (self.delta > 0 and self.sigma > 0):
            raise ValueError("delta and sigma must be positive")
        if not 0 < self.pi0 < 1:
            raise ValueError("pi0 must lie in (0, 1)")
        if not self.K > 0:
            raise ValueError("K must be positive")

    @property
    def z_sum(self) -> float:
        return float(ndtri(1 - self.alpha) + ndtri(1 - self.beta))


def freq_n(inputs: DesignInputs) -> tuple[float, int]:
    """Real-valued and rounded-up per-arm sample size of the one-sided z-test."""
    n = inputs.z_sum ** 2 * (inputs.sigma / inputs.delta) ** 2
    # guard against 857.0000000001-style rounding noise
    n_ceil = math.ceil(n - 1e-9 * max(1.0, n))
    return n, n_ceil


def goal_gb(n: float, inputs: DesignInputs) -> float:
    """Expected utility of an ``n``-patient experiment under the 0-1-K loss."""
    if not n > 0:
        raise ValueError("n must be positive")
    K, p = inputs.K, inputs.pi0
    lo = math.log(K * p / (1 - p))
    a = inputs.sigma * lo / (math.sqrt(n) * inputs.delta)
    b = inputs.delta * math.sqrt(n) / (2 * inputs.sigma)
    return float(K * p * ndtr(a + b) + (1 - p) * ndtr(b - a))


def inoue_constant(alpha: float, beta: float, pi0: float = 0.5, K: float = 1.0) -> float:
    """Goal-function value at the frequentist sample size; free of delta and sigma."""
    z = abs(DesignInputs(alpha, beta, pi0=pi0, K=K).z_sum)
    lo = math.log(K * pi0 / (1 - pi0))
    return float(K * pi0 * ndtr(lo / z + z / 2) + (1 - pi0) * ndtr(z / 2 - lo / z))


def constancy_grid(base: DesignInputs, deltas: Iterable[float], sigmas: Iterable[float]) -> list[dict]:
    """One row per (delta, sigma): sample sizes, goal function and the constant."""
    const = inoue_constant(base.alpha, base.beta, base.pi0, base.K)
    rows = []
    for s in sigmas:
        for d in deltas:
            inp = replace(base, delta=float(d), sigma=float(s))
            n_real, n_ceil = freq_n(inp)
            rows.append({"delta": float(d), "sigma": float(s), "n_real": n_real, "n_ceil": n_ceil,
                         "G_B": goal_gb(n_real, inp), "constant": const})
    return rows


def grid_csv(rows: list[dict]) -> str:
    lines = ["delta,sigma,n_real,n_ceil,G_B,constant"]
    for r in rows:
        lines.append(f"{r['delta']:.6g},{r['sigma']:.6g},{r['n_real']:.10g},{r['n_ceil']},"
                     f"{r['G_B']:.12f},{r['constant']:.12f}")
    return "\n".join(lines) + "\n"


DEFAULT_DELTAS = tuple(np.round(np.arange(1, 101) / 100, 2))
DEFAULT_SIGMAS = (0.5, 1.0, 5.0)
