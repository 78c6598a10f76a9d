"""Distributions, special functions and superiority probabilities.

Everything else in the package builds on this module: Beta hyperparameters,
the normal CDF/quantile, digamma/trigamma, and the probability that one Beta
variate exceeds another (closed form, Monte Carlo, and normal approximation).

Random numbers come from :class:`RngStream`, a ``(root_seed, stream_id)`` pair
that deterministically produces an independent numpy ``Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import betaln, ndtr, ndtri

__all__ = [
    "BetaParams",
    "RngStream",
    "NonIntegerParameters",
    "as_generator",
    "normal_cdf",
    "normal_quantile",
    "digamma",
    "trigamma",
    "prob_superior_exact",
    "prob_superior_mc",
    "prob_superior_normal_approx",
    "superiority_estimate",
]


class NonIntegerParameters(ValueError):
    """Raised when the closed-form superiority sum is asked for non-integer parameters."""


@dataclass(frozen=True)
class BetaParams:
    """Beta(alpha, beta) hyperparameters for one arm's success probability."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Beta parameters must be positive, got ({self.alpha}, {self.beta})")
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError("Beta parameters must be finite")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def variance(self) -> float:
        a, b = self.alpha, self.beta
        return a * b / ((a + b) ** 2 * (a + b + 1))

    @property
    def is_integer(self) -> bool:
        return float(self.alpha).is_integer() and float(self.beta).is_integer()

    def update(self, successes: int, trials: int) -> "BetaParams":
        """Conjugate posterior after ``successes`` out of ``trials``."""
        if not 0 <= successes <= trials:
            raise ValueError("need 0 <= successes <= trials")
        return BetaParams(self.alpha + successes, self.beta + trials - successes)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(root_seed, stream_id)``.

    ``generator()`` always returns a fresh generator positioned at the start of
    the stream, so two calls yield identical sequences. Distinct stream ids are
    mixed through numpy's ``SeedSequence`` hash and give independent streams.
    """

    root_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("root_seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.root_seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.root_seed, stream_id)


RngLike = Union[RngStream, np.random.Generator, int]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


# -- normal distribution ------------------------------------------------------

def normal_cdf(z):
    """Standard normal CDF."""
    return ndtr(z)


def normal_quantile(p):
    """Inverse standard normal CDF; ``p`` must lie strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any((arr <= 0) | (arr >= 1)) or np.any(np.isnan(arr)):
        raise ValueError("normal_quantile requires 0 < p < 1")
    return ndtri(p)


# -- polygamma ------------------------------------------------------------------

_SHIFT = 10.0


def digamma(x):
    """Digamma function for positive arguments.

    Upward recurrence to x >= 10, then the asymptotic Bernoulli series.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("digamma requires x > 0")
    x = x.copy()
    acc = np.zeros_like(x)
    while True:
        small = x < _SHIFT
        if not np.any(small):
            break
        acc = acc - np.where(small, 1.0 / x, 0.0)
        x = np.where(small, x + 1.0, x)
    r = 1.0 / (x * x)
    series = r * (1 / 12 - r * (1 / 120 - r * (1 / 252 - r * (1 / 240 - r * (1 / 132 - r * (691 / 32760 - r / 12))))))
    out = acc + np.log(x) - 0.5 / x - series
    return out[()] if out.ndim == 0 else out


def trigamma(x):
    """Trigamma function for positive arguments (recurrence + asymptotic series)."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("trigamma requires x > 0")
    x = x.copy()
    acc = np.zeros_like(x)
    while True:
        small = x < _SHIFT
        if not np.any(small):
            break
        acc = acc + np.where(small, 1.0 / (x * x), 0.0)
        x = np.where(small, x + 1.0, x)
    r = 1.0 / (x * x)
    series = (r / x) * (1 / 6 - r * (1 / 30 - r * (1 / 42 - r * (1 / 30 - r * (5 / 66 - r * (691 / 2730 - r * 7 / 6))))))
    out = acc + 1.0 / x + 0.5 * r + series
    return out[()] if out.ndim == 0 else out


# -- superiority probabilities ------------------------------------------------

def _beta_superior_sum(a1: int, b1: int, a0: int, b0: int) -> float:
    # Pr(X1 > X0), X1 ~ Beta(a1, b1), X0 ~ Beta(a0, b0), integer a1; terms in log space.
    i = np.arange(a1, dtype=float)
    logs = betaln(a0 + i, b0 + b1) - np.log(b1 + i) - betaln(1 + i, b1) - betaln(a0, b0)
    m = logs.max()
    return float(math.exp(m) * np.exp(logs - m).sum())


def prob_superior_exact(post1: BetaParams, post0: BetaParams) -> float:
    """Exact Pr(p1 > p0) for independent Beta laws with integer parameters.

    Raises :class:`NonIntegerParameters` otherwise; use :func:`prob_superior_mc`.
    """
    if not (post1.is_integer and post0.is_integer):
        raise NonIntegerParameters("closed form needs integer Beta parameters")
    a1, b1, a0, b0 = (int(post1.alpha), int(post1.beta), int(post0.alpha), int(post0.beta))
    if (a1, b1) == (a0, b0):
        return 0.5
    # sum over the shorter index range and take the complement otherwise; the
    # branch depends only on the unordered pair, so swapping arms gives 1 - p
    if (a1, b1) < (a0, b0):
        p = _beta_superior_sum(a1, b1, a0, b0)
    else:
        p = 1.0 - _beta_superior_sum(a0, b0, a1, b1)
    return min(1.0, max(0.0, p))


def prob_superior_mc(post1: BetaParams, post0: BetaParams, draws: int, rng: RngLike) -> float:
    """Monte Carlo estimate of Pr(p1 > p0) from ``draws`` paired Beta samples."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    g = as_generator(rng)
    x1 = g.beta(post1.alpha, post1.beta, size=draws)
    x0 = g.beta(post0.alpha, post0.beta, size=draws)
    return float(np.mean(x1 > x0))


def prob_superior_normal_approx(post1: BetaParams, post0: BetaParams) -> float:
    return float(ndtr((post1.mean - post0.mean) / math.sqrt(post1.variance + post0.variance)))


def superiority_estimate(post1: BetaParams, post0: BetaParams, draws: int | None,
                         rng: RngLike | None = None) -> float:
    """Pr(p1 > p0) as used for declarations.

    ``draws=None`` gives the exact value (integer parameters only). With an
    integer ``draws`` the result is a Monte Carlo estimate from that many paired
    posterior draws. For integer parameters the count of draws with p1 > p0 is
    sampled directly as Binomial(draws, exact probability), which has the same
    law as counting the pairs; otherwise Beta pairs are drawn.
    """
    if draws is None:
        return prob_superior_exact(post1, post0)
    if rng is None:
        raise ValueError("a random stream is required when draws is given")
    g = as_generator(rng)
    if post1.is_integer and post0.is_integer:
        return g.binomial(draws, prob_superior_exact(post1, post0)) / draws
    return prob_superior_mc(post1, post0, draws, g)
