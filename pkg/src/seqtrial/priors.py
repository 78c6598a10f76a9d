"""Prior construction: implied effect priors, conditional means priors, and
moment matching of Beta priors to the log-odds scale."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, log_ndtr, logit, ndtr, ndtri
from scipy.stats import beta as beta_dist

from .dist import BetaParams, RngLike, as_generator, digamma, trigamma


# -- implied prior on the treatment effect ------------------------------------

@dataclass
class DeltaHistogram:
    """Histogram of ``delta = p1 - p0`` over [-1, 1]; ``mass`` sums to one."""

    edges: np.ndarray
    mass: np.ndarray

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    def mass_between(self, lo: float, hi: float) -> float:
        """Mass of bins lying inside [lo, hi], partial bins counted pro rata."""
        left, right = self.edges[:-1], self.edges[1:]
        overlap = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None)
        return float(np.sum(self.mass * overlap / (right - left)))

    def to_csv(self) -> str:
        lines = ["bin_left,bin_right,mass"]
        for a, b, m in zip(self.edges[:-1], self.edges[1:], self.mass):
            lines.append(f"{a:.10g},{b:.10g},{m:.12g}")
        return "\n".join(lines) + "\n"


def implied_delta_prior(prior1: BetaParams, prior0: BetaParams, draws: int = 1_000_000,
                        bins: int = 201, rng: RngLike = 0) -> DeltaHistogram:
    """Monte Carlo histogram of the treatment effect implied by independent arm priors."""
    if draws < 1000:
        raise ValueError("draws must be >= 1000")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    g = as_generator(rng)
    d = g.beta(prior1.alpha, prior1.beta, draws) - g.beta(prior0.alpha, prior0.beta, draws)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    counts, _ = np.histogram(d, bins=edges)
    return DeltaHistogram(edges, counts / counts.sum())


# -- conditional means prior ---------------------------------------------------

class Link(str, enum.Enum):
    LOGIT = "logit"
    PROBIT = "probit"


@dataclass(frozen=True)
class CmpSpec:
    """Beta priors on the response probability at ``p`` design points."""

    link: Link
    design_points: tuple[tuple[float, ...], ...]
    beta_hypers: tuple[tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        X = np.asarray(self.design_points, dtype=float)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ValueError("need one design point per coefficient (square design matrix)")
        if len(self.beta_hypers) != X.shape[0]:
            raise ValueError("need one (a1, a2) pair per design point")
        if any(not (a > 0 and b > 0) for a, b in self.beta_hypers):
            raise ValueError("Beta hyperparameters must be positive")
        if np.linalg.cond(X) > 1e12:
            raise ValueError("design matrix is singular")

    @property
    def X(self) -> np.ndarray:
        return np.asarray(self.design_points, dtype=float)

    @property
    def p(self) -> int:
        return len(self.design_points)


def _log_cdf_sf_pdf(link: Link, eta: np.ndarray):
    # log F, log(1 - F), log f; all stable in the tails
    if link is Link.LOGIT:
        log_f = -np.logaddexp(0.0, -eta)
        log_s = -np.logaddexp(0.0, eta)
        return log_f, log_s, log_f + log_s
    return log_ndtr(eta), log_ndtr(-eta), -0.5 * eta * eta - 0.5 * np.log(2 * np.pi)


def cmp_log_density(spec: CmpSpec, beta: Sequence[float]) -> float:
    """Unnormalised log prior density induced on the coefficients."""
    b = np.asarray(beta, dtype=float)
    if b.shape != (spec.p,):
        raise ValueError(f"beta must have length {spec.p}")
    eta = spec.X @ b
    log_F, log_S, log_f = _log_cdf_sf_pdf(spec.link, eta)
    a1 = np.array([h[0] for h in spec.beta_hypers])
    a2 = np.array([h[1] for h in spec.beta_hypers])
    return float(np.sum((a1 - 1) * log_F + (a2 - 1) * log_S + log_f))


def sample_cmp_prior(spec: CmpSpec, draws: int, rng: RngLike) -> np.ndarray:
    """Exact draws from the induced coefficient prior, shape (draws, p).

    Each design-point probability is drawn by inverse-CDF sampling of its Beta
    prior, mapped through the inverse link, and the linear system is solved.
    """
    g = as_generator(rng)
    U = g.random((draws, spec.p))
    m = np.column_stack([beta_dist.ppf(U[:, i], a, b) for i, (a, b) in enumerate(spec.beta_hypers)])
    m = np.clip(m, 1e-300, 1 - 1e-16)
    eta = logit(m) if spec.link is Link.LOGIT else ndtri(m)
    return np.linalg.solve(spec.X, eta.T).T


def response_probability(spec: CmpSpec, beta: np.ndarray, x: Sequence[float]) -> np.ndarray:
    eta = np.asarray(beta) @ np.asarray(x, dtype=float)
    if spec.link is Link.LOGIT:
        return expit(eta)
    return ndtr(eta)


def challenger_spec(link: Link | str = Link.LOGIT, centre: float = 65.0,
                    temps: tuple[float, float] = (55.0, 75.0),
                    hypers: tuple[tuple[float, float], ...] = ((1.0, 0.577), (0.577, 1.0))) -> CmpSpec:
    """O-ring failure prior: Beta priors on failure at a cold and a warm launch.

    The model is ``g(m) = b0 + b1 * (temp - centre)``.
    """
    pts = tuple((1.0, t - centre) for t in temps)
    return CmpSpec(Link(link), pts, tuple(hypers))


# -- Beta to log-odds moment matching -----------------------------------------

@dataclass(frozen=True)
class LogisticPrior:
    """Gaussian prior N(mean, covariance) on (intercept, treatment effect) log-odds."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.covariance, dtype=float)
        if C.shape != (len(self.mean), len(self.mean)):
            raise ValueError("covariance shape does not match mean")
        if np.max(np.abs(C - C.T)) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(C)) <= 0:
            raise ValueError("covariance must be positive definite")


def logodds_moments(prior: BetaParams) -> tuple[float, float]:
    """Mean and variance of logit(p) for p ~ Beta(a, b)."""
    a, b = prior.alpha, prior.beta
    return float(digamma(a) - digamma(b)), float(trigamma(a) + trigamma(b))


def beta_to_logit_prior(prior_ctrl: BetaParams, prior_trt: BetaParams) -> LogisticPrior:
    """Gaussian prior on ``(b0, b1)`` with ``eta_ctrl = b0`` and ``eta_trt = b0 + b1``."""
    mc, vc = logodds_moments(prior_ctrl)
    mt, vt = logodds_moments(prior_trt)
    mean = np.array([mc, mt - mc])
    cov = np.array([[vc, -vc], [-vc, vc + vt]])
    return LogisticPrior(mean, cov)
