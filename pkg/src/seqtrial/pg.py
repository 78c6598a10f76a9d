"""Polya-Gamma tools for logistic models.

* A Laplace-type approximation to Pr(p1 > p0) from a two-row logistic
  regression, with the PG weights ``n tanh(eta/2) / (2 eta)`` plugged in at
  the current mean until the mean stops moving.
* An exact PG(b, c) sampler (Devroye's alternating-series method for the
  tilted Jacobi law).
* A Gibbs sampler for the bivariate logistic-normal multi-centre model.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .dist import BetaParams, RngLike, as_generator, prob_superior_exact
from .priors import LogisticPrior, beta_to_logit_prior

log = logging.getLogger(__name__)

#: switch point between the two piecewise forms of the Jacobi density series
TRUNC = 0.64
_PI2_8 = math.pi ** 2 / 8
SEPARATION_ETA = 10.0


def pg_mean(psi, b: float = 1.0):
    """E[PG(b, psi)] = b * tanh(psi / 2) / (2 psi), equal to b / 4 at psi = 0."""
    x = np.abs(np.asarray(psi, dtype=float))
    small = x < 1e-4
    safe = np.where(small, 1.0, x)
    # tanh(x/2)/(2x) = 1/4 - x^2/48 + x^4/480 - ...
    out = np.where(small, 0.25 - x * x / 48 + x ** 4 / 480, np.tanh(safe / 2) / (2 * safe))
    out = b * out
    return out[()] if out.ndim == 0 else out


# -- Laplace approximation ----------------------------------------------------

@dataclass(frozen=True)
class PgLaplaceProblem:
    s1: int
    n1: int
    s0: int
    n0: int
    prior: LogisticPrior | None = None
    tolerance: float = 1e-8
    max_iterations: int = 200

    def __post_init__(self):
        if not (0 <= self.s1 <= self.n1 and 0 <= self.s0 <= self.n0):
            raise ValueError("counts need 0 <= s <= n")
        if self.tolerance <= 0 or self.max_iterations < 1:
            raise ValueError("tolerance must be positive and max_iterations >= 1")
        if self.prior is None:
            object.__setattr__(self, "prior", beta_to_logit_prior(BetaParams(1, 1), BetaParams(1, 1)))


@dataclass
class PgLaplaceResult:
    prob: float
    mean: np.ndarray
    covariance: np.ndarray
    iterations: int
    converged: bool
    separation: bool

    def __float__(self) -> float:
        return self.prob


_X = np.array([[1.0, 0.0], [1.0, 1.0]])  # control row, treatment row


def pg_laplace_prob_superior(problem: PgLaplaceProblem) -> PgLaplaceResult:
    """Gaussian approximation to the posterior of (b0, b1); returns Pr(b1 > 0)."""
    prior = problem.prior
    P0 = np.linalg.inv(prior.covariance)
    P0 = 0.5 * (P0 + P0.T)
    prior_term = P0 @ prior.mean
    n = np.array([problem.n0, problem.n1], dtype=float)
    kappa = np.array([problem.s0, problem.s1], dtype=float) - n / 2
    rhs = prior_term + _X.T @ kappa

    def step(m):
        w = n * pg_mean(_X @ m)
        V = np.linalg.inv(P0 + _X.T @ (w[:, None] * _X))
        V = 0.5 * (V + V.T)
        return V, V @ rhs

    m = np.asarray(prior.mean, dtype=float)
    converged = False
    it = 0
    for it in range(1, problem.max_iterations + 1):
        V, m_new = step(m)
        shift = np.max(np.abs(m_new - m))
        m = m_new
        if shift < problem.tolerance:
            converged = True
            break
    V, _ = step(m)
    separation = bool(np.any(np.abs(_X @ m) > SEPARATION_ETA))
    prob = float(ndtr(m[1] / math.sqrt(V[1, 1])))
    return PgLaplaceResult(prob, m, V, it, converged, separation)


@dataclass
class ValidationCell:
    n: int
    delta: float
    mean_abs_error: float
    max_abs_error: float


def validate_pg_laplace(ns: Sequence[int] = (10, 50, 200), deltas: Sequence[float] = (0.0, 0.15, 0.25),
                        n_datasets: int = 50, rng: RngLike = 0, p0: float = 0.30) -> list[ValidationCell]:
    """Compare the Laplace approximation with the exact Beta(1,1) posterior
    probability on random binomial datasets, per (n, delta)."""
    g = as_generator(rng)
    prior = beta_to_logit_prior(BetaParams(1, 1), BetaParams(1, 1))
    cells = []
    for n in ns:
        for d in deltas:
            s1 = g.binomial(n, p0 + d, n_datasets)
            s0 = g.binomial(n, p0, n_datasets)
            err = np.empty(n_datasets)
            for i, (a, b) in enumerate(zip(s1, s0)):
                approx = pg_laplace_prob_superior(PgLaplaceProblem(int(a), n, int(b), n, prior)).prob
                exact = prob_superior_exact(BetaParams(1 + a, 1 + n - a), BetaParams(1 + b, 1 + n - b))
                err[i] = abs(approx - exact)
            cells.append(ValidationCell(n, d, float(err.mean()), float(err.max())))
    return cells


def validation_csv(cells: Sequence[ValidationCell]) -> str:
    lines = ["n,delta,mean_abs_error,max_abs_error"]
    for c in cells:
        lines.append(f"{c.n},{c.delta:.4g},{c.mean_abs_error:.6f},{c.max_abs_error:.6f}")
    return "\n".join(lines) + "\n"


# -- PG sampler -----------------------------------------------------------------

def _a_coef(n: int, x: np.ndarray) -> np.ndarray:
    # n-th term of the alternating series for the Jacobi density, piecewise in x
    k = n + 0.5
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        big = math.pi * k * np.exp(-0.5 * k * k * math.pi ** 2 * x)
        small = (2.0 / (math.pi * x)) ** 1.5 * math.pi * k * np.exp(-2.0 * k * k / x)
    return np.where(x > TRUNC, big, small)


def _mass_texpon(z: np.ndarray) -> np.ndarray:
    # probability of proposing from the exponential tail
    t = TRUNC
    fz = _PI2_8 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    qdivp = 4.0 / math.pi * (np.exp(x0 - z + log_ndtr(b)) + np.exp(x0 + z + log_ndtr(a)))
    return 1.0 / (1.0 + qdivp)


def _rtigauss(z: np.ndarray, g: np.random.Generator) -> np.ndarray:
    """Inverse-Gaussian(1/z, 1) draws truncated to (0, TRUNC)."""
    R = TRUNC
    out = np.empty(z.size)
    with np.errstate(divide="ignore"):
        mu = 1.0 / z
    heavy = np.flatnonzero(mu > R)
    # mean beyond the truncation point: propose from the z = 0 law, accept by tilting
    while heavy.size:
        e1 = g.exponential(size=heavy.size)
        e2 = g.exponential(size=heavy.size)
        ok = e1 * e1 <= 2.0 * e2 / R
        x = R / (1.0 + R * e1) ** 2
        acc = ok & (g.random(heavy.size) <= np.exp(-0.5 * z[heavy] ** 2 * x))
        out[heavy[acc]] = x[acc]
        heavy = heavy[~acc]
    light = np.flatnonzero(~(mu > R))
    while light.size:
        m = mu[light]
        y = g.standard_normal(light.size) ** 2
        x = m + 0.5 * m * m * y - 0.5 * m * np.sqrt(4.0 * m * y + (m * y) ** 2)
        flip = g.random(light.size) > m / (m + x)
        x = np.where(flip, m * m / x, x)
        acc = x <= R
        out[light[acc]] = x[acc]
        light = light[~acc]
    return out


def _sample_pg1(c: np.ndarray, g: np.random.Generator) -> np.ndarray:
    z = 0.5 * np.abs(c)
    fz = _PI2_8 + 0.5 * z * z
    out = np.empty(z.size)
    pending = np.arange(z.size)
    while pending.size:
        zp, fp = z[pending], fz[pending]
        use_exp = g.random(pending.size) < _mass_texpon(zp)
        x = np.empty(pending.size)
        x[use_exp] = TRUNC + g.exponential(size=int(use_exp.sum())) / fp[use_exp]
        x[~use_exp] = _rtigauss(zp[~use_exp], g)
        s = _a_coef(0, x)
        y = g.random(pending.size) * s
        decided = np.zeros(pending.size, dtype=bool)
        accepted = np.zeros(pending.size, dtype=bool)
        n = 0
        while not decided.all():
            n += 1
            und = np.flatnonzero(~decided)
            if n % 2:
                s[und] -= _a_coef(n, x[und])
                acc = und[y[und] <= s[und]]
                accepted[acc] = True
                decided[acc] = True
            else:
                s[und] += _a_coef(n, x[und])
                decided[und[y[und] > s[und]]] = True
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]
    return out


def sample_pg(b, c, rng: RngLike):
    """Exact PG(b, c) draws for integer ``b >= 0`` (PG(0, c) is 0).

    ``b`` and ``c`` broadcast; each draw is a sum of ``b`` independent PG(1, c)
    draws.
    """
    g = as_generator(rng)
    b_arr, c_arr = np.broadcast_arrays(np.asarray(b), np.asarray(c, dtype=float))
    if np.any(b_arr < 0) or np.any(b_arr != np.round(b_arr)):
        raise ValueError("b must be a nonnegative integer")
    bf = b_arr.astype(np.int64).ravel()
    cf = c_arr.ravel()
    singles = _sample_pg1(np.repeat(cf, bf), g)
    out = np.zeros(bf.size)
    idx = np.repeat(np.arange(bf.size), bf)
    np.add.at(out, idx, singles)
    out = out.reshape(b_arr.shape)
    return out[()] if out.ndim == 0 else out


def pg_laplace_transform(t, b: float, c: float):
    """E[exp(-t w)] for w ~ PG(b, c); finite for t > -pi^2/8 - c^2/2."""
    t = np.asarray(t, dtype=float)
    z = (c * c / 2 + t) / 2
    if np.any(z <= -math.pi ** 2 / 16):
        raise ValueError("transform diverges for t <= -pi^2/8 - c^2/2")
    # cosh(sqrt(z)) continued to z < 0 as cos(sqrt(-z))
    root = np.sqrt(np.abs(z))
    den = np.where(z >= 0, np.cosh(root), np.cos(root))
    out = (np.cosh(c / 2) / den) ** b
    return out[()] if out.ndim == 0 else out


# -- multi-centre Gibbs sampler ------------------------------------------------

@dataclass(frozen=True)
class CentreData:
    """Per-centre counts; arm index 0 is treatment, 1 is control."""

    y: np.ndarray  # (N, 2)
    n: np.ndarray  # (N, 2)
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        n = np.asarray(self.n, dtype=np.int64)
        if y.shape != n.shape or y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y and n must both have shape (centres, 2)")
        if y.shape[0] < 2:
            raise ValueError("need at least two centres")
        if np.any(y < 0) or np.any(y > n):
            raise ValueError("need 0 <= y <= n in every cell")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n", n)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i + 1) for i in range(y.shape[0])))

    @property
    def n_centres(self) -> int:
        return self.y.shape[0]

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[int, int, int, int]], labels: Sequence[str] = ()) -> "CentreData":
        arr = np.asarray(rows, dtype=np.int64)
        return cls(arr[:, [0, 2]], arr[:, [1, 3]], tuple(labels))

    @classmethod
    def from_csv(cls, path: str | Path) -> "CentreData":
        """Read columns ``centre, y_trt, n_trt, y_ctrl, n_ctrl``."""
        need = ["centre", "y_trt", "n_trt", "y_ctrl", "n_ctrl"]
        rows, labels = [], []
        with open(path, newline="") as fh:
            lines = (ln for ln in fh if not ln.lstrip().startswith("#"))
            reader = csv.DictReader(lines)
            missing = [c for c in need if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            for rec in reader:
                try:
                    rows.append(tuple(int(rec[c]) for c in need[1:]))
                except (TypeError, ValueError):
                    raise ValueError(f"{path}: line {reader.line_num}: counts must be integers") from None
                labels.append(rec["centre"])
        return cls.from_rows(rows, labels)


@dataclass(frozen=True)
class GibbsConfig:
    iw_df: float = 3.0
    iw_scale: np.ndarray = field(default_factory=lambda: np.eye(2))
    n_burn: int = 2000
    n_keep: int = 8000
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        B = np.asarray(self.iw_scale, dtype=float)
        if B.shape != (2, 2) or np.max(np.abs(B - B.T)) > 1e-12 or np.min(np.linalg.eigvalsh(B)) <= 0:
            raise ValueError("iw_scale must be a symmetric positive-definite 2x2 matrix")
        if self.iw_df <= 1:
            raise ValueError("iw_df must exceed 1")
        if self.n_burn < 0 or self.n_keep < 1 or self.thin < 1:
            raise ValueError("need n_burn >= 0, n_keep >= 1, thin >= 1")
        object.__setattr__(self, "iw_scale", B)


@dataclass
class GibbsResult:
    mu: np.ndarray  # (K, 2)
    sigma: np.ndarray  # (K, 2, 2)
    psi: np.ndarray  # (K, N, 2)

    @property
    def prob_mu1_gt_mu2(self) -> float:
        return float(np.mean(self.mu[:, 0] > self.mu[:, 1]))

    def chain_csv(self) -> str:
        lines = ["iteration,mu1,mu2,sigma11,sigma12,sigma22"]
        for i, (m, s) in enumerate(zip(self.mu, self.sigma)):
            lines.append(f"{i},{m[0]:.8g},{m[1]:.8g},{s[0, 0]:.8g},{s[0, 1]:.8g},{s[1, 1]:.8g}")
        return "\n".join(lines) + "\n"


def _safe_cholesky(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        log.warning("scale matrix not numerically positive definite; adding 1e-10 * I")
        return np.linalg.cholesky(0.5 * (A + np.swapaxes(A, -1, -2)) + 1e-10 * np.eye(A.shape[-1]))


def _psi_conditional(omega: np.ndarray, kappa: np.ndarray, sigma_inv: np.ndarray, mu: np.ndarray):
    """Mean and covariance of psi_i given omega, mu, Sigma (batched over leading axes).

    ``omega``/``kappa`` have shape (R, N, 2), ``sigma_inv`` (R, 2, 2), ``mu`` (R, 2).
    """
    prec = sigma_inv[:, None, :, :] + omega[..., :, None] * np.eye(2)
    V = np.linalg.inv(prec)
    V = 0.5 * (V + np.swapaxes(V, -1, -2))
    rhs = kappa + np.einsum("rij,rj->ri", sigma_inv, mu)[:, None, :]
    m = np.einsum("rnij,rnj->rni", V, rhs)
    return m, V


def sample_inv_wishart(df: float, scale: np.ndarray, g: np.random.Generator) -> np.ndarray:
    """Batched IW(df, scale) draws via the Bartlett decomposition of the
    matching Wishart(df, scale^-1); ``scale`` has shape (..., p, p)."""
    S = np.asarray(scale, dtype=float)
    p = S.shape[-1]
    batch = S.shape[:-2]
    L = _safe_cholesky(np.linalg.inv(S))
    A = np.zeros(batch + (p, p))
    for i in range(p):
        A[..., i, i] = np.sqrt(g.chisquare(df - i, size=batch))
        for j in range(i):
            A[..., i, j] = g.standard_normal(batch)
    LA = L @ A
    W = LA @ np.swapaxes(LA, -1, -2)
    out = np.linalg.inv(W)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def _initial_state(y: np.ndarray, n: np.ndarray, B: np.ndarray):
    psi = np.log((y + 0.5) / (n - y + 0.5))
    mu = psi.mean(axis=1)
    sigma = np.broadcast_to(B, (y.shape[0], 2, 2)).copy()
    return psi, mu, sigma


def gibbs_batch(y: np.ndarray, n: np.ndarray, config: GibbsConfig, rng: RngLike,
                keep_psi: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Run ``R`` independent chains side by side; ``y``/``n`` have shape (R, N, 2).

    Returns kept draws of mu (K, R, 2), Sigma (K, R, 2, 2) and psi (K, R, N, 2).
    """
    g = as_generator(rng)
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    R, N, _ = y.shape
    if config.iw_df + N <= 3:
        raise ValueError("iw_df + centres must exceed 3 for a proper covariance update")
    kappa = y - n / 2
    B = config.iw_scale
    psi, mu, sigma = _initial_state(y, n, B)
    nb = n.astype(np.int64)
    K = config.n_keep
    mus = np.empty((K, R, 2))
    sigmas = np.empty((K, R, 2, 2))
    psis = np.empty((K, R, N, 2)) if keep_psi else None
    total = config.n_burn + K * config.thin
    k = 0
    for it in range(total):
        omega = sample_pg(nb, psi, g)
        sigma_inv = np.linalg.inv(sigma)
        m, V = _psi_conditional(omega, kappa, sigma_inv, mu)
        psi = m + np.einsum("rnij,rnj->rni", _safe_cholesky(V), g.standard_normal((R, N, 2)))
        Lmu = _safe_cholesky(sigma / N)
        mu = psi.mean(axis=1) + np.einsum("rij,rj->ri", Lmu, g.standard_normal((R, 2)))
        resid = psi - mu[:, None, :]
        S = B + np.einsum("rni,rnj->rij", resid, resid)
        sigma = sample_inv_wishart(config.iw_df + N, S, g)
        if it >= config.n_burn and (it - config.n_burn) % config.thin == config.thin - 1:
            mus[k] = mu
            sigmas[k] = sigma
            if keep_psi:
                psis[k] = psi
            k += 1
    return mus, sigmas, psis


def gibbs_multicentre(data: CentreData, config: GibbsConfig = GibbsConfig(),
                      rng: RngLike | None = None) -> GibbsResult:
    """Single chain for the logistic-normal multi-centre model.

    Uses ``config.seed`` unless an explicit ``rng`` is given.
    """
    g = as_generator(config.seed if rng is None else rng)
    mus, sigmas, psis = gibbs_batch(data.y[None], data.n[None], config, g)
    return GibbsResult(mus[:, 0], sigmas[:, 0], psis[:, 0])
