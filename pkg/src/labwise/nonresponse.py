"""Prevalence estimation when nonresponse may be informative.

Observed data are (n, r responders, y positive responders).  The target
pi = (1 - p) expit(logit(s) + gamma) + p s depends on the nonidentified
log-odds shift gamma.  Three interval estimators are compared: the naive
Wald interval (gamma = 0), the conservative frequentist interval over a
gamma range, and the Bayesian interval with a uniform prior on that range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .blocks import run_blocks
from .distributions import as_generator, normal_cdf, normal_quantile
from .metrics import CoverageReport, CoverageTally, Interval, tally_arrays


@dataclass(frozen=True)
class NonresponseData:
    n: int
    r: int
    y: int

    def __post_init__(self):
        if not 0 <= self.y <= self.r <= self.n:
            raise ValueError("need 0 <= y <= r <= n")


@dataclass(frozen=True)
class NonresponseParams:
    p: float
    s: float
    gamma: float

    @property
    def target(self) -> float:
        return prevalence(self.p, self.s, self.gamma)


@dataclass(frozen=True)
class GammaRange:
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError("gamma range lower exceeds upper")

    @property
    def is_point(self) -> bool:
        return self.lower == self.upper

    def __str__(self):
        return f"({self.lower:g},{self.upper:g})"


def prevalence(p, s, gamma):
    """pi = (1 - p) expit(logit(s) + gamma) + p s."""
    return (1 - p) * expit(logit(s) + gamma) + p * s


def naive_interval(data: NonresponseData, alpha: float) -> Interval:
    """Wald interval for the responder proportion, clipped to [0, 1]."""
    lo, hi = _naive(np.asarray(data.r), np.asarray(data.y), alpha)
    return Interval(float(lo), float(hi))


def _naive(r, y, alpha):
    if np.any(r < 1):
        raise ValueError("naive interval needs at least one responder")
    s = y / r
    half = normal_quantile(1 - alpha / 2) * np.sqrt(s * (1 - s) / r)
    return np.clip(s - half, 0, 1), np.clip(s + half, 0, 1)


def _pi_and_se(p, s, gamma, n, r):
    """Plug-in prevalence and its delta-method SE at a fixed gamma."""
    e = expit(logit(s) + gamma)
    pi = (1 - p) * e + p * s
    d_p = s - e
    d_s = (1 - p) * e * (1 - e) / (s * (1 - s)) + p
    var = d_p**2 * p * (1 - p) / n + d_s**2 * s * (1 - s) / r
    return pi, np.sqrt(var)


def solve_critical_value(gap_over_se, alpha: float, tol: float = 1e-12):
    """C solving Phi(C + gap/se) - Phi(-C) = 1 - alpha, by bisection.

    C lies between the one-sided (gap -> inf) and two-sided (gap = 0)
    normal quantiles.
    """
    g = np.asarray(gap_over_se, dtype=float)
    lo = np.full(g.shape, normal_quantile(1 - alpha))
    hi = np.full(g.shape, normal_quantile(1 - alpha / 2))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        cov = normal_cdf(mid + g) - normal_cdf(-mid)
        too_low = cov < 1 - alpha
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
        if np.all(hi - lo < tol):
            break
    c = 0.5 * (lo + hi)
    return float(c) if c.ndim == 0 else c


def _cfci(n, r, y, I: GammaRange, alpha):
    if np.any((y <= 0) | (y >= r) | (r >= n)):
        raise ValueError("CFCI needs interior estimates: 0 < y < r < n")
    p_hat = r / n
    s_hat = y / r
    pi_l, se_l = _pi_and_se(p_hat, s_hat, I.lower, n, r)
    pi_u, se_u = _pi_and_se(p_hat, s_hat, I.upper, n, r)
    gap = np.maximum(pi_u - pi_l, 0.0)
    c = solve_critical_value(gap / np.maximum(se_l, se_u), alpha)
    return np.clip(pi_l - c * se_l, 0, 1), np.clip(pi_u + c * se_u, 0, 1)


def cfci(data: NonresponseData, I: GammaRange, alpha: float) -> Interval:
    """Conservative interval with at least nominal coverage at every gamma in I.

    (pi_l - C se_l, pi_u + C se_u), where pi_l and pi_u fix gamma at the ends
    of I and C is the plug-in critical value that makes coverage exactly
    nominal at the endpoints.
    """
    lo, hi = _cfci(np.asarray(data.n), np.asarray(data.r), np.asarray(data.y), I, alpha)
    return Interval(float(lo), float(hi))


def _bayes_draws(n, r, y, I: GammaRange, n_draws, gen):
    n, r, y = (np.asarray(v)[..., None] for v in (n, r, y))
    shape = np.broadcast_shapes(r.shape[:-1], ()) + (n_draws,)
    p = gen.beta(r + 1, n - r + 1, shape)
    s = gen.beta(y + 1, r - y + 1, shape)
    g = gen.uniform(I.lower, I.upper, shape)
    return prevalence(p, s, g)


def bayes_interval(data: NonresponseData, I: GammaRange, alpha: float,
                   n_draws: int = 20_000, rng=None) -> Interval:
    """Equal-tailed interval from uniform priors on p, s and on gamma over I."""
    gen = as_generator(rng)
    draws = _bayes_draws(data.n, data.r, data.y, I, n_draws, gen)
    lo, hi = np.quantile(draws, [alpha / 2, 1 - alpha / 2])
    return Interval(float(lo), float(hi))


@dataclass(frozen=True)
class LogitNormalPGD:
    """logit(p) ~ N(mu_beta, sd_beta^2), logit(s) ~ N(mu_theta, sd_theta^2), gamma ~ U(J)."""

    J: GammaRange
    mu_beta: float = float(logit(0.67))
    sd_beta: float = float((logit(0.89) - logit(0.67)) / 2)
    mu_theta: float = float(logit(0.5))
    sd_theta: float = float((logit(0.8) - logit(0.5)) / 2)


ESTIMATORS = ("naive", "CFCI", "Bayes")


def _tables34_block(rng, size, pgd: LogitNormalPGD, I, n, alpha, n_draws):
    # Data and the Bayes posterior draws come from sub-streams that do not
    # depend on J, so every J configuration sees identical data sets.
    data_gen = rng.spawn("data").generator
    p = expit(data_gen.normal(pgd.mu_beta, pgd.sd_beta, size))
    s = expit(data_gen.normal(pgd.mu_theta, pgd.sd_theta, size))
    r = data_gen.binomial(n, p)
    y = data_gen.binomial(r, s)
    gamma = rng.spawn("gamma").generator.uniform(pgd.J.lower, pgd.J.upper, size)
    pi = prevalence(p, s, gamma)

    out = {}
    out["naive"] = tally_arrays(pi, *_naive(r, y, alpha))
    interior = (y > 0) & (y < r) & (r < n)
    lo = np.full(size, np.nan)
    hi = np.full(size, np.nan)
    lo[interior], hi[interior] = _cfci(n, r[interior], y[interior], I, alpha)
    out["CFCI"] = tally_arrays(pi, lo, hi, failed=~interior)

    post_gen = rng.spawn("posterior").generator
    blo = np.empty(size)
    bhi = np.empty(size)
    chunk = 250
    for start in range(0, size, chunk):
        sl = slice(start, start + chunk)
        draws = _bayes_draws(n, r[sl], y[sl], I, n_draws, post_gen)
        blo[sl], bhi[sl] = np.quantile(draws, [alpha / 2, 1 - alpha / 2], axis=-1)
    out["Bayes"] = tally_arrays(pi, blo, bhi)
    return out


def run_tables34(pgd: LogitNormalPGD, I: GammaRange = GammaRange(-2, 2), n: int = 500,
                 alpha: float = 0.05, n_ens: int = 5_000, seed: int = 0, workers: int = 1,
                 n_draws: int = 20_000, block_size: int = 1_000) -> dict[str, CoverageReport]:
    """Labwise coverage and length of the three estimators under one PGD."""
    label = f"tables34:n={n}:level={1 - alpha:g}"
    parts = run_blocks(_tables34_block, n_ens, block_size, seed, label, workers,
                       pgd=pgd, I=I, n=n, alpha=alpha, n_draws=n_draws)
    reports = {}
    for name in ESTIMATORS:
        tally = CoverageTally()
        for part in parts:
            tally = tally + part[name]
        reports[name] = tally.report(name)
    return reports
