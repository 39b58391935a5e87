"""Silica exposure and lung cancer: Poisson model with unmeasured smoking.

log E(deaths) = c + b1 + log(p . w) - log(q . w), w = (1, e^b2, e^b3), where p
and q are the smoking-category distributions in the exposed cohort and the
reference population.  The posterior for b1 is computed in two stages:
flat-prior draws of the log-mean plus prior draws of the nuisance
parameters (a Monte Carlo sensitivity analysis), then importance weights
by the b1 prior density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .blocks import run_blocks
from .distributions import DirichletParams, as_generator, sample_dirichlet
from .metrics import CoverageReport, Interval, tally_arrays
from .weighted import DEFAULT_ESS_FLOOR, WeightedSample, effective_sample_size, normalize_log_weights, weighted_quantile

ZERO_COUNT_SHAPE = 0.5


@dataclass(frozen=True)
class SilicaModelSpec:
    c: float = math.log(68.1)
    y: int = 109


@dataclass(frozen=True)
class SilicaPrior:
    beta1_sd: float = math.log(5) / 2
    beta2_mean: float = math.log(23.6)
    beta2_sd: float = 0.094
    beta3_mean: float = math.log(8.7)
    beta3_sd: float = 0.094
    p_dir: DirichletParams = field(default_factory=lambda: DirichletParams.from_mean(199, (0.26, 0.40, 0.34)))
    q_dir: DirichletParams = field(default_factory=lambda: DirichletParams.from_mean(14_000, (0.34, 0.35, 0.31)))

    def sample_nuisance(self, rng, size):
        """(beta2, beta3, p, q) prior draws; p and q have shape size + (3,)."""
        gen = as_generator(rng)
        b2 = gen.normal(self.beta2_mean, self.beta2_sd, size)
        b3 = gen.normal(self.beta3_mean, self.beta3_sd, size)
        p = sample_dirichlet(gen, self.p_dir, size)
        q = sample_dirichlet(gen, self.q_dir, size)
        return b2, b3, p, q


@dataclass(frozen=True)
class PGDVariant:
    """Perturbation of the prior used to generate parameters.

    ``shift_beta2`` / ``shift_beta3`` move the means by that many prior SDs;
    ``discount`` names the Dirichlet ('p' or 'q') whose concentration is
    halved.  All-zero fields give the unmodified prior.
    """

    shift_beta2: int = 0
    shift_beta3: int = 0
    discount: str | None = None

    @property
    def code(self) -> str:
        if self.discount is None and not (self.shift_beta2 or self.shift_beta3):
            return "Prior"
        sign = lambda s: "+" if s > 0 else "-"
        return f"{sign(self.shift_beta2)}{sign(self.shift_beta3)}{self.discount}"

    def apply(self, prior: SilicaPrior) -> SilicaPrior:
        out = replace(prior,
                      beta2_mean=prior.beta2_mean + self.shift_beta2 * prior.beta2_sd,
                      beta3_mean=prior.beta3_mean + self.shift_beta3 * prior.beta3_sd)
        if self.discount == "p":
            out = replace(out, p_dir=prior.p_dir.discounted(2))
        elif self.discount == "q":
            out = replace(out, q_dir=prior.q_dir.discounted(2))
        return out


def table7_variants() -> list[PGDVariant]:
    out = [PGDVariant()]
    for s2 in (-1, 1):
        for s3 in (-1, 1):
            for d in ("p", "q"):
                out.append(PGDVariant(s2, s3, d))
    return out


def confounding_term(beta2, beta3, p, q):
    """log(p . w) - log(q . w) with w = (1, e^b2, e^b3), via log-sum-exp."""
    logw = np.stack([np.zeros_like(np.asarray(beta2, dtype=float)), beta2, beta3], axis=-1)
    return logsumexp(logw, b=p, axis=-1) - logsumexp(logw, b=q, axis=-1)


def lambda_of(beta1, beta2, beta3, p, q, c):
    """Log Poisson mean for the cohort."""
    return c + beta1 + confounding_term(beta2, beta3, p, q)


def _stage_one(y, c, prior: SilicaPrior, n_draws, gen, ignore_confounding=False):
    """Implied beta1 draws, shape np.shape(y) + (n_draws,), and the zero-count mask."""
    y = np.asarray(y, dtype=float)
    zero = y == 0
    shape = y.shape + (n_draws,)
    # flat prior on the log-mean: exp(lambda) | y ~ Gamma(y, 1)
    gamma_shape = np.where(zero, ZERO_COUNT_SHAPE, y)[..., None]
    lam = np.log(gen.standard_gamma(gamma_shape, shape))
    if ignore_confounding:
        return lam - c, zero
    b2, b3, p, q = prior.sample_nuisance(gen, shape)
    return lam - c - confounding_term(b2, b3, p, q), zero


def _beta1_log_prior(beta1, prior: SilicaPrior):
    return -0.5 * (beta1 / prior.beta1_sd) ** 2


def two_stage_posterior(y: int, c: float = math.log(68.1), prior: SilicaPrior = SilicaPrior(),
                        n_draws: int = 50_000, rng=None, reweight: bool = True,
                        ignore_confounding: bool = False,
                        ess_floor: float = DEFAULT_ESS_FLOOR) -> WeightedSample:
    """Weighted posterior sample of beta1.

    ``reweight=False`` stops after stage one (the sensitivity analysis);
    ``ignore_confounding`` forces p = q, so beta1 = lambda - c.
    """
    if y < 0:
        raise ValueError("death count must be non-negative")
    gen = as_generator(rng)
    beta1, _ = _stage_one(y, c, prior, n_draws, gen, ignore_confounding)
    if not reweight:
        return WeightedSample.unweighted(beta1, ess_floor)
    return WeightedSample.from_log_weights(beta1, _beta1_log_prior(beta1, prior), ess_floor)


@dataclass
class SilicaFit:
    interval: Interval
    mcsa_interval: Interval
    no_confounding_interval: Interval
    ess: float
    n_draws: int


def fit(spec: SilicaModelSpec = SilicaModelSpec(), prior: SilicaPrior = SilicaPrior(),
        n_draws: int = 50_000, rng=None, alpha: float = 0.05) -> SilicaFit:
    """Real-data analysis: intervals for exp(beta1) with and without the reweighting,
    and with smoking confounding ignored."""
    gen = as_generator(rng)
    beta1, _ = _stage_one(spec.y, spec.c, prior, n_draws, gen)
    full = WeightedSample.from_log_weights(beta1, _beta1_log_prior(beta1, prior))
    mcsa = WeightedSample.unweighted(beta1)
    naive = two_stage_posterior(spec.y, spec.c, prior, n_draws, gen, ignore_confounding=True)
    rr = lambda iv: Interval(math.exp(iv.lower), math.exp(iv.upper))
    return SilicaFit(rr(full.equal_tailed(alpha)), rr(mcsa.equal_tailed(alpha)),
                     rr(naive.equal_tailed(alpha)), full.ess, n_draws)


def _table7_block(rng, size, variant: PGDVariant, prior: SilicaPrior, c, n_draws, alpha,
                  chunk=100):
    gen = as_generator(rng)
    pgd = variant.apply(prior)
    beta1 = gen.normal(0.0, pgd.beta1_sd, size)
    b2, b3, p, q = pgd.sample_nuisance(gen, size)
    lam = lambda_of(beta1, b2, b3, p, q, c)
    y = gen.poisson(np.exp(lam))
    lo = np.empty(size)
    hi = np.empty(size)
    ess = np.empty(size)
    for start in range(0, size, chunk):
        sl = slice(start, min(start + chunk, size))
        draws, _ = _stage_one(y[sl], c, prior, n_draws, gen)
        w = normalize_log_weights(_beta1_log_prior(draws, prior))
        q_ = weighted_quantile(draws, w, [alpha / 2, 1 - alpha / 2])
        lo[sl], hi[sl] = q_[:, 0], q_[:, 1]
        ess[sl] = effective_sample_size(w)
    return tally_arrays(beta1, lo, hi), int(np.count_nonzero(y == 0)), ess


@dataclass
class Table7Row:
    variant: PGDVariant
    report: CoverageReport
    n_zero_counts: int
    min_ess: float


def run_table7(variants: list[PGDVariant] | None = None, prior: SilicaPrior = SilicaPrior(),
               c: float = math.log(68.1), n_ens: int = 20_000, n_draws: int = 2_000,
               alpha: float = 0.05, seed: int = 0, workers: int = 1,
               block_size: int = 2_000) -> list[Table7Row]:
    """Coverage of the (unmodified-prior) interval for beta1 under each PGD variant."""
    rows = []
    for variant in variants or table7_variants():
        parts = run_blocks(_table7_block, n_ens, block_size, seed, f"table7:{variant.code}",
                           workers, variant=variant, prior=prior, c=c, n_draws=n_draws,
                           alpha=alpha)
        tally = parts[0][0]
        for t, _, _ in parts[1:]:
            tally = tally + t
        rows.append(Table7Row(variant, tally.report(variant.code),
                              sum(z for _, z, _ in parts),
                              float(min(e.min() for _, _, e in parts))))
    return rows
