"""Normal data with known variance under a near-null/important mixture PGD.

Reproduces the FCI / omniscient / nonomniscient comparison: coverage,
average length and discovery rates of 95% intervals for a normal mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import run_blocks
from .distributions import MixtureNormal, as_generator, mixture_quantile, normal_quantile
from .metrics import CoverageReport, CoverageTally, Interval, MinimalEffectRule, tally_arrays


@dataclass(frozen=True)
class NormalDataModel:
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


@dataclass(frozen=True)
class MixturePGDSpec:
    epsilon: float = 0.05
    p: float = 0.85
    k: float = 8.0

    def __post_init__(self):
        if not (self.epsilon > 0 and 0 <= self.p <= 1 and self.k > 1):
            raise ValueError("need epsilon > 0, 0 <= p <= 1, k > 1")

    def mixture(self) -> MixtureNormal:
        return MixtureNormal.two_scale(self.epsilon, self.p, self.k)

    @property
    def variance(self) -> float:
        """nu^2 = p eps^2 + (1 - p) k^2 eps^2."""
        e2 = self.epsilon**2
        return self.p * e2 + (1 - self.p) * self.k**2 * e2


@dataclass(frozen=True)
class EstimatorSpec:
    """An interval estimator for Table 1: the FCI (prior None) or a BPCI."""

    label: str
    prior: MixtureNormal | None = None


def default_estimators(pgd: MixturePGDSpec) -> list[EstimatorSpec]:
    nu2 = pgd.variance
    ests = [EstimatorSpec("FCI"), EstimatorSpec("OBPI", pgd.mixture())]
    for p in (0.50, 0.95):
        for k in (4, 12):
            ests.append(EstimatorSpec(f"NBPI p={p:.2f} k={k}",
                                      MixtureNormal.two_scale(pgd.epsilon, p, k)))
    for mult, tag in ((1.0, "nu2"), (0.5, "0.5nu2"), (2.0, "2nu2")):
        ests.append(EstimatorSpec(f"NBPI N(0,{tag})", MixtureNormal.normal(0.0, mult * nu2)))
    return ests


@dataclass
class Table1Config:
    pgd: MixturePGDSpec = field(default_factory=MixturePGDSpec)
    model: NormalDataModel = field(default_factory=lambda: NormalDataModel(0.025))
    n_reps: int = 50_000
    nominal_alpha: float = 0.05
    estimators: list[EstimatorSpec] | None = None

    def estimator_list(self) -> list[EstimatorSpec]:
        return self.estimators if self.estimators is not None else default_estimators(self.pgd)


def fci_normal_mean(D, model: NormalDataModel, alpha: float):
    """D +/- z_{1-alpha/2} sigma.  Returns an Interval for scalar D, else (lo, hi)."""
    if alpha >= 1:
        half = 0.0
    else:
        half = normal_quantile(1 - alpha / 2) * model.sigma
    if np.ndim(D) == 0:
        return Interval(float(D) - half, float(D) + half)
    D = np.asarray(D, dtype=float)
    return D - half, D + half


def mixture_posterior(D, prior: MixtureNormal, model: NormalDataModel) -> MixtureNormal:
    """Conjugate update of a normal-mixture prior; batched over array ``D``."""
    D = np.asarray(D, dtype=float)[..., None]
    s2 = model.sigma2
    tau2 = prior.variances
    marg = tau2 + s2
    post_mean = (prior.means * s2 + D * tau2) / marg
    post_var = np.broadcast_to(tau2 * s2 / marg, post_mean.shape)
    # log marginal likelihood of each component, normalised in log space
    logw = np.log(np.where(prior.weights > 0, prior.weights, 1.0)) \
        - 0.5 * (D - prior.means) ** 2 / marg - 0.5 * np.log(marg)
    logw = np.where(prior.weights > 0, logw, -np.inf)
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w = w / w.sum(axis=-1, keepdims=True)
    return MixtureNormal(w, post_mean, post_var)


def equal_tailed_bpci(posterior: MixtureNormal, alpha: float):
    """(alpha/2, 1 - alpha/2) posterior quantiles; batched posteriors give arrays."""
    lo = mixture_quantile(posterior, alpha / 2)
    hi = mixture_quantile(posterior, 1 - alpha / 2)
    if np.ndim(lo) == 0:
        return Interval(float(lo), float(hi))
    return lo, hi


def _table1_block(rng, size, config: Table1Config):
    gen = as_generator(rng)
    pgd = config.pgd
    comp = gen.random(size) < pgd.p
    sd = np.where(comp, pgd.epsilon, pgd.k * pgd.epsilon)
    theta = gen.normal(0.0, 1.0, size) * sd
    D = theta + gen.normal(0.0, config.model.sigma, size)
    rule = MinimalEffectRule.from_epsilon(pgd.epsilon)
    out = {}
    for est in config.estimator_list():
        if est.prior is None:
            lo, hi = fci_normal_mean(D, config.model, config.nominal_alpha)
        else:
            post = mixture_posterior(D, est.prior, config.model)
            lo, hi = equal_tailed_bpci(post, config.nominal_alpha)
        out[est.label] = tally_arrays(theta, lo, hi, rule=rule)
    return out


def run_table1(config: Table1Config, seed: int = 0, workers: int = 1,
               block_size: int = 5_000) -> dict[str, CoverageReport]:
    """Labwise properties of every estimator in ``config`` over ``n_reps`` pairs."""
    parts = run_blocks(_table1_block, config.n_reps, block_size, seed, "table1",
                       workers, config=config)
    reports = {}
    for est in config.estimator_list():
        tally = CoverageTally()
        for part in parts:
            tally = tally + part[est.label]
        reports[est.label] = tally.report(est.label)
    return reports


def fixed_theta_coverage(theta: float, model: NormalDataModel, alpha: float, n: int, rng) -> float:
    """Frequentist coverage of the FCI at one parameter value, by simulation."""
    gen = as_generator(rng)
    D = theta + gen.normal(0.0, model.sigma, n)
    lo, hi = fci_normal_mean(D, model, alpha)
    return float(np.mean((lo <= theta) & (theta <= hi)))
