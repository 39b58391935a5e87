"""Case-control study with nondifferential exposure misclassification.

Apparent exposure counts Y_i ~ Bin(n_i, theta_i) with
theta_i = r_i SN + (1 - r_i)(1 - SP); the target is the log odds ratio
beta = logit(r1) - logit(r0).  Posterior computation runs a
data-augmentation Gibbs sampler under uniform priors on (r0, r1), then
importance-reweights the output to a bivariate logit-normal prior.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .blocks import run_blocks
from .distributions import as_generator, normal_quantile
from .metrics import (CoverageReport, CoverageTally, Interval, nearest_indices,
                      tally_arrays)
from .weighted import DEFAULT_ESS_FLOOR, WeightedSample, effective_sample_size, normalize_log_weights, weighted_quantile


@dataclass(frozen=True)
class CaseControlData:
    y0: int
    y1: int
    n0: int
    n1: int

    def __post_init__(self):
        if not (0 <= self.y0 <= self.n0 and 0 <= self.y1 <= self.n1):
            raise ValueError("need 0 <= y_i <= n_i")


@dataclass(frozen=True)
class MisclassParams:
    r0: float
    r1: float
    sn: float
    sp: float

    def apparent(self) -> tuple[float, float]:
        return (apparent_prevalence(self.r0, self.sn, self.sp),
                apparent_prevalence(self.r1, self.sn, self.sp))

    @property
    def log_or(self) -> float:
        return float(logit(self.r1) - logit(self.r0))

    def as_array(self) -> np.ndarray:
        return np.array([self.r0, self.r1, self.sn, self.sp])


def apparent_prevalence(r, sn, sp):
    return r * sn + (1 - r) * (1 - sp)


@dataclass(frozen=True)
class MisclassPrior:
    """BVN(mu, tau^2, rho) on (logit r0, logit r1); Beta priors on SN and SP."""

    mu: float = -2.3
    tau: float = 1.17
    rho: float = 0.76
    a_n: float = 18.0
    b_n: float = 4.0
    a_p: float = 18.0
    b_p: float = 4.0
    label: str = ""

    def __post_init__(self):
        if not (self.tau > 0 and -1 < self.rho < 1):
            raise ValueError("need tau > 0 and -1 < rho < 1")
        if min(self.a_n, self.b_n, self.a_p, self.b_p) <= 0:
            raise ValueError("Beta parameters must be positive")

    @property
    def beta_sd(self) -> float:
        """SD of the implied N(0, 2 (1 - rho) tau^2) prior on the log odds ratio."""
        return math.sqrt(2 * (1 - self.rho)) * self.tau

    def with_beta(self, a_n, b_n, a_p=None, b_p=None, label="") -> "MisclassPrior":
        return replace(self, a_n=a_n, b_n=b_n, a_p=a_n if a_p is None else a_p,
                       b_p=b_n if b_p is None else b_p, label=label)

    def sample(self, rng, size: int) -> np.ndarray:
        """Draws of (r0, r1, sn, sp), shape (size, 4)."""
        gen = as_generator(rng)
        z = gen.standard_normal((size, 2))
        l0 = self.mu + self.tau * z[:, 0]
        l1 = self.mu + self.tau * (self.rho * z[:, 0] + math.sqrt(1 - self.rho**2) * z[:, 1])
        sn = gen.beta(self.a_n, self.b_n, size)
        sp = gen.beta(self.a_p, self.b_p, size)
        return np.column_stack([expit(l0), expit(l1), sn, sp])

    def log_density_prevalences(self, r0, r1):
        """Log density of (r0, r1) on the natural scale (logit Jacobian included)."""
        l0, l1 = logit(r0), logit(r1)
        u0 = (l0 - self.mu) / self.tau
        u1 = (l1 - self.mu) / self.tau
        one_m = 1 - self.rho**2
        quad = (u0 * u0 - 2 * self.rho * u0 * u1 + u1 * u1) / one_m
        log_bvn = -0.5 * quad - math.log(2 * math.pi * self.tau**2 * math.sqrt(one_m))
        return log_bvn - np.log(r0 * (1 - r0)) - np.log(r1 * (1 - r1))


def table5_priors(pgd: MisclassPrior | None = None) -> list[MisclassPrior]:
    """Estimators (iii)-(vii): PGD-matching prior, then four SN/SP Beta variants."""
    pgd = pgd or MisclassPrior()
    return [
        replace(pgd, label="iii"),
        pgd.with_beta(9.5, 2.5, label="iv"),
        pgd.with_beta(26.5, 5.5, label="v"),
        pgd.with_beta(23.5, 8.5, label="vi"),
        pgd.with_beta(28.5, 3.5, label="vii"),
    ]


# --------------------------------------------------------------------------
# frequentist estimators


def _naive_logor(y0, y1, n0, n1, alpha):
    y0, y1, n0, n1 = (np.asarray(v, dtype=float) for v in (y0, y1, n0, n1))
    if np.any(n0 <= 0) or np.any(n1 <= 0):
        raise ValueError("degenerate table: empty group")
    cells = np.stack([y1, n1 - y1, y0, n0 - y0])
    cells = np.where(np.any(cells == 0, axis=0), cells + 0.5, cells)
    a, b, c, d = cells
    est = np.log(a * d / (b * c))
    half = normal_quantile(1 - alpha / 2) * np.sqrt(1 / a + 1 / b + 1 / c + 1 / d)
    return est - half, est + half


def fci_naive_logor(data: CaseControlData, alpha: float = 0.05) -> Interval:
    """Wald interval for the apparent log odds ratio (Haldane 0.5 only if a cell is 0)."""
    lo, hi = _naive_logor(data.y0, data.y1, data.n0, data.n1, alpha)
    return Interval(float(lo), float(hi))


def _known_misclass(y0, y1, n0, n1, sn, sp, alpha):
    if not sn + sp > 1:
        raise ValueError("need sn + sp > 1")
    y0, y1, n0, n1 = (np.asarray(v, dtype=float) for v in (y0, y1, n0, n1))
    j = sn + sp - 1
    th0, th1 = y0 / n0, y1 / n1
    r0 = (th0 - (1 - sp)) / j
    r1 = (th1 - (1 - sp)) / j
    ok = (r0 > 0) & (r0 < 1) & (r1 > 0) & (r1 < 1)
    r0s = np.where(ok, r0, 0.5)
    r1s = np.where(ok, r1, 0.5)
    est = logit(r1s) - logit(r0s)
    var = (th0 * (1 - th0) / n0 / j**2) / (r0s * (1 - r0s)) ** 2 \
        + (th1 * (1 - th1) / n1 / j**2) / (r1s * (1 - r1s)) ** 2
    half = normal_quantile(1 - alpha / 2) * np.sqrt(var)
    return np.where(ok, est - half, np.nan), np.where(ok, est + half, np.nan), ~ok


def fci_known_misclass(data: CaseControlData, sn: float = 0.85, sp: float = 0.85,
                       alpha: float = 0.05) -> Interval | None:
    """Wald interval after correcting for known SN/SP; ``None`` when undefined.

    Undefined when a corrected prevalence falls outside (0, 1), i.e. when an
    apparent prevalence is not strictly between 1 - SP and SN.
    """
    lo, hi, failed = _known_misclass(data.y0, data.y1, data.n0, data.n1, sn, sp, alpha)
    if failed:
        return None
    return Interval(float(lo), float(hi))


# --------------------------------------------------------------------------
# Gibbs sampler with latent true-exposure counts


@dataclass(frozen=True)
class ChainSettings:
    n_sweeps: int = 25_000
    burn_in: int = 5_000
    thin: int = 4

    def __post_init__(self):
        if not self.n_sweeps > self.burn_in >= 0 or self.thin < 1:
            raise ValueError("need n_sweeps > burn_in >= 0 and thin >= 1")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_sweeps, self.thin))


@dataclass
class MisclassDraws:
    r0: np.ndarray
    r1: np.ndarray
    sn: np.ndarray
    sp: np.ndarray

    @property
    def beta(self) -> np.ndarray:
        return logit(self.r1) - logit(self.r0)


def _gibbs_batch(y, n, beta_sn, beta_sp, chain: ChainSettings, gen, keep_sn_sp=True,
                 fixed_sn_sp=None):
    """Vectorised chains, one per row of ``y`` / ``n`` (shape (B, 2)).

    Returns kept (r0, r1, sn, sp) arrays of shape (B, n_kept).
    """
    y = np.asarray(y, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    B = y.shape[0]
    a_n, b_n = beta_sn
    a_p, b_p = beta_sp
    r = gen.uniform(0, 1, (B, 2))
    if fixed_sn_sp is None:
        sn = gen.beta(a_n, b_n, B)
        sp = gen.beta(a_p, b_p, B)
    else:
        sn = np.full(B, float(fixed_sn_sp[0]))
        sp = np.full(B, float(fixed_sn_sp[1]))
    K = chain.n_kept
    out_r = np.empty((2, B, K))
    out_sn = np.empty((B, K)) if keep_sn_sp else None
    out_sp = np.empty((B, K)) if keep_sn_sp else None
    ny = n - y
    j = 0
    for it in range(chain.n_sweeps):
        snc = sn[:, None]
        fp = (1 - sp)[:, None]
        tp = r * snc
        theta = tp + (1 - r) * fp
        # true exposed among apparent exposed / apparent unexposed
        A = gen.binomial(y, np.clip(tp / theta, 0, 1))
        Bc = gen.binomial(ny, np.clip((r - tp) / (1 - theta), 0, 1))
        exposed = A + Bc
        r = gen.beta(exposed + 1, n - exposed + 1)
        if fixed_sn_sp is None:
            sn = gen.beta(a_n + A.sum(axis=1), b_n + Bc.sum(axis=1))
            sp = gen.beta(a_p + (ny - Bc).sum(axis=1), b_p + (y - A).sum(axis=1))
        if it >= chain.burn_in and (it - chain.burn_in) % chain.thin == 0:
            out_r[:, :, j] = r.T
            if keep_sn_sp:
                out_sn[:, j] = sn
                out_sp[:, j] = sp
            j += 1
    return out_r[0], out_r[1], out_sn, out_sp


def gibbs_uniform_prior(data: CaseControlData, beta_sn=(18.0, 4.0), beta_sp=(18.0, 4.0),
                        chain: ChainSettings = ChainSettings(), rng=None,
                        fixed_sn_sp=None) -> MisclassDraws:
    """Posterior draws of (r0, r1, SN, SP) with uniform priors on r0 and r1.

    ``fixed_sn_sp`` pins SN and SP (the identified sub-model).
    """
    gen = as_generator(rng)
    y = np.array([[data.y0, data.y1]])
    n = np.array([[data.n0, data.n1]])
    r0, r1, sn, sp = _gibbs_batch(y, n, beta_sn, beta_sp, chain, gen, fixed_sn_sp=fixed_sn_sp)
    return MisclassDraws(r0[0], r1[0], sn[0], sp[0])


def importance_log_weights(r0, r1, target: MisclassPrior):
    # sampling density of (r0, r1) is uniform, so log weight = log target density
    return target.log_density_prevalences(r0, r1)


def reweight_to_prior(draws: MisclassDraws, target: MisclassPrior,
                      ess_floor: float = DEFAULT_ESS_FLOOR) -> WeightedSample:
    """Weighted sample of beta under ``target``; draws must share its SN/SP priors."""
    logw = importance_log_weights(draws.r0, draws.r1, target)
    return WeightedSample.from_log_weights(draws.beta, logw, ess_floor)


def bpci_beta(weighted: WeightedSample, alpha: float = 0.05) -> Interval:
    return weighted.equal_tailed(alpha)


# --------------------------------------------------------------------------
# simulation study


@dataclass
class Table5Config:
    pgd: MisclassPrior = field(default_factory=MisclassPrior)
    priors: list[MisclassPrior] | None = None
    n0: int = 500
    n1: int = 500
    alpha: float = 0.05
    n_ens: int = 2_000
    known_sn: float = 0.85
    known_sp: float = 0.85
    chain: ChainSettings = field(default_factory=ChainSettings)
    ess_floor: float = DEFAULT_ESS_FLOOR

    def prior_list(self) -> list[MisclassPrior]:
        return self.priors if self.priors is not None else table5_priors(self.pgd)


@dataclass
class EnsembleBlock:
    """Columnar per-ensemble output: true parameters plus each estimator's interval."""

    theta: np.ndarray
    phi: np.ndarray
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    failed: dict[str, np.ndarray]
    ess: dict[str, np.ndarray]

    @staticmethod
    def concat(blocks: list["EnsembleBlock"]) -> "EnsembleBlock":
        keys = blocks[0].lower.keys()
        cat = lambda attr: {k: np.concatenate([getattr(b, attr)[k] for b in blocks]) for k in keys}
        ess_keys = blocks[0].ess.keys()
        return EnsembleBlock(
            theta=np.concatenate([b.theta for b in blocks]),
            phi=np.concatenate([b.phi for b in blocks]),
            lower=cat("lower"), upper=cat("upper"), failed=cat("failed"),
            ess={k: np.concatenate([b.ess[k] for b in blocks]) for k in ess_keys},
        )

    def tally(self, estimator: str) -> CoverageTally:
        return tally_arrays(self.phi, self.lower[estimator], self.upper[estimator],
                            self.failed[estimator])


LOG_COLUMNS = ("index", "estimator_id", "r0", "r1", "sn", "sp", "phi", "lower", "upper",
               "failed", "ess")


def write_ensemble_log(ens: EnsembleBlock, path) -> None:
    """One row per (ensemble, estimator): true parameters, target and interval."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(LOG_COLUMNS)
        for key in ens.lower:
            ess = ens.ess.get(key)
            for i in range(ens.phi.size):
                w.writerow([i, key, *map(repr, ens.theta[i].tolist()), repr(float(ens.phi[i])),
                            repr(float(ens.lower[key][i])), repr(float(ens.upper[key][i])),
                            int(ens.failed[key][i]), "" if ess is None else repr(float(ess[i]))])


def read_ensemble_log(path) -> EnsembleBlock:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ValueError(f"{path}: not an ensemble log (columns {reader.fieldnames})")
        rows = list(reader)
    keys = list(dict.fromkeys(r["estimator_id"] for r in rows))
    first = [r for r in rows if r["estimator_id"] == keys[0]]
    theta = np.array([[float(r[c]) for c in ("r0", "r1", "sn", "sp")] for r in first])
    phi = np.array([float(r["phi"]) for r in first])
    lower, upper, failed, ess = {}, {}, {}, {}
    for key in keys:
        sub = [r for r in rows if r["estimator_id"] == key]
        if len(sub) != phi.size:
            raise ValueError(f"{path}: estimator {key!r} has {len(sub)} rows, expected {phi.size}")
        lower[key] = np.array([float(r["lower"]) for r in sub])
        upper[key] = np.array([float(r["upper"]) for r in sub])
        failed[key] = np.array([r["failed"] == "1" for r in sub])
        if sub[0]["ess"]:
            ess[key] = np.array([float(r["ess"]) for r in sub])
    return EnsembleBlock(theta, phi, lower, upper, failed, ess)


def bayes_intervals_batch(y, n, prior: MisclassPrior, chain: ChainSettings, alpha, gen):
    """Reweighted equal-tailed intervals for beta, one per row of ``y``; plus ESS."""
    r0, r1, _, _ = _gibbs_batch(y, n, (prior.a_n, prior.b_n), (prior.a_p, prior.b_p), chain,
                                gen, keep_sn_sp=False)
    w = normalize_log_weights(importance_log_weights(r0, r1, prior))
    beta = logit(r1) - logit(r0)
    q = weighted_quantile(beta, w, [alpha / 2, 1 - alpha / 2])
    return q[:, 0], q[:, 1], effective_sample_size(w)


def simulate_case_control(pgd: MisclassPrior, n0, n1, size, gen):
    theta = pgd.sample(gen, size)
    r0, r1, sn, sp = theta.T
    y0 = gen.binomial(n0, apparent_prevalence(r0, sn, sp))
    y1 = gen.binomial(n1, apparent_prevalence(r1, sn, sp))
    return theta, np.column_stack([y0, y1])


def _table5_block(rng, size, config: Table5Config, bayes_only=False):
    gen = as_generator(rng)
    theta, y = simulate_case_control(config.pgd, config.n0, config.n1, size, gen)
    n = np.tile([config.n0, config.n1], (size, 1))
    phi = logit(theta[:, 1]) - logit(theta[:, 0])
    lower, upper, failed, ess = {}, {}, {}, {}
    none_failed = np.zeros(size, bool)
    if not bayes_only:
        lower["i"], upper["i"] = _naive_logor(y[:, 0], y[:, 1], config.n0, config.n1, config.alpha)
        failed["i"] = none_failed
        lower["ii"], upper["ii"], failed["ii"] = _known_misclass(
            y[:, 0], y[:, 1], config.n0, config.n1, config.known_sn, config.known_sp, config.alpha)
    priors = config.prior_list()[:1] if bayes_only else config.prior_list()
    for prior in priors:
        lo, hi, e = bayes_intervals_batch(y, n, prior, config.chain, config.alpha, gen)
        lower[prior.label], upper[prior.label], failed[prior.label] = lo, hi, none_failed
        ess[prior.label] = e
    return EnsembleBlock(theta, phi, lower, upper, failed, ess)


@dataclass
class Table5Result:
    reports: dict[str, CoverageReport]
    ensembles: EnsembleBlock = field(repr=False)
    low_ess: dict[str, int] = field(default_factory=dict)


def run_table5(config: Table5Config, seed: int = 0, workers: int = 1,
               block_size: int = 250) -> Table5Result:
    parts = run_blocks(_table5_block, config.n_ens, block_size, seed, "table5", workers,
                       config=config)
    ens = EnsembleBlock.concat(parts)
    labels = ["i", "ii"] + [p.label for p in config.prior_list()]
    reports = {k: ens.tally(k).report(k) for k in labels}
    low = {k: int(np.count_nonzero(v < config.ess_floor)) for k, v in ens.ess.items()}
    return Table5Result(reports, ens, low)


def table6_points(prior: MisclassPrior | None = None):
    """(SN*, SP*) values at the 2.5/25/50/75/97.5% prior quantiles."""
    prior = prior or MisclassPrior()
    probs = [0.025, 0.25, 0.5, 0.75, 0.975]
    return (stats.beta.ppf(probs, prior.a_n, prior.b_n),
            stats.beta.ppf(probs, prior.a_p, prior.b_p))


def near_frequentist_grid(ens: EnsembleBlock, estimator: str, r_star=(0.10, 0.15),
                          alpha_frac: float = 0.0075, sn_values=None, sp_values=None,
                          scale=None) -> list[dict]:
    """Coverage of ``estimator`` among the ensembles nearest each (r*, SN*, SP*)."""
    if sn_values is None or sp_values is None:
        sn_default, sp_default = table6_points()
        sn_values = sn_default if sn_values is None else sn_values
        sp_values = sp_default if sp_values is None else sp_values
    rows = []
    covered = (ens.lower[estimator] <= ens.phi) & (ens.phi <= ens.upper[estimator])
    for sn in sn_values:
        for sp in sp_values:
            star = np.array([r_star[0], r_star[1], sn, sp])
            idx = nearest_indices(ens.theta, star, alpha_frac, scale)
            idx = idx[~ens.failed[estimator][idx]]
            cov = float(covered[idx].mean())
            rows.append({"sn": float(sn), "sp": float(sp), "n_used": int(idx.size),
                         "coverage": cov, "se": math.sqrt(cov * (1 - cov) / idx.size)})
    return rows


def run_table6(config: Table5Config, alpha_frac: float = 0.0075, seed: int = 0,
               workers: int = 1, block_size: int = 500, r_star=(0.10, 0.15)):
    """Near-frequentist coverage of the PGD-matching interval on the SN*/SP* grid."""
    parts = run_blocks(_table5_block, config.n_ens, block_size, seed, "table6", workers,
                       config=config, bayes_only=True)
    ens = EnsembleBlock.concat(parts)
    label = config.prior_list()[0].label
    return near_frequentist_grid(ens, label, r_star, alpha_frac), ens


def run_tables56(config: Table5Config, alpha_frac: float = 0.01, seed: int = 0,
                 workers: int = 1):
    """Table 5 reports plus the near-frequentist grid computed from the same ensembles."""
    res = run_table5(config, seed, workers)
    label = config.prior_list()[0].label
    return res, near_frequentist_grid(res.ensembles, label, alpha_frac=alpha_frac)
