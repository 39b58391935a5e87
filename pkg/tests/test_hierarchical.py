import numpy as np
import pytest
from scipy import stats

from labwise.distributions import normal_cdf, normal_quantile
from labwise.hierarchical import (
    HyperPriorSpec,
    NormalHierSpec,
    _posterior_coefficients,
    _reflect,
    figure1_grid,
    interval_length,
    labwise_coverage_exact,
    posterior_theta_given_all,
    posterior_variance,
    run_table2,
    sample_pk_posterior,
    sample_theta_given_pk,
)
from labwise.mixture import MixturePGDSpec, NormalDataModel

Z = normal_quantile(0.975)


def mvn_conditional(D, Dstar, spec):
    """theta | (D, D*) by brute-force Gaussian conditioning on the joint covariance."""
    s2, t2, w2, m = spec.sigma**2, spec.tau**2, spec.omega**2, spec.m
    # observed vector (D, D*_1..D*_m); every pair shares the lambda variance w2
    cov_obs = np.full((m + 1, m + 1), w2) + np.eye(m + 1) * (t2 + s2)
    cross = np.full(m + 1, w2)
    cross[0] += t2
    obs = np.concatenate([[D], Dstar])
    weights = np.linalg.solve(cov_obs, cross)
    mean = spec.delta + weights @ (obs - spec.delta)
    var = (w2 + t2) - weights @ cross
    return mean, var


def test_closed_form_matches_mvn_conditioning():
    gen = np.random.default_rng(2024)
    for _ in range(1000):
        spec = NormalHierSpec(sigma=gen.uniform(0.2, 3), tau=gen.uniform(0.2, 3),
                              omega=gen.uniform(0.2, 3), delta=gen.uniform(-3, 3),
                              lambda0=0.0, m=int(gen.integers(0, 25)))
        D = gen.normal(0, 2)
        Dstar = gen.normal(0, 2, spec.m)
        mean, var = posterior_theta_given_all(D, Dstar, spec)
        o_mean, o_var = mvn_conditional(D, Dstar, spec)
        assert var == pytest.approx(o_var, rel=1e-12, abs=1e-12)
        assert mean == pytest.approx(o_mean, rel=1e-12, abs=1e-12)


def test_variance_free_of_data_and_delta():
    gen = np.random.default_rng(7)
    spec = NormalHierSpec(sigma=0.7, tau=1.3, omega=0.4, delta=1.0, m=12)
    _, v1 = posterior_theta_given_all(gen.normal(), gen.normal(size=12), spec)
    _, v2 = posterior_theta_given_all(gen.normal() * 5, gen.normal(size=12) * 5, spec)
    _, v3 = posterior_theta_given_all(0.0, np.zeros(12), NormalHierSpec(0.7, 1.3, 0.4, -2.5, m=12))
    assert v1 == v2 == v3


def test_variance_examples():
    assert posterior_variance(1, 1, 1, 0) == pytest.approx(2 / 3, abs=1e-15)
    assert posterior_variance(1, 1, 1, 10**6) == pytest.approx(0.5, abs=1e-5)
    assert posterior_variance(1, 1, 1e-6, 0) == pytest.approx(0.5, abs=1e-9)
    assert posterior_variance(1, 1, 1, 10**6) > 0.5


def test_length_limits():
    assert interval_length(NormalHierSpec(m=0)) == pytest.approx(2 * Z * np.sqrt(2 / 3), abs=1e-12)
    assert interval_length(NormalHierSpec(m=10**7)) == pytest.approx(2 * Z * np.sqrt(0.5), abs=1e-6)


def closed_form_coverage(spec, alpha=0.05):
    """theta - E(theta | data) is exactly normal under the PGD; no integration needed."""
    c0, c1, c2, V = _posterior_coefficients(spec)
    t2, s2 = spec.tau**2, spec.sigma**2
    mu = (1 - c1) * spec.lambda0 - c0 - c2 * spec.m * spec.lambda0
    sd = np.sqrt((1 - c1) ** 2 * t2 + c1**2 * s2 + c2**2 * spec.m * (t2 + s2))
    h = normal_quantile(1 - alpha / 2) * np.sqrt(V)
    return normal_cdf((h - mu) / sd) - normal_cdf((-h - mu) / sd)


@pytest.mark.parametrize("m", [0, 1, 5, 30, 100, 1000])
@pytest.mark.parametrize("delta", [0.0, 1.5, 3.0])
def test_quadrature_matches_closed_form(m, delta):
    spec = NormalHierSpec(delta=delta, m=m)
    assert labwise_coverage_exact(spec) == pytest.approx(closed_form_coverage(spec), abs=1e-9)


def test_quadrature_matches_simulation():
    spec = NormalHierSpec(delta=1.0, m=3)
    gen = np.random.default_rng(0)
    n = 200_000
    theta = gen.normal(spec.lambda0, spec.tau, (n, spec.m + 1))
    D = theta + gen.normal(0, spec.sigma, theta.shape)
    c0, c1, c2, V = _posterior_coefficients(spec)
    mean = c0 + c1 * D[:, 0] + c2 * D[:, 1:].sum(axis=1)
    cov = np.mean(np.abs(theta[:, 0] - mean) <= Z * np.sqrt(V))
    assert cov == pytest.approx(labwise_coverage_exact(spec), abs=4 * np.sqrt(0.25 / n))


def test_figure1_shape():
    rows = figure1_grid(m_values=[0, 100])
    cov = {(r["m"], r["delta"]): r["coverage"] for r in rows}
    assert cov[(0, 0.0)] < 0.80
    assert cov[(0, 3.0)] > 0.95
    for d in (0.0, 1.0, 2.0, 3.0):
        assert abs(cov[(100, d)] - 0.95) < 0.005
    assert [cov[(0, d)] for d in (0.0, 1.0, 2.0, 3.0)] == sorted(cov[(0, d)] for d in (0.0, 1.0, 2.0, 3.0))


def test_coverage_converges_for_large_m():
    for d in (0.0, 3.0):
        assert abs(labwise_coverage_exact(NormalHierSpec(delta=d, m=10_000)) - 0.95) < 1e-3


def test_degenerate_hyperprior_at_truth_is_nominal():
    spec = NormalHierSpec(omega=1e-7, delta=3.0, lambda0=3.0, m=5)
    assert labwise_coverage_exact(spec) == pytest.approx(0.95, abs=1e-6)


def test_reflection_stays_in_bounds():
    x = np.array([-0.3, 0.2, 1.4, 2.7, -1.9])
    y = _reflect(x, 0.0, 1.0)
    assert np.all((y >= 0) & (y <= 1))
    assert np.allclose(_reflect(np.array([0.25]), 0.0, 1.0), 0.25)
    assert np.allclose(_reflect(np.array([1.2, -0.2]), 0.0, 1.0), [0.8, 0.2])


MODEL = NormalDataModel(0.025)


def grid_posterior_means(D, hyper, model):
    p = np.linspace(0.0005, 0.9995, 1000)
    k = np.linspace(hyper.k_range[0] + 0.008, hyper.k_range[1] - 0.008, 1000)
    P, K = np.meshgrid(p, k, indexing="ij")
    eps2, s2 = hyper.epsilon**2, model.sigma2
    ll = np.zeros_like(P)
    for d in D:
        d1 = stats.norm.pdf(d, 0, np.sqrt(eps2 + s2))
        d2 = stats.norm.pdf(d, 0, np.sqrt(K**2 * eps2 + s2))
        ll += np.log(P * d1 + (1 - P) * d2)
    w = np.exp(ll - ll.max())
    w /= w.sum()
    return (w * P).sum(), (w * K).sum()


def test_metropolis_matches_grid_posterior():
    gen = np.random.default_rng(5)
    theta = np.where(gen.random(30) < 0.85, 0.05, 0.4) * gen.standard_normal(30)
    D = theta + gen.normal(0, MODEL.sigma, 30)
    hyper = HyperPriorSpec(chain_length=40_000, burn_in=2_000, thin=5)
    p, k, acc = sample_pk_posterior(np.tile(D, (4, 1)), hyper, MODEL, np.random.default_rng(1))
    gp, gk = grid_posterior_means(D, hyper, MODEL)
    assert p.mean() == pytest.approx(gp, abs=0.02)
    assert k.mean() == pytest.approx(gk, abs=0.4)
    assert np.all((p >= 0) & (p <= 1) & (k >= 4) & (k <= 20))
    assert np.all((acc > 0.05) & (acc < 0.95))


def test_p_posterior_concentrates_with_many_studies():
    gen = np.random.default_rng(8)
    m = 10_000
    theta = np.where(gen.random(m + 1) < 0.85, 0.05, 0.4) * gen.standard_normal(m + 1)
    D = theta + gen.normal(0, MODEL.sigma, m + 1)
    hyper = HyperPriorSpec(chain_length=3_000, burn_in=1_000, thin=5, proposal_sd=(0.02, 0.3))
    p, _, _ = sample_pk_posterior(D, hyper, MODEL, np.random.default_rng(2))
    assert abs(np.median(p) - 0.85) < 0.05


def test_theta_given_pk_single_component():
    draws = sample_theta_given_pk(0.3, np.ones(200_000), np.full(200_000, 8.0), 0.05, MODEL,
                                  np.random.default_rng(3))
    shrink = 0.0025 / (0.0025 + 0.025)
    assert draws.mean() == pytest.approx(0.3 * shrink, abs=3e-4)
    assert draws.var() == pytest.approx(0.0025 * 0.025 / 0.0275, rel=0.02)


def test_table2_small_run_worker_invariant():
    hyper = HyperPriorSpec(chain_length=600, burn_in=100, thin=5)
    args = (hyper, MixturePGDSpec(), MODEL, 2, 8)
    a = run_table2(*args, seed=1, workers=1, block_size=4)
    b = run_table2(*args, seed=1, workers=2, block_size=4)
    assert a.report.csv_row() == b.report.csv_row()
    assert np.array_equal(a.acceptance, b.acceptance)
