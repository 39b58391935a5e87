"""Sampling, density, CDF and quantile primitives.

Every random draw in the package goes through an :class:`RngStream`, a
counter-based Philox generator keyed by ``(seed, stream_id)``.  Replication
blocks derive their ``stream_id`` from :func:`stream_key`, so results do not
depend on the order (or process) in which blocks are executed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

_MASK64 = (1 << 64) - 1


def stream_key(*parts) -> int:
    """Stable 64-bit stream id for a tuple of labels (e.g. experiment, block)."""
    text = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass
class RngStream:
    """Independent, reproducible random stream.

    Philox is counter based: the 128-bit key is ``seed | stream_id << 64`` so
    distinct stream ids give non-overlapping, independent sequences.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        key = self.seed | (self.stream_id << 64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, *parts) -> "RngStream":
        """Child stream with the same seed and an id derived from ``parts``."""
        return RngStream(self.seed, stream_key(self.stream_id, *parts))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


# --------------------------------------------------------------------------
# normal quantile

# Acklam's rational approximation (relative error ~1e-9), then a Halley step.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(p: np.ndarray) -> np.ndarray:
    x = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)

    q = np.sqrt(-2 * np.log(p[lo]))
    x[lo] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
        ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    q = np.sqrt(-2 * np.log1p(-p[hi]))
    x[hi] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / \
        ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1)
    q = p[mid] - 0.5
    r = q * q
    x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / \
        (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1)
    return x


def normal_quantile(prob):
    """Standard normal quantile, accurate to ~1e-15 relative on (0, 1)."""
    p = np.asarray(prob, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("normal_quantile requires 0 < prob < 1")
    flat = p.reshape(-1)
    x = _acklam(flat)
    # Halley refinement; the residual is taken on the smaller tail to avoid
    # cancellation in 1 - p.
    upper = flat > 0.5
    resid = np.where(upper, special.ndtr(-x) - (1 - flat), special.ndtr(x) - flat)
    resid = np.where(upper, -resid, resid)
    u = resid * np.sqrt(2 * np.pi) * np.exp(x * x / 2)
    x = x - u / (1 + x * u / 2)
    x = x.reshape(p.shape)
    return float(x) if x.ndim == 0 else x


def normal_cdf(x):
    return special.ndtr(x)


def normal_pdf(x, mean=0.0, var=1.0):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def normal_logpdf(x, mean=0.0, var=1.0):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


# --------------------------------------------------------------------------
# finite normal mixtures


@dataclass(frozen=True)
class MixtureNormal:
    """Finite mixture of normals.

    The component axis is the last one; leading axes index a batch of
    independent mixtures (e.g. one posterior per simulated data set).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        w, m, v = np.broadcast_arrays(np.atleast_1d(w), np.atleast_1d(m), np.atleast_1d(v))
        if np.any(v <= 0):
            raise ValueError("mixture variances must be positive")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=-1) - 1) > 1e-12):
            raise ValueError("mixture weights must be a probability vector")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @classmethod
    def normal(cls, mean: float, var: float) -> "MixtureNormal":
        return cls([1.0], [mean], [var])

    @classmethod
    def two_scale(cls, epsilon: float, p: float, k: float) -> "MixtureNormal":
        """N(0, eps^2) with weight p plus N(0, k^2 eps^2) with weight 1 - p."""
        return cls([p, 1 - p], [0.0, 0.0], [epsilon**2, (k * epsilon) ** 2])

    @property
    def batch_shape(self) -> tuple:
        return self.weights.shape[:-1]

    @property
    def mean(self):
        return (self.weights * self.means).sum(axis=-1)

    @property
    def variance(self):
        second = (self.weights * (self.variances + self.means**2)).sum(axis=-1)
        return second - self.mean**2

    def __getitem__(self, idx) -> "MixtureNormal":
        if not self.batch_shape:
            raise IndexError("unbatched mixture")
        return MixtureNormal(self.weights[idx], self.means[idx], self.variances[idx])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (self.weights * normal_pdf(x, self.means, self.variances)).sum(axis=-1)

    def sample(self, rng, size=None):
        gen = as_generator(rng)
        if self.batch_shape:
            raise ValueError("sample() needs an unbatched mixture")
        comp = gen.choice(len(self.weights), size=size, p=self.weights)
        return gen.normal(self.means[comp], np.sqrt(self.variances[comp]))


def mixture_cdf(mix: MixtureNormal, x):
    """sum_j w_j Phi((x - m_j) / s_j), broadcasting x over the mixture batch."""
    x = np.asarray(x, dtype=float)[..., None]
    z = (x - mix.means) / np.sqrt(mix.variances)
    return (mix.weights * special.ndtr(z)).sum(axis=-1)


def _quantile_bracket(mix: MixtureNormal, prob):
    # Each component CDF is <= prob at the smallest component quantile and
    # >= prob at the largest, so these bound the mixture quantile exactly.
    z = normal_quantile(prob)
    q = mix.means + np.sqrt(mix.variances) * np.asarray(z)[..., None]
    # zero-weight components do not constrain the root
    live = mix.weights > 0
    lo = np.where(live, q, np.inf).min(axis=-1)
    hi = np.where(live, q, -np.inf).max(axis=-1)
    return lo, hi


def mixture_quantile(mix: MixtureNormal, prob, xtol: float = 1e-10, maxiter: int = 200):
    """Inverse of :func:`mixture_cdf`.

    Unbatched mixtures with scalar ``prob`` use Brent's method; batches use a
    vectorised safeguarded Newton iteration on the same exact bracket.
    """
    prob_arr = np.asarray(prob, dtype=float)
    if np.any(~((prob_arr > 0) & (prob_arr < 1))):
        raise ValueError("mixture_quantile requires 0 < prob < 1")
    if not mix.batch_shape and prob_arr.ndim == 0:
        lo, hi = _quantile_bracket(mix, float(prob_arr))
        lo, hi = float(lo), float(hi)
        if hi - lo <= xtol:
            return 0.5 * (lo + hi)
        f = lambda x: float(mixture_cdf(mix, x)) - float(prob_arr)
        assert f(lo) <= 0 <= f(hi), "mixture quantile bracket failed"
        return optimize.brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps,
                               maxiter=maxiter)
    return _mixture_quantile_batch(mix, prob_arr, xtol, maxiter)


def _mixture_quantile_batch(mix, prob, xtol, maxiter):
    lo, hi = _quantile_bracket(mix, prob)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    prob = np.broadcast_to(prob, lo.shape)
    x = 0.5 * (lo + hi)
    for _ in range(maxiter):
        f = mixture_cdf(mix, x) - prob
        lo = np.where(f < 0, x, lo)
        hi = np.where(f > 0, x, hi)
        step = f / np.maximum(mix.pdf(x), 1e-300)
        x_new = x - step
        outside = ~((x_new > lo) & (x_new < hi))
        x_new = np.where(outside, 0.5 * (lo + hi), x_new)
        done = (np.abs(x_new - x) <= xtol) | (hi - lo <= xtol)
        x = x_new
        if np.all(done):
            break
    return x


# --------------------------------------------------------------------------
# samplers


@dataclass(frozen=True)
class DirichletParams:
    concentration: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.concentration, dtype=float)
        if c.ndim != 1 or np.any(c <= 0):
            raise ValueError("Dirichlet concentration must be a positive vector")
        object.__setattr__(self, "concentration", c)

    @classmethod
    def from_mean(cls, total: float, mean) -> "DirichletParams":
        return cls(total * np.asarray(mean, dtype=float))

    def discounted(self, factor: float) -> "DirichletParams":
        """Same mean, concentration divided by ``factor``."""
        return DirichletParams(self.concentration / factor)

    @property
    def mean(self):
        return self.concentration / self.concentration.sum()


def sample_normal(rng, mean=0.0, sd=1.0, size=None):
    if np.any(np.asarray(sd) <= 0):
        raise ValueError("sd must be positive")
    return as_generator(rng).normal(mean, sd, size)


def sample_uniform(rng, low=0.0, high=1.0, size=None):
    if np.any(np.asarray(high) < np.asarray(low)):
        raise ValueError("uniform requires low <= high")
    return as_generator(rng).uniform(low, high, size)


def sample_beta(rng, a, b, size=None):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("beta parameters must be positive")
    return as_generator(rng).beta(a, b, size)


def sample_binomial(rng, n, p, size=None):
    p = np.asarray(p)
    if np.any(np.asarray(n) < 0) or np.any((p < 0) | (p > 1)):
        raise ValueError("invalid binomial parameters")
    return as_generator(rng).binomial(n, p, size)


def sample_poisson(rng, lam, size=None):
    if np.any(np.asarray(lam) < 0):
        raise ValueError("poisson mean must be non-negative")
    return as_generator(rng).poisson(lam, size)


def sample_gamma(rng, shape, rate=1.0, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("gamma parameters must be positive")
    return as_generator(rng).gamma(shape, 1.0 / np.asarray(rate), size)


def sample_dirichlet(rng, params: DirichletParams, size=None):
    """Dirichlet draws via normalised gammas; ``size`` prefixes the output shape."""
    gen = as_generator(rng)
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    g = gen.standard_gamma(params.concentration, size=shape + params.concentration.shape)
    return g / g.sum(axis=-1, keepdims=True)
