"""Importance-weighted posterior samples and weighted quantiles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .metrics import Interval

DEFAULT_ESS_FLOOR = 200.0


def normalize_log_weights(logw, axis=-1):
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - logw.max(axis=axis, keepdims=True))
    return w / w.sum(axis=axis, keepdims=True)


def effective_sample_size(weights, axis=-1):
    """(sum w)^2 / sum w^2."""
    w = np.asarray(weights, dtype=float)
    return w.sum(axis=axis) ** 2 / (w * w).sum(axis=axis)


def weighted_quantile(values, weights, probs):
    """Inverse-CDF quantiles: the smallest value whose cumulative weight reaches ``p``.

    ``values`` and ``weights`` may carry leading batch axes; the last axis
    holds the sample.  Output has shape ``batch + (len(probs),)`` (or just
    ``batch`` for a scalar ``probs``).
    """
    values = np.asarray(values, dtype=float)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), values.shape)
    probs_arr = np.atleast_1d(np.asarray(probs, dtype=float))
    order = np.argsort(values, axis=-1, kind="stable")
    v = np.take_along_axis(values, order, axis=-1)
    cw = np.cumsum(np.take_along_axis(weights, order, axis=-1), axis=-1)
    total = cw[..., -1:]
    # relative slack absorbs rounding in the running sum
    idx = np.stack([np.argmax(cw >= p * total * (1 - 1e-12), axis=-1) for p in probs_arr],
                   axis=-1)
    out = np.take_along_axis(v, idx, axis=-1)
    return out[..., 0] if np.ndim(probs) == 0 else out


@dataclass
class WeightedSample:
    values: np.ndarray
    weights: np.ndarray
    ess_floor: float = DEFAULT_ESS_FLOOR
    ess: float = field(init=False)
    low_ess: bool = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.values.shape or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative, non-degenerate and match values")
        self.weights = w / w.sum()
        self.ess = float(effective_sample_size(self.weights))
        self.low_ess = self.ess < self.ess_floor
        if self.low_ess:
            warnings.warn(f"effective sample size {self.ess:.1f} below floor {self.ess_floor:g}",
                          RuntimeWarning, stacklevel=2)

    @classmethod
    def from_log_weights(cls, values, logw, ess_floor: float = DEFAULT_ESS_FLOOR):
        return cls(values, normalize_log_weights(logw), ess_floor)

    @classmethod
    def unweighted(cls, values, ess_floor: float = DEFAULT_ESS_FLOOR):
        values = np.asarray(values, dtype=float)
        return cls(values, np.full(values.shape, 1.0 / values.size), ess_floor)

    def map(self, func) -> "WeightedSample":
        """Same weights, transformed values (ESS warning not repeated)."""
        out = object.__new__(WeightedSample)
        out.values = np.asarray(func(self.values), dtype=float)
        out.weights, out.ess_floor, out.ess, out.low_ess = self.weights, self.ess_floor, self.ess, self.low_ess
        return out

    def mean(self) -> float:
        return float(np.sum(self.weights * self.values))

    def quantile(self, probs):
        return weighted_quantile(self.values, self.weights, probs)

    def equal_tailed(self, alpha: float) -> Interval:
        lo, hi = self.quantile([alpha / 2, 1 - alpha / 2])
        return Interval(float(lo), float(hi))
