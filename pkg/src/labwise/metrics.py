"""Labwise coverage, interval length and discovery-rate bookkeeping.

Experiments accumulate :class:`CoverageTally` objects (integer counts plus a
length sum) which merge with ``+``; :class:`CoverageReport` is the derived,
read-only summary.  Record-level helpers (:class:`EnsembleRecord`,
:func:`aggregate`) exist for small studies and tests; the experiment modules
use the columnar :func:`tally_arrays` path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"interval lower {self.lower} exceeds upper {self.upper}")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def degenerate(self) -> bool:
        return self.lower == self.upper

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper

    def __iter__(self):
        yield self.lower
        yield self.upper


@dataclass(frozen=True)
class MinimalEffectRule:
    """Effects with |phi| <= half_width count as minimal (half_width = 2*eps)."""

    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "MinimalEffectRule":
        return cls(2 * epsilon)


@dataclass
class EnsembleRecord:
    phi: float
    theta: np.ndarray
    interval: Interval | None
    estimator_id: str = ""
    failed: bool = False

    def __post_init__(self):
        if self.failed and self.interval is not None:
            raise ValueError("failed record cannot carry an interval")
        if not self.failed and self.interval is None:
            raise ValueError("non-failed record needs an interval")
        if not math.isfinite(self.phi):
            raise ValueError("phi must be finite")
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))


class Discovery(Enum):
    DISCOVERY_TRUE = "discovery_true"
    DISCOVERY_FALSE = "discovery_false"
    NONDISCOVERY_TRUE = "nondiscovery_true"
    NONDISCOVERY_FALSE = "nondiscovery_false"


def _is_discovery(lower, upper, h):
    # closed minimal range [-h, h]; a discovery must miss it entirely
    return (lower > h) | (upper < -h)


def classify_discovery(rec: EnsembleRecord, rule: MinimalEffectRule) -> Discovery:
    if rec.failed:
        raise ValueError("cannot classify a failed record")
    h = rule.half_width
    minimal = abs(rec.phi) <= h
    if _is_discovery(rec.interval.lower, rec.interval.upper, h):
        return Discovery.DISCOVERY_FALSE if minimal else Discovery.DISCOVERY_TRUE
    return Discovery.NONDISCOVERY_TRUE if minimal else Discovery.NONDISCOVERY_FALSE


@dataclass
class CoverageTally:
    """Mergeable sufficient counts for a :class:`CoverageReport`."""

    n_total: int = 0
    n_failed: int = 0
    n_covered: int = 0
    sum_length: float = 0.0
    n_discoveries: int = 0
    n_false_discoveries: int = 0
    n_false_nondiscoveries: int = 0
    n_degenerate: int = 0

    def __add__(self, other: "CoverageTally") -> "CoverageTally":
        return CoverageTally(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def n_used(self) -> int:
        return self.n_total - self.n_failed

    def report(self, estimator_id: str = "") -> "CoverageReport":
        n = self.n_used
        if n == 0:
            raise ValueError("all records failed; coverage undefined")
        cov = self.n_covered / n
        tdr = self.n_discoveries / n
        nondisc = n - self.n_discoveries
        return CoverageReport(
            estimator_id=estimator_id,
            n_total=self.n_total,
            n_failed=self.n_failed,
            coverage=cov,
            avg_length=self.sum_length / n,
            tdr=tdr,
            fdr=self.n_false_discoveries / self.n_discoveries if self.n_discoveries else None,
            fnr=self.n_false_nondiscoveries / nondisc if nondisc else None,
            se_coverage=math.sqrt(cov * (1 - cov) / n),
            se_tdr=math.sqrt(tdr * (1 - tdr) / n),
            tally=self,
        )


CSV_COLUMNS = ("estimator_id", "n_total", "n_failed", "coverage", "se_coverage",
               "avg_length", "tdr", "fdr", "fnr")


@dataclass(frozen=True)
class CoverageReport:
    estimator_id: str
    n_total: int
    n_failed: int
    coverage: float
    avg_length: float
    tdr: float
    fdr: float | None
    fnr: float | None
    se_coverage: float
    se_tdr: float
    tally: CoverageTally = field(repr=False, compare=False, default=None)

    @property
    def n_used(self) -> int:
        return self.n_total - self.n_failed

    @property
    def failure_rate(self) -> float:
        return self.n_failed / self.n_total

    def csv_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def tally_arrays(phi, lower, upper, failed=None, rule: MinimalEffectRule | None = None) -> CoverageTally:
    """Columnar tally; ``lower``/``upper`` entries of failed records are ignored."""
    phi = np.asarray(phi, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    failed = np.zeros(phi.shape, bool) if failed is None else np.asarray(failed, bool)
    ok = ~failed
    phi, lo, hi = phi[ok], lower[ok], upper[ok]
    if np.any(lo > hi):
        raise ValueError("interval with lower > upper")
    t = CoverageTally(
        n_total=int(failed.size),
        n_failed=int(failed.sum()),
        n_covered=int(np.count_nonzero((lo <= phi) & (phi <= hi))),
        # exactly rounded, so the tally does not depend on record order
        sum_length=math.fsum((hi - lo).tolist()),
        n_degenerate=int(np.count_nonzero(lo == hi)),
    )
    if rule is not None:
        h = rule.half_width
        disc = _is_discovery(lo, hi, h)
        minimal = np.abs(phi) <= h
        t.n_discoveries = int(disc.sum())
        t.n_false_discoveries = int(np.count_nonzero(disc & minimal))
        t.n_false_nondiscoveries = int(np.count_nonzero(~disc & ~minimal))
    return t


def aggregate(records: Sequence[EnsembleRecord], rule: MinimalEffectRule | None = None,
              estimator_id: str | None = None) -> CoverageReport:
    if not records:
        raise ValueError("aggregate needs at least one record")
    failed = np.array([r.failed for r in records])
    phi = np.array([r.phi for r in records])
    lower = np.array([np.nan if r.failed else r.interval.lower for r in records])
    upper = np.array([np.nan if r.failed else r.interval.upper for r in records])
    tally = tally_arrays(phi, lower, upper, failed, rule)
    if estimator_id is None:
        estimator_id = records[0].estimator_id
    return tally.report(estimator_id)


def nearest_indices(theta: np.ndarray, theta_star, alpha_frac: float, scale=None) -> np.ndarray:
    """Indices of the ceil(alpha_frac * m) rows of ``theta`` closest to ``theta_star``.

    Distance is Euclidean, optionally after dividing each coordinate by
    ``scale``.  Ties are broken by index so the selection is deterministic.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    m = theta.shape[0]
    if not 0 < alpha_frac <= 1:
        raise ValueError("alpha_frac must lie in (0, 1]")
    k = math.ceil(alpha_frac * m - 1e-9)
    if k < 1:
        raise ValueError("too few records for the requested fraction")
    d = theta - np.asarray(theta_star, dtype=float)
    if scale is not None:
        d = d / np.asarray(scale, dtype=float)
    dist = np.einsum("ij,ij->i", d, d)
    if k == m:
        return np.arange(m)
    return np.sort(np.lexsort((np.arange(m), dist))[:k])


def near_frequentist_select(records: Sequence[EnsembleRecord], theta_star, alpha_frac: float,
                            scale=None) -> list[EnsembleRecord]:
    if not records:
        raise ValueError("no records to select from")
    theta = np.stack([r.theta for r in records])
    return [records[i] for i in nearest_indices(theta, theta_star, alpha_frac, scale)]


def merge_tallies(tallies: Iterable[CoverageTally]) -> CoverageTally:
    total = CoverageTally()
    for t in tallies:
        total = total + t
    return total
