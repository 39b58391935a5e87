"""Labwise calibration of interval estimators under identified and nonidentified models.

Modules:

- ``distributions``: seeded streams, normal and mixture-of-normals helpers, samplers
- ``metrics``: intervals, coverage tallies, discovery rates, near-frequentist selection
- ``mixture``: normal mean with a two-scale mixture PGD
- ``hierarchical``: normal-normal hierarchy and the mixture hyperprior MCMC
- ``nonresponse``: prevalence surveys with nonignorable nonresponse
- ``misclass``: case-control studies with exposure misclassification
- ``silica``: Poisson bias model with unmeasured confounding
- ``harness``: configs, result tables, reference comparison
"""

from .distributions import MixtureNormal, RngStream, mixture_quantile, normal_quantile
from .metrics import CoverageReport, CoverageTally, Interval, MinimalEffectRule, aggregate

__all__ = [
    "MixtureNormal", "RngStream", "mixture_quantile", "normal_quantile",
    "CoverageReport", "CoverageTally", "Interval", "MinimalEffectRule", "aggregate",
]
__version__ = "0.1.0"
