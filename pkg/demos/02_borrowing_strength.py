"""Learning the prior from previous studies.

With a normal hierarchy the coverage of the Bayesian interval is available
exactly, as a one-dimensional integral.  A badly centred hyperprior
under-covers when there is no history, but m previous studies pull coverage
back to nominal.  The second half runs the mixture version, where the
hyperparameters (p, k) are learned by Metropolis sampling.
"""

from labwise.hierarchical import (
    HyperPriorSpec,
    NormalHierSpec,
    interval_length,
    labwise_coverage_exact,
    run_table2,
)
from labwise.mixture import MixturePGDSpec, NormalDataModel

print(" m   " + "  ".join(f"delta={d}" for d in (0, 1, 2, 3)) + "   length")
for m in (0, 1, 2, 5, 10, 25, 100):
    row = [labwise_coverage_exact(NormalHierSpec(delta=d, lambda0=3.0, m=m)) for d in (0, 1, 2, 3)]
    print(f"{m:3d}  " + "  ".join(f"{c:8.4f}" for c in row)
          + f"   {interval_length(NormalHierSpec(m=m)):.3f}")

# the mixture hierarchy, with a short chain to keep the demo quick
hyper = HyperPriorSpec(chain_length=5_000, burn_in=500, thin=5)
for m in (0, 20):
    res = run_table2(hyper, MixturePGDSpec(), NormalDataModel(0.025), m, n_meta=200, seed=2)
    print(f"\nm={m}: coverage {res.report.coverage:.3f}, mean length {res.report.avg_length:.3f}, "
          f"median acceptance {sorted(res.acceptance)[len(res.acceptance) // 2]:.2f}")
