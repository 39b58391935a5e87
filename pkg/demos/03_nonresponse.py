"""Prevalence when non-responders may differ from responders.

gamma is the log-odds shift between non-responders and responders and the
data say nothing about it.  We compare three intervals for the population
prevalence.  The naive one ignores nonresponse, the conservative one covers
every gamma in I, and the Bayesian one averages over a uniform prior on I.
"""

import numpy as np

from labwise.nonresponse import (
    GammaRange,
    LogitNormalPGD,
    NonresponseData,
    bayes_interval,
    cfci,
    naive_interval,
    run_tables34,
)

data = NonresponseData(n=500, r=330, y=160)
I = GammaRange(-2, 2)
print("naive       ", naive_interval(data, 0.05))
print("conservative", cfci(data, I, 0.05))
print("Bayes       ", bayes_interval(data, I, 0.05, rng=np.random.default_rng(0)))

# coverage when the true gamma is spread over I, and when it sits at one end
for J in (GammaRange(-2, 2), GammaRange(2, 2)):
    reps = run_tables34(LogitNormalPGD(J), I, n_ens=1_000, n_draws=4_000, seed=3)
    print(f"\ngamma drawn from U{J}")
    for name, r in reps.items():
        print(f"  {name:<6} coverage {r.coverage:.3f}  length {r.avg_length:.3f}")
