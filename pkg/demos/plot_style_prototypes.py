"""
Style prototypes across epochs
==============================

Column instances from three noisy style patterns are clustered each "epoch".
The bank blends each epoch's centers into a running average whose step size
depends on how much validation rSum improved.
"""

import numpy as np

from pico import PrototypeBank, epoch_update, feedback_weight

rng = np.random.default_rng(0)
patterns = rng.standard_normal((3, 8))


def epoch_instances(n=300):
    labels = rng.integers(0, 3, n)
    return patterns[labels] + 0.4 * rng.standard_normal((n, 8))


###############################################################################
# A made-up rSum curve: fast gains, then a dip.
rsums = [210.0, 260.0, 290.0, 300.0, 296.0]
bank = PrototypeBank("image", j0=1, J=len(rsums))
for j, r in enumerate(rsums, start=1):
    x = epoch_instances()
    bank = epoch_update(bank, x, np.ones(len(x)), 3, rng)
    bank.record_rsum(r)
    print(f"epoch {j}: m={bank.m} blend weight={bank.weight_history[-1]:.4f} "
          f"k-means energy={bank.last_cluster.energy:.1f} ({bank.last_cluster.iterations_run} sweeps)")

###############################################################################
# Next epoch's weight, and a check that the running average is the plain
# weighted mean of everything seen so far.
print("next weight", round(feedback_weight(bank.rsum_history), 5))
print("max |mu - unrolled|", np.abs(bank.prototypes - bank.unrolled()).max())

###############################################################################
# Warm starts keep cluster identities: each prototype sits nearest to the same
# planted pattern it started from.
d = ((bank.prototypes[:, None, :] - patterns[None]) ** 2).sum(-1)
print("prototype -> nearest pattern", d.argmin(axis=1))
