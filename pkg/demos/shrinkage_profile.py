"""Tail behaviour of the generalized bridge prior in a normal-means problem.

For one observation ``y ~ N(beta, 1)`` the posterior mean moves ``y`` toward
zero by ``shift(y)``.  Small signals are pulled in hard; large ones are left
almost alone.  Run with ``python3 demos/shrinkage_profile.py``.
"""

import numpy as np

from gmcb.marginal import gbr_marginal, gbr_marginal_shift
from gmcb.model import Hyperparams

hp = Hyperparams(k1=0.5, k2=2.0, lambda_mix=(1.0, 1.0, 1.0, 1.0))

print(f"{'y':>6}{'m(y)':>12}{'shift':>10}{'E(beta|y)':>12}")
for y in (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0):
    s = gbr_marginal_shift(y, hp)
    print(f"{y:>6.1f}{gbr_marginal(y, hp):>12.3e}{s:>10.4f}{y + s:>12.4f}")

# The exponent is averaged over [k1, k2].  Large exponents act like ridge
# on moderate signals, small ones keep heavy tails.
print("\nshift at y = 3 for different exponent ranges")
for k1, k2 in ((0.5, 2.0), (1.0, 2.0), (1.0, 4.0)):
    h = hp.replace(k1=k1, k2=k2)
    print(f"  alpha in [{k1}, {k2}]: {gbr_marginal_shift(3.0, h):+.4f}")

ys = np.linspace(-50, 50, 201)
worst = max(abs(gbr_marginal_shift(y, hp)) for y in ys)
print(f"\nlargest |shift| on [-50, 50]: {worst:.3f}")
