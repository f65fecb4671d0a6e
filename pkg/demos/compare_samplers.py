"""Element-wise MH and scale-mixture Gibbs target the same posterior.

Both samplers run on one dense-precision data set with ``k2 = 2``.  The
scale-mixture sampler updates whole blocks, so it needs far fewer sweeps
for the same precision.  Run with ``python3 demos/compare_samplers.py``.
"""

import time

import numpy as np

from gmcb.inference import batch_means_se, multivariate_ess
from gmcb.model import method_of_moments_gamma_prior, preprocess
from gmcb.sampler_mh import run_gmcb_mh
from gmcb.sampler_smn import run_gmcb_smn
from gmcb.scenarios import ScenarioSpec, generate, scenario_hyperparams

raw, _ = generate(ScenarioSpec(1), np.random.default_rng(3))
data, _ = preprocess(raw.Y, raw.X)
hp = scenario_hyperparams(1, "smn").replace(gamma_prior=method_of_moments_gamma_prior(data))

runs = {}
for name, run, iters in (("MH", run_gmcb_mh, 40_000), ("SMN", run_gmcb_smn, 8_000)):
    t0 = time.perf_counter()
    chain = run(data, hp, None, iters, iters // 10, seed=5)
    secs = time.perf_counter() - t0
    flat = chain.flat_summary()
    runs[name] = flat
    ess = multivariate_ess(flat).ess
    print(f"{name:>4}: {iters} sweeps in {secs:.1f} s, mESS {ess:.0f} ({ess / secs:.0f} per second)")

a, b = runs["MH"], runs["SMN"]
se = np.sqrt(batch_means_se(a, a.shape[0] // 50) ** 2 + batch_means_se(b, b.shape[0] // 50) ** 2)
z = (a.mean(axis=0) - b.mean(axis=0)) / se
print(f"\nposterior means of {z.size} B and Omega entries")
print(f"  largest |difference| / combined SE: {np.abs(z).max():.2f}")
print(f"  share within 2 SE: {np.mean(np.abs(z) < 2):.0%}")
