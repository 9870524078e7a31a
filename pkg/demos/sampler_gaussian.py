"""Ancestral sampling checked against a target with a closed-form score.

If every kernel entry is N(mu, var), the optimal noise predictor is known in
closed form.  Running the reverse chain with it must reproduce the target
mean and variance, which isolates the sampler from any learned network.
"""

import numpy as np

from kerneldiff import diffusion

mu, var, n = 0.5, 1.0, 2000
for variance in diffusion.REVERSE_VARIANCES:
    sched = diffusion.desk_schedule(reverse_variance=variance)
    rng = np.random.default_rng(0)
    k = rng.standard_normal(n)
    for t in range(sched.T, 0, -1):
        ab = sched.abar(t)
        eps = np.sqrt(1 - ab) * (k - np.sqrt(ab) * mu) / (ab * var + 1 - ab)
        k = diffusion.reverse_step(k, eps, t, rng.standard_normal(n), sched)
    print("%-10s mean %.3f (target %.1f, SE %.3f)  var %.3f (target %.1f)" % (variance, k.mean(), mu, np.sqrt(var / n), k.var(), var))
