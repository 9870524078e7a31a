"""1D pulse deblurring: alternating minimisation versus kernel-first estimation.

A box pulse of amplitude a and width w is blurred by a Gaussian of width
sigma.  Alternating coordinate descent over (a, w, sigma) often stops at a
wrong sigma, while maximising the marginal over sigma (image integrated out)
lands near the truth from a single deterministic run.
"""

import numpy as np

from kerneldiff import toy1d

prob = toy1d.DEFAULT_PROBLEM
y = toy1d.toy_forward(prob)
print("truth (a, w, sigma):", prob.truth)

sigmas = toy1d.default_sigma_grid()
grid = toy1d.marginal_sigma_grid(y, sigmas, prob.noise_std)
laplace = toy1d.marginal_sigma_laplace(y, sigmas, prob.noise_std)
print("grid marginal argmax:    %.2f" % toy1d.sigma_argmax(sigmas, grid))
print("laplace marginal argmax: %.2f  (%d local maximum)" % (toy1d.sigma_argmax(sigmas, laplace), toy1d.count_local_maxima(laplace)))

outcomes = toy1d.multistart_alt_min(y, n_starts=100, seed=0, prob=prob)
alt_sigmas = np.array([res.sigma for _, res in outcomes])
print("alt-min over 100 random starts: failure rate %.2f" % toy1d.failure_fraction(alt_sigmas, prob.sigma_true))
print("  sigma quantiles 10/50/90%%: %s" % np.round(np.quantile(alt_sigmas, [0.1, 0.5, 0.9]), 2))

sigma, a, w = toy1d.kernel_first_estimate(y, prob.noise_std, prob)
print("kernel-first estimate: sigma=%.2f a=%.1f w=%.1f" % (sigma, a, w))
