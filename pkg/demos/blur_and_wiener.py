"""Motion blur, Wiener deconvolution and the reblurring loss.

The reblurring loss ||y - k * F(y, k)||^2 scores a kernel guess by how well
the deconvolved image explains the observation.  Near the true kernel it
separates good guesses from bad ones, but on its own it is minimised by the
no-blur kernel, which reproduces y exactly.  That degenerate optimum is why
the loss only guides a sampler whose learned prior keeps kernels plausible.
"""

import numpy as np

from kerneldiff import blur, metrics, nonblind

x = blur.dead_leaves(64, seed=0)
k = blur.synth_motion_kernel(11, seed=3)
y = blur.add_noise(blur.convolve(x, k), 0.01, seed=1)
# with 1% noise a stronger regulariser than the default pays off
cfg = nonblind.WienerConfig(lam=1e-2)

print("blurred input:   PSNR %.2f dB" % metrics.psnr(y, x))
x_hat = nonblind.wiener_solve(y, k, cfg)
print("true-kernel deconvolution: PSNR %.2f dB, SSIM %.3f" % (metrics.psnr(x_hat, x), metrics.ssim(x_hat, x)))

guesses = {
    "true kernel": k,
    "transposed": k.T.copy(),
    "uniform box": np.full_like(k, 1 / k.size),
    "no blur": blur.impulse(11),
}
for name, guess in guesses.items():
    print("%-12s reblur loss %.4f  MNC %.3f" % (name, nonblind.reblur_loss(y, guess, cfg), metrics.mnc(guess, k)))

loss, grad = nonblind.reblur_loss_and_grad(y, guesses["uniform box"], cfg)
print("gradient at the box kernel has norm %.3g" % np.linalg.norm(grad))
