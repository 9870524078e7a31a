"""Train a small kernel denoiser, then deblur held-out images with and without guidance.

Usage: python train_and_deblur.py [checkpoint.kdnn]

Without an argument a short training run (a few minutes) is done first; pass
a checkpoint from ``kerneldiff train`` to use the full desk model instead.
The comparison is the same one ``kerneldiff ablate`` writes to CSV.
"""

import sys

from kerneldiff import blur, cli, config, metrics, nonblind
from kerneldiff import denoiser as dn

cfg = config.resolve(None, ["images.test_count=6"])
if len(sys.argv) > 1:
    den = dn.load_checkpoint(sys.argv[1])
else:
    cfg = config.resolve(cfg, ["kernels.count=200", "train.iterations=1500", "train.log_every=500"])
    kernels = blur.gen_dataset(200, 11, cli.trajectory_params(cfg), config.derive_seed(cfg["seed"], "kernels"))
    net, sched = cli.arch(cfg), cli.schedule(cfg)
    res = dn.train(kernels, cli.train_images(cfg), cli.train_config(cfg), net, sched, progress=lambda it, l: print("iter %d loss %.4f" % (it, l)))
    den = dn.Denoiser(res.params, sched, cli.guidance(cfg).scale_for(11))

reports, traces = cli.ablate(den, cfg)
for variant, rep in reports.items():
    print("%-9s PSNR %.2f dB  SSIM %.3f  MNC %.3f" % (variant, rep.mean("psnr_db"), rep.mean("ssim"), rep.mean("mnc")))
name = reports["guided"].rows[0]["id"]
trace = traces["guided", name].residual_trace
print("%s guided residual: t=T %.3g, t=1 %.3g" % (name, trace[0], trace[-1]))

# the same solver with the true kernel bounds what any kernel estimate can reach
_, x, k, y = cli.test_set(cfg)[0]
print("%s with the true kernel: PSNR %.2f dB" % (name, metrics.psnr(nonblind.wiener_solve(y, k, cli.solver(cfg)), x)))
