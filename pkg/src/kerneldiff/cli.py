"""Command-line entry points binding the modules into reproducible runs.

Every command takes the resolved configuration dict and an output
directory, writes its artifacts there together with ``config.json``, and
returns the paths it wrote.  ``main`` adds argument parsing and maps
failures onto exit codes.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import blur, config, diffusion, metrics, nonblind, toy1d
from . import denoiser as dn
from .errors import DomainError, FormatError, NumericalAbort

log = logging.getLogger("kerneldiff")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


# --- builders from config -------------------------------------------------


def toy_problem(cfg):
    t = cfg["toy"]
    return toy1d.ToyProblem(
        n_samples=t["n_samples"],
        a_true=t["a_true"],
        w_true=t["w_true"],
        sigma_true=t["sigma_true"],
        noise_std=t["noise_std"],
        seed=cfg["seed"],
        a_max=t["a_max"],
        w_max=t["w_max"],
        sigma_max=t["sigma_max"],
    )


def trajectory_params(cfg):
    k = cfg["kernels"]
    return blur.TrajectoryParams(k["num_steps"], k["inertia"], k["jitter_std"], k["smoothing_sigma"])


def schedule(cfg):
    s = cfg["schedule"]
    if s["beta_start"] is None and s["beta_end"] is None:
        return diffusion.desk_schedule(s["T"], s["reverse_variance"])
    if s["beta_start"] is None or s["beta_end"] is None:
        raise config.ConfigError("set both schedule.beta_start and schedule.beta_end or neither")
    return diffusion.make_schedule(s["T"], s["beta_start"], s["beta_end"], s["reverse_variance"])


def guidance(cfg):
    return diffusion.GuidanceConfig(**cfg["guidance"])


def solver(cfg):
    return nonblind.WienerConfig(**cfg["solver"])


def arch(cfg):
    a = cfg["arch"]
    return dn.DenoiserArch(
        kernel_size=cfg["kernels"]["size"],
        image_size=cfg["images"]["size"],
        channels=tuple(a["channels"]),
        time_embed_dim=a["time_embed_dim"],
        out_gain=a["out_gain"],
    )


def train_config(cfg):
    return dn.TrainConfig(seed=config.derive_seed(cfg["seed"], "train"), **cfg["train"])


def train_images(cfg):
    im = cfg["images"]
    return [blur.dead_leaves(im["size"], config.derive_seed(cfg["seed"], "train-image", i), im["n_shapes"]) for i in range(im["train_count"])]


def test_set(cfg):
    """Held-out ``(id, sharp, kernel, blurred)`` tuples, disjoint seeds from training."""
    im = cfg["images"]
    seed = cfg["seed"]
    params = trajectory_params(cfg)
    out = []
    for i in range(im["test_count"]):
        x = blur.dead_leaves(im["size"], config.derive_seed(seed, "test-image", i), im["n_shapes"])
        k = blur.synth_motion_kernel(cfg["kernels"]["size"], params, config.derive_seed(seed, "test-kernel", i))
        y = blur.add_noise(blur.convolve(x, k), im["test_noise_std"], config.derive_seed(seed, "test-noise", i))
        out.append((f"test{i:03d}", x, k, y))
    return out


def load_model(cfg):
    return dn.load_checkpoint(_require(cfg, "checkpoint"))


def center_crop(y, size):
    h, w = y.shape
    if h < size or w < size:
        raise DomainError(f"image {y.shape} is smaller than the network input size {size}")
    i, j = (h - size) // 2, (w - size) // 2
    return y[i : i + size, j : j + size]


def run_sampler(den, y, cfg, guide=None, seed=0):
    """``kernel_diff`` with the network fed a centre crop of ``y`` when ``y`` is larger."""
    size = den.arch.image_size

    def eps(k_t, y_full, t):
        return den(k_t, center_crop(y_full, size), t)

    eps.kernel_size = den.kernel_size
    # the sampler must work in the space the network was trained in
    guide = replace(guide or guidance(cfg), kernel_scale=den.kernel_scale)
    return diffusion.kernel_diff(y, eps, den.sched, guide, solver(cfg), seed=seed)


def _require(cfg, key):
    path = cfg["paths"][key]
    if path is None:
        raise config.ConfigError(f"paths.{key} is required for this command")
    if not Path(path).exists():
        raise FileNotFoundError(f"{key} not found: {path}")
    return path


# --- commands -------------------------------------------------------------


def cmd_toy1d_surface(cfg, out):
    prob = toy_problem(cfg)
    t = cfg["toy"]
    y = toy1d.toy_forward(prob)
    grid = toy1d.projected_surface(
        y, seed=config.derive_seed(cfg["seed"], "projection"), half_extent=t["surface_half_extent"], resolution=t["surface_resolution"], prob=prob
    )
    sig = toy1d.default_sigma_grid(t["sigma_step"], prob.sigma_max)
    paths = [out / "surface.csv", out / "marginal_grid.csv", out / "marginal_laplace.csv"]
    toy1d.write_surface_csv(paths[0], grid)
    toy1d.write_marginal_csv(paths[1], sig, toy1d.marginal_sigma_grid(y, sig, prob.noise_std, prob))
    toy1d.write_marginal_csv(paths[2], sig, toy1d.marginal_sigma_laplace(y, sig, prob.noise_std, prob, t["literal_denominator"]))
    return paths


def cmd_toy1d_compare(cfg, out):
    prob = toy_problem(cfg)
    t = cfg["toy"]
    y = toy1d.toy_forward(prob)
    outcomes = toy1d.multistart_alt_min(
        y,
        n_starts=t["restarts"],
        seed=config.derive_seed(cfg["seed"], "restarts"),
        prob=prob,
        max_iters=t["alt_max_iters"],
        threads=cfg["threads"],
        bracket_fraction=t["bracket_fraction"],
    )
    sigma, a, w = toy1d.kernel_first_estimate(y, prob.noise_std, prob, toy1d.default_sigma_grid(t["sigma_step"], prob.sigma_max))
    alt_fail = toy1d.failure_fraction([r.sigma for _, r in outcomes], prob.sigma_true)
    kf_fail = toy1d.failure_fraction([sigma], prob.sigma_true)
    summary = {
        "kernel_first_a": a,
        "kernel_first_w": w,
        "kernel_first_sigma": sigma,
        "alt_min_failure_rate": alt_fail,
        "kernel_first_failure_rate": kf_fail,
    }
    path = out / "compare.csv"
    toy1d.write_multistart_csv(path, outcomes, summary)
    log.info("alt_min failure rate %.3f, kernel-first failure rate %.3f (sigma %.3f)", alt_fail, kf_fail, sigma)
    return [path]


def cmd_gen_kernels(cfg, out):
    k = cfg["kernels"]
    data = blur.gen_dataset(k["count"], k["size"], trajectory_params(cfg), config.derive_seed(cfg["seed"], "kernels"))
    path = out / "kernels.kd"
    blur.save_dataset(path, data)
    return [path]


def cmd_train(cfg, out):
    if cfg["paths"]["kernels"] is None:
        k = cfg["kernels"]
        kernels = blur.gen_dataset(k["count"], k["size"], trajectory_params(cfg), config.derive_seed(cfg["seed"], "kernels"))
    else:
        kernels = blur.load_dataset(_require(cfg, "kernels"))
    net = arch(cfg)
    if kernels.shape[1] != net.kernel_size:
        raise config.ConfigError(f"dataset kernels are {kernels.shape[1]}x{kernels.shape[1]}, kernels.size is {net.kernel_size}")
    sched = schedule(cfg)
    scale = guidance(cfg).scale_for(net.kernel_size)

    def progress(it, loss):
        log.info("iter %d loss %.6g", it, loss)

    res = dn.train(kernels, train_images(cfg), train_config(cfg), net, sched, scale, progress=progress)
    ckpt = out / "model.kdnn"
    dn.save_checkpoint(ckpt, dn.Denoiser(res.params, sched, scale))
    curve = out / "loss_curve.csv"
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "mean_loss"])
        for it, loss in res.loss_curve:
            w.writerow([it, f"{loss:.9g}"])
    return [ckpt, curve]


def cmd_deblur(cfg, out):
    den = load_model(cfg)
    y = blur.read_image(_require(cfg, "image"))
    res = run_sampler(den, y, cfg, seed=config.derive_seed(cfg["seed"], "sampler"))
    paths = [out / "k0.kd", out / "x0.png", out / "residual.csv"]
    blur.save_dataset(paths[0], res.kernel[None])
    blur.write_image(paths[1], res.image)
    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "step", "residual"])
        T = len(res.residual_trace)
        for i, r in enumerate(res.residual_trace):
            w.writerow(["sampler", T - i, f"{r:.9g}"])
        for j, r in enumerate(res.refine_losses):
            w.writerow(["refine", j, f"{r:.9g}"])
    return paths


def cmd_eval(cfg, out):
    x = blur.read_image(_require(cfg, "image"))
    ref = blur.read_image(_require(cfg, "reference"))
    mnc = np.nan
    if cfg["paths"]["kernel_estimate"] is not None or cfg["paths"]["kernel_true"] is not None:
        k_est = blur.as_kernel(blur.load_dataset(_require(cfg, "kernel_estimate"))[0])
        k_true = blur.as_kernel(blur.load_dataset(_require(cfg, "kernel_true"))[0])
        mnc = metrics.mnc(k_est, k_true)
    report = metrics.EvalReport()
    report.add(Path(cfg["paths"]["image"]).stem, metrics.psnr(x, ref), metrics.ssim(x, ref), mnc)
    path = out / "metrics.csv"
    report.write_csv(path)
    return [path]


PAIRED_KEYS = ("psnr_db", "ssim", "mnc", "final_residual")


def ablate(den, cfg):
    """Guided and unguided reports over the held-out test set."""
    reports = {"guided": metrics.EvalReport(), "unguided": metrics.EvalReport()}
    guides = {"guided": guidance(cfg), "unguided": diffusion.UNGUIDED}
    traces = {}
    for i, (name, x, k, y) in enumerate(test_set(cfg)):
        for variant, guide in guides.items():
            res = run_sampler(den, y, cfg, guide, seed=config.derive_seed(cfg["seed"], "sampler", i))
            reports[variant].add(
                name, metrics.psnr(res.image, x), metrics.ssim(res.image, x), metrics.mnc(res.kernel, k), res.residual_trace[-1]
            )
            traces[variant, name] = res
        log.info("%s: guided mnc %.3f, unguided mnc %.3f", name, reports["guided"].rows[-1]["mnc"], reports["unguided"].rows[-1]["mnc"])
    return reports, traces


def write_paired(path, guided, unguided):
    cols = [f"{key}_{v}" for key in PAIRED_KEYS for v in ("guided", "unguided")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *cols])
        for g, u in zip(guided.rows, unguided.rows):
            w.writerow([g["id"], *(metrics._fmt(r[key]) for key in PAIRED_KEYS for r in (g, u))])
        w.writerow(["MEAN", *(metrics._fmt(rep.mean(key)) for key in PAIRED_KEYS for rep in (guided, unguided))])


def cmd_ablate(cfg, out):
    reports, _ = ablate(load_model(cfg), cfg)
    paths = [out / "ablate.csv", out / "guided.csv", out / "unguided.csv"]
    write_paired(paths[0], reports["guided"], reports["unguided"])
    reports["guided"].write_csv(paths[1])
    reports["unguided"].write_csv(paths[2])
    return paths


COMMANDS = {
    "toy1d-surface": cmd_toy1d_surface,
    "toy1d-compare": cmd_toy1d_compare,
    "gen-kernels": cmd_gen_kernels,
    "train": cmd_train,
    "deblur": cmd_deblur,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def run(command, cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    config.dump(cfg, out / "config.json")
    return [out / "config.json", *COMMANDS[command](cfg, out)]


def build_parser():
    p = argparse.ArgumentParser(prog="kerneldiff", description="Kernel estimation by guided diffusion.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config key by dotted path")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.threads is not None:
            overrides.append(f"threads={args.threads}")
        cfg = config.resolve(config.load(args.config) if args.config else None, overrides)
        run(args.command, cfg, args.out)
    except NumericalAbort as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (config.ConfigError, DomainError, TypeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
