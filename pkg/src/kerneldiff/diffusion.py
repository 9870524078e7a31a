"""DDPM schedule, ancestral sampling and the solver-guided kernel sampler.

Time steps are 1-based as in the usual DDPM notation: ``t = 1..T`` with
``alpha_bar(0) = 1``.  Kernels live in *diffusion space*, i.e. multiplied by
the kernel scale ``s`` so that their entries are of order one; the solver
always sees ``k / s``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import blur, nonblind
from .errors import DomainError, NumericalAbort

REVERSE_VARIANCES = ("posterior", "beta")
DELTA_RULES = ("adaptive", "fixed")


@dataclass(frozen=True)
class DiffusionSchedule:
    T: int
    beta_start: float
    beta_end: float
    reverse_variance: str = "posterior"
    beta: np.ndarray = field(init=False, repr=False, compare=False)
    alpha: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bar: np.ndarray = field(init=False, repr=False, compare=False)
    reverse_noise: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.T < 2:
            raise DomainError("T must be at least 2")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise DomainError("need 0 < beta_start <= beta_end < 1")
        if self.reverse_variance not in REVERSE_VARIANCES:
            raise DomainError(f"reverse_variance must be one of {REVERSE_VARIANCES}")
        beta = np.linspace(self.beta_start, self.beta_end, self.T)
        alpha = 1.0 - beta
        alpha_bar = np.cumprod(alpha)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        if self.reverse_variance == "posterior":
            var = (1.0 - prev) / (1.0 - alpha_bar) * beta
        else:
            var = beta.copy()
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "reverse_noise", np.sqrt(var))

    def check_t(self, t, allow_zero=False):
        lo = 0 if allow_zero else 1
        if not lo <= t <= self.T:
            raise DomainError(f"t={t} outside [{lo}, {self.T}]")

    def abar(self, t):
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def descriptor(self):
        return {
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "reverse_variance": self.reverse_variance,
        }


def make_schedule(T, beta_start, beta_end, reverse_variance="posterior"):
    """Linear variance schedule, endpoints inclusive."""
    return DiffusionSchedule(T, beta_start, beta_end, reverse_variance)


def desk_schedule(T=200, reverse_variance="posterior"):
    """The 1000-step ``[1e-4, 0.02]`` schedule compressed to ``T`` steps.

    Both endpoints are multiplied by ``1000 / T`` so the total injected
    variance stays about the same.
    """
    scale = 1000.0 / T
    return make_schedule(T, 1e-4 * scale, 0.02 * scale, reverse_variance)


def forward_sample(k0, t, eps, sched):
    """``sqrt(abar_t) k0 + sqrt(1 - abar_t) eps``; ``t = 0`` returns ``k0``."""
    sched.check_t(t, allow_zero=True)
    k0 = np.asarray(k0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if k0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {k0.shape} vs {eps.shape}")
    if t == 0:
        return k0.copy()
    ab = sched.abar(t)
    return np.sqrt(ab) * k0 + np.sqrt(1.0 - ab) * eps


def predict_k0(k_t, eps_hat, t, sched):
    """One-shot clean estimate ``(k_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t)``."""
    sched.check_t(t)
    k_t = np.asarray(k_t, dtype=float)
    eps_hat = np.asarray(eps_hat, dtype=float)
    if k_t.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch: {k_t.shape} vs {eps_hat.shape}")
    ab = sched.abar(t)
    return (k_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)


def reverse_step(k_t, eps_hat, t, z, sched):
    """One ancestral step ``k_t -> k_{t-1}``; the noise term is dropped at ``t = 1``."""
    sched.check_t(t)
    a = sched.alpha[t - 1]
    ab = sched.alpha_bar[t - 1]
    mean = (k_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mean
    return mean + sched.reverse_noise[t - 1] * z


@dataclass(frozen=True)
class GuidanceConfig:
    """Step-size rule and options for solver guidance.

    ``step_numerator`` is the constant of the adaptive rule
    ``delta = step_numerator / residual``.  ``kernel_scale=None`` resolves to
    ``K^2 / 4`` for a ``K x K`` kernel.
    """

    delta_rule: str = "adaptive"
    fixed_delta: float = 0.0
    refine_steps: int = 50
    chain_through_solver: bool = True
    chain_factor: bool = True
    kernel_scale: float | None = None
    step_numerator: float = 0.1
    backtracking: bool = True
    max_halvings: int = 10

    def __post_init__(self):
        if self.delta_rule not in DELTA_RULES:
            raise DomainError(f"delta_rule must be one of {DELTA_RULES}")
        if self.refine_steps < 0:
            raise DomainError("refine_steps must be non-negative")
        if self.kernel_scale is not None and not self.kernel_scale > 0:
            raise DomainError("kernel_scale must be positive")

    def scale_for(self, ksize):
        return default_kernel_scale(ksize) if self.kernel_scale is None else self.kernel_scale

    def delta(self, residual):
        if self.delta_rule == "fixed":
            return self.fixed_delta
        # residuals below 1e-6 would blow the step up; cap it there
        return self.step_numerator / max(residual, 1e-6)

    def to_dict(self):
        return asdict(self)


UNGUIDED = GuidanceConfig(delta_rule="fixed", fixed_delta=0.0, refine_steps=0)


def default_kernel_scale(ksize):
    return ksize * ksize / 4.0


def guidance_loss_and_grad(k_hat0, y, scale, solver_cfg, through_solver=True):
    """Reblurring loss at ``k_hat0 / scale`` and its gradient in diffusion space."""
    loss, grad = nonblind.reblur_loss_and_grad(y, k_hat0 / scale, solver_cfg, through_solver)
    return loss, grad / scale


@dataclass
class KernelDiffResult:
    kernel: np.ndarray  # projected, unit sum
    image: np.ndarray
    raw_kernel: np.ndarray  # final iterate in kernel units, before projection
    residual_trace: np.ndarray  # index 0 is t = T
    refine_losses: list


def _check_finite(arr, where, iteration):
    if not np.all(np.isfinite(arr)):
        raise NumericalAbort(f"non-finite {where}", iteration=iteration)


def kernel_diff(y, denoiser, sched, cfg=GuidanceConfig(), solver_cfg=nonblind.WienerConfig(), seed=0, ksize=None):
    """Sample a kernel for ``y`` by guided reverse diffusion, then refine it.

    ``denoiser(k_t, y, t)`` predicts the noise in a diffusion-space kernel.
    Each step takes an ancestral step, forms the one-shot clean estimate,
    deconvolves ``y`` with it and descends the reblurring loss.  After the
    loop, ``cfg.refine_steps`` gradient steps polish the kernel, which is
    then clipped, renormalised and used for the final deconvolution.
    """
    y = np.asarray(y, dtype=float)
    ksize = ksize or denoiser.kernel_size
    scale = cfg.scale_for(ksize)
    rng = np.random.default_rng(seed)

    k = rng.standard_normal((ksize, ksize))
    trace = []
    for t in range(sched.T, 0, -1):
        z = rng.standard_normal((ksize, ksize))
        eps_hat = denoiser(k, y, t)
        _check_finite(eps_hat, "noise prediction", t)
        k_half = reverse_step(k, eps_hat, t, z, sched)
        k_hat0 = predict_k0(k, eps_hat, t, sched)

        loss, grad = guidance_loss_and_grad(k_hat0, y, scale, solver_cfg, cfg.chain_through_solver)
        trace.append(loss)
        if cfg.chain_factor:
            grad = grad / np.sqrt(sched.abar(t))
        k = k_half - cfg.delta(loss) * grad
        _check_finite(k, "kernel iterate", t)

    k, refine_losses = stage2_refine(k, y, cfg.refine_steps, solver_cfg, cfg, scale)
    raw = k / scale
    kernel = blur.project_kernel(raw)
    image = nonblind.wiener_solve(y, kernel, solver_cfg)
    return KernelDiffResult(kernel, image, raw, np.asarray(trace), refine_losses)


def stage2_refine(k0, y, J, solver_cfg=nonblind.WienerConfig(), cfg=GuidanceConfig(), scale=None):
    """``J`` gradient steps on the reblurring loss of a diffusion-space kernel.

    With ``cfg.backtracking`` a step that would raise the loss is halved up
    to ``cfg.max_halvings`` times and skipped if it still does, so the loss
    never increases.  Returns the kernel and the loss before each step
    followed by the final loss.
    """
    if J < 0:
        raise DomainError("J must be non-negative")
    k = np.array(k0, dtype=float)
    scale = cfg.scale_for(k.shape[0]) if scale is None else scale
    if J == 0:
        return k, []
    loss, grad = guidance_loss_and_grad(k, y, scale, solver_cfg, cfg.chain_through_solver)
    losses = [loss]
    for j in range(1, J + 1):
        delta = cfg.delta(loss)
        trial = k - delta * grad
        trial_loss = nonblind.reblur_loss(y, trial / scale, solver_cfg)
        if cfg.backtracking:
            halvings = 0
            while not trial_loss <= loss and halvings < cfg.max_halvings:
                delta *= 0.5
                trial = k - delta * grad
                trial_loss = nonblind.reblur_loss(y, trial / scale, solver_cfg)
                halvings += 1
            if not trial_loss <= loss:
                # no descent along this gradient; further steps would repeat it
                break
        _check_finite(trial, "refined kernel", j)
        k = trial
        loss, grad = guidance_loss_and_grad(k, y, scale, solver_cfg, cfg.chain_through_solver)
        losses.append(loss)
    return k, losses
