"""Conditional noise-prediction network ``eps(k_t, y, t)`` with exact gradients.

Two small convolutional encoders, one for the noisy kernel and one for the
blurred image, feed a shared decoder that predicts the noise at kernel
resolution.  The image branch is average-pooled by two, resampled onto the
kernel grid and concatenated with the kernel features; its global mean also
enters the decoder as a per-channel bias, next to a sinusoidal embedding of
``t``.

The output is preconditioned: with ``v = abar * std^2 + 1 - abar`` and
``c = k_t - sqrt(abar) * mean``, the prediction is
``sqrt(1 - abar) / v * c + sqrt(abar * std^2 / v) * F(c / sqrt(v), y, t)``.
The first term is the exact noise posterior mean for Gaussian kernels with
the given entry statistics, so the network ``F`` only learns a correction
whose size is of order one at every ``t``.

Reverse-mode differentiation is written out layer by layer.  Everything runs
in float64 with a leading batch axis.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import blur
from .diffusion import DiffusionSchedule, default_kernel_scale
from .errors import DomainError, FormatError, NumericalAbort

POOL = 2


@dataclass(frozen=True)
class DenoiserArch:
    kernel_size: int = 11
    image_size: int = 32
    channels: tuple = (8, 16)
    time_embed_dim: int = 16
    out_gain: float = 0.1  # init gain of the output layer, keeps initial predictions near zero
    skip: bool = True  # Gaussian skip term around the network output
    kernel_mean: float = 0.25  # entry mean of scaled training kernels, K^2/4 * 1/K^2
    kernel_std: float = 0.7  # entry std of scaled training kernels

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.kernel_size % 2 == 0 or self.kernel_size < 3:
            raise DomainError("kernel_size must be odd and at least 3")
        if self.image_size % POOL:
            raise DomainError(f"image_size must be divisible by {POOL}")
        if len(self.channels) != 2 or min(self.channels) < 1:
            raise DomainError("channels must be two positive integers")
        if self.time_embed_dim % 2 or self.time_embed_dim < 2:
            raise DomainError("time_embed_dim must be even")
        if not self.kernel_std > 0:
            raise DomainError("kernel_std must be positive")

    def layer_shapes(self):
        """Ordered ``(name, shape)`` table of all parameters."""
        c1, c2 = self.channels
        d = self.time_embed_dim
        return [
            ("temb.w", (d, d)),
            ("temb.b", (d,)),
            ("temb_k.w", (d, c1)),
            ("temb_k.b", (c1,)),
            ("temb_d.w", (d, c2)),
            ("temb_d.b", (c2,)),
            ("k1.w", (c1, 1, 3, 3)),
            ("k1.b", (c1,)),
            ("k2.w", (c1, c1, 3, 3)),
            ("k2.b", (c1,)),
            ("y1.w", (c1, 1, 3, 3)),
            ("y1.b", (c1,)),
            ("y2.w", (c1, c1, 3, 3)),
            ("y2.b", (c1,)),
            ("glob.w", (c1, c2)),
            ("glob.b", (c2,)),
            ("d1.w", (c2, 2 * c1, 3, 3)),
            ("d1.b", (c2,)),
            ("d2.w", (1, c2, 3, 3)),
            ("d2.b", (1,)),
        ]

    def to_dict(self):
        return asdict(self) | {"channels": list(self.channels)}


def fan_in(name, shape):
    if name.endswith(".w"):
        return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
    return None


def param_count(arch):
    return sum(int(np.prod(s)) for _, s in arch.layer_shapes())


@dataclass
class DenoiserParams:
    """Flat parameter vector plus the arch that gives it shape."""

    arch: DenoiserArch
    vector: np.ndarray
    offsets: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        self.offsets = {}
        pos = 0
        for name, shape in self.arch.layer_shapes():
            size = int(np.prod(shape))
            self.offsets[name] = (pos, shape)
            pos += size
        if pos != self.vector.size:
            raise DomainError(f"parameter vector has {self.vector.size} entries, arch needs {pos}")

    @property
    def param_count(self):
        return self.vector.size

    def __getitem__(self, name):
        pos, shape = self.offsets[name]
        return self.vector[pos : pos + int(np.prod(shape))].reshape(shape)

    def with_vector(self, vector):
        return DenoiserParams(self.arch, vector)


def init_params(arch, seed=0):
    """Uniform ``U(-b, b)`` weights with ``b = gain / sqrt(fan_in)``, zero biases."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in arch.layer_shapes():
        n = fan_in(name, shape)
        if n is None:
            chunks.append(np.zeros(int(np.prod(shape))))
            continue
        gain = arch.out_gain if name == "d2.w" else 1.0
        bound = gain / np.sqrt(n)
        chunks.append(rng.uniform(-bound, bound, int(np.prod(shape))))
    return DenoiserParams(arch, np.concatenate(chunks))


def init_std(arch, name):
    """Standard deviation targeted by :func:`init_params` for weight ``name``."""
    shape = dict(arch.layer_shapes())[name]
    gain = arch.out_gain if name == "d2.w" else 1.0
    return gain / np.sqrt(fan_in(name, shape)) / np.sqrt(3.0)


# --- layers ---------------------------------------------------------------


def _windows(x):
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))


def _im2col(x):
    b, c, h, w = x.shape
    return _windows(x).transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * 9)


def conv3x3(x, w, b=None):
    """Same-size 3x3 cross-correlation with zero padding, ``(B, C, H, W)``."""
    bsz, c, h, wd = x.shape
    o = w.shape[0]
    if c == 1:
        # einsum is slow on single-channel inputs
        out = (_im2col(x) @ w.reshape(o, 9).T).reshape(bsz, h, wd, o).transpose(0, 3, 1, 2)
    else:
        out = np.einsum("bchwij,ocij->bohw", _windows(x), w, optimize=True)
    if b is not None:
        out = out + b[None, :, None, None]
    return out


def conv3x3_backward(x, w, g):
    bsz, c, h, wd = x.shape
    o = w.shape[0]
    if c == 1:
        gw = (g.transpose(1, 0, 2, 3).reshape(o, -1) @ _im2col(x)).reshape(w.shape)
    else:
        gw = np.einsum("bchwij,bohw->ocij", _windows(x), g, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    gx = conv3x3(g, w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return gx, gw, gb


def silu(x):
    s = expit(x)
    return x * s, s


def silu_backward(x, s, g):
    return g * s * (1.0 + x * (1.0 - s))


def avgpool(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // POOL, POOL, w // POOL, POOL).mean(axis=(3, 5))


def avgpool_backward(g):
    return np.repeat(np.repeat(g, POOL, axis=2), POOL, axis=3) / (POOL * POOL)


def area_resample_matrix(n_out, n_in):
    """Row-stochastic matrix averaging ``n_in`` samples into ``n_out`` equal bins."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = edges[i], edges[i + 1]
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
        m[i] /= hi - lo
    return m


def time_embedding(t, dim):
    t = np.asarray(t, dtype=float).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# --- network --------------------------------------------------------------


def preconditioning(arch, abar):
    """Per-example ``(c_skip, c_in, c_out)`` for cumulative products ``abar``."""
    abar = np.asarray(abar, dtype=float)
    if not arch.skip:
        one = np.ones_like(abar)
        return 0.0 * one, one, one
    var = abar * arch.kernel_std**2 + 1.0 - abar
    return np.sqrt(1.0 - abar) / var, 1.0 / np.sqrt(var), np.sqrt(abar * arch.kernel_std**2 / var)


def _forward(params, k_t, y, t, abar):
    """Batched forward pass; returns the prediction and the tape for backprop."""
    p = params
    arch = p.arch
    c1 = arch.channels[0]
    tape = {}

    c_skip, c_in, c_out = (c[:, None, None] for c in preconditioning(arch, abar))
    centred = k_t - (np.sqrt(abar) * arch.kernel_mean)[:, None, None] if arch.skip else k_t

    emb = time_embedding(t, arch.time_embed_dim)
    h_pre = emb @ p["temb.w"] + p["temb.b"]
    h, h_s = silu(h_pre)
    bias_k = h @ p["temb_k.w"] + p["temb_k.b"]
    bias_d = h @ p["temb_d.w"] + p["temb_d.b"]
    tape.update(emb=emb, h_pre=h_pre, h=h, h_s=h_s)

    kin = (c_in * centred)[:, None]
    a1 = conv3x3(kin, p["k1.w"], p["k1.b"]) + bias_k[:, :, None, None]
    k1, k1_s = silu(a1)
    a2 = conv3x3(k1, p["k2.w"], p["k2.b"])
    k2, k2_s = silu(a2)
    tape.update(kin=kin, a1=a1, k1=k1, k1_s=k1_s, a2=a2, k2_s=k2_s)

    yin = y[:, None]
    b1 = conv3x3(yin, p["y1.w"], p["y1.b"])
    y1, y1_s = silu(b1)
    y1p = avgpool(y1)
    b2 = conv3x3(y1p, p["y2.w"], p["y2.b"])
    y2, y2_s = silu(b2)
    rs = area_resample_matrix(arch.kernel_size, y2.shape[2])
    yr = np.einsum("kh,bchw,lw->bckl", rs, y2, rs, optimize=True)
    gmean = y2.mean(axis=(2, 3))
    bias_g = gmean @ p["glob.w"] + p["glob.b"]
    tape.update(yin=yin, b1=b1, y1_s=y1_s, y1p=y1p, b2=b2, y2=y2, y2_s=y2_s, rs=rs, gmean=gmean)

    cat = np.concatenate([k2, yr], axis=1)
    d1 = conv3x3(cat, p["d1.w"], p["d1.b"]) + (bias_d + bias_g)[:, :, None, None]
    u, u_s = silu(d1)
    net = conv3x3(u, p["d2.w"], p["d2.b"])[:, 0]
    out = c_skip * centred + c_out * net
    tape.update(cat=cat, d1=d1, u=u, u_s=u_s, c1=c1, c_out=c_out)
    return out, tape


def _backward(params, tape, g_out):
    p = params
    grads = {}
    c1 = tape["c1"]

    g_net = tape["c_out"] * g_out
    g_u, grads["d2.w"], grads["d2.b"] = conv3x3_backward(tape["u"], p["d2.w"], g_net[:, None])
    g_d1 = silu_backward(tape["d1"], tape["u_s"], g_u)
    g_cat, grads["d1.w"], grads["d1.b"] = conv3x3_backward(tape["cat"], p["d1.w"], g_d1)
    g_bias_d = g_d1.sum(axis=(2, 3))

    # global image bias
    grads["glob.w"] = tape["gmean"].T @ g_bias_d
    grads["glob.b"] = g_bias_d.sum(axis=0)
    g_gmean = g_bias_d @ p["glob.w"].T
    hw = tape["y2"].shape[2] * tape["y2"].shape[3]

    # image branch
    rs = tape["rs"]
    g_y2 = np.einsum("kh,bckl,lw->bchw", rs, g_cat[:, c1:], rs, optimize=True)
    g_y2 = g_y2 + g_gmean[:, :, None, None] / hw
    g_b2 = silu_backward(tape["b2"], tape["y2_s"], g_y2)
    g_y1p, grads["y2.w"], grads["y2.b"] = conv3x3_backward(tape["y1p"], p["y2.w"], g_b2)
    g_b1 = silu_backward(tape["b1"], tape["y1_s"], avgpool_backward(g_y1p))
    _, grads["y1.w"], grads["y1.b"] = conv3x3_backward(tape["yin"], p["y1.w"], g_b1)

    # kernel branch
    g_a2 = silu_backward(tape["a2"], tape["k2_s"], g_cat[:, :c1])
    g_k1, grads["k2.w"], grads["k2.b"] = conv3x3_backward(tape["k1"], p["k2.w"], g_a2)
    g_a1 = silu_backward(tape["a1"], tape["k1_s"], g_k1)
    _, grads["k1.w"], grads["k1.b"] = conv3x3_backward(tape["kin"], p["k1.w"], g_a1)
    g_bias_k = g_a1.sum(axis=(2, 3))

    # time embedding
    h = tape["h"]
    grads["temb_k.w"] = h.T @ g_bias_k
    grads["temb_k.b"] = g_bias_k.sum(axis=0)
    grads["temb_d.w"] = h.T @ g_bias_d
    grads["temb_d.b"] = g_bias_d.sum(axis=0)
    g_h = g_bias_k @ p["temb_k.w"].T + g_bias_d @ p["temb_d.w"].T
    g_hpre = silu_backward(tape["h_pre"], tape["h_s"], g_h)
    grads["temb.w"] = tape["emb"].T @ g_hpre
    grads["temb.b"] = g_hpre.sum(axis=0)

    return np.concatenate([grads[name].reshape(-1) for name, _ in p.arch.layer_shapes()])


def _check_inputs(arch, k_t, y):
    if k_t.shape[1:] != (arch.kernel_size, arch.kernel_size):
        raise ValueError(f"kernel input shape {k_t.shape[1:]} does not match arch kernel_size {arch.kernel_size}")
    if y.shape[1:] != (arch.image_size, arch.image_size):
        raise ValueError(f"image input shape {y.shape[1:]} does not match arch image_size {arch.image_size}")
    if k_t.shape[0] != y.shape[0]:
        raise ValueError("kernel and image batch sizes differ")


def forward(params, k_t, y, t, sched):
    """Noise prediction for a single ``K x K`` kernel or a batch ``(B, K, K)``."""
    k_t = np.asarray(k_t, dtype=float)
    y = np.asarray(y, dtype=float)
    single = k_t.ndim == 2
    if single:
        k_t, y, t = k_t[None], y[None], [t]
    _check_inputs(params.arch, k_t, y)
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise DomainError(f"t outside [1, {sched.T}]")
    out, _ = _forward(params, k_t, y, t, sched.alpha_bar[t - 1])
    return out[0] if single else out


def sample_noise(batch_size, ksize, sched, seed):
    """Timesteps uniform on ``1..T`` and standard normal noise for a batch."""
    rng = np.random.default_rng(seed)
    t = rng.integers(1, sched.T + 1, size=batch_size)
    eps = rng.standard_normal((batch_size, ksize, ksize))
    return t, eps


def loss_and_grad(params, k0, y, sched, seed, t=None, eps=None):
    """Mean squared noise-prediction error and its exact parameter gradient.

    ``k0`` holds diffusion-space (scaled) clean kernels ``(B, K, K)`` and
    ``y`` the matching blurred images.  ``t`` and ``eps`` are drawn from
    ``seed`` unless given.  The loss is averaged over batch and kernel
    entries.
    """
    k0 = np.asarray(k0, dtype=float)
    y = np.asarray(y, dtype=float)
    if k0.shape[0] == 0:
        raise DomainError("empty batch")
    _check_inputs(params.arch, k0, y)
    if t is None or eps is None:
        t, eps = sample_noise(k0.shape[0], params.arch.kernel_size, sched, seed)
    t = np.asarray(t)
    ab = sched.alpha_bar[t - 1][:, None, None]
    k_t = np.sqrt(ab) * k0 + np.sqrt(1.0 - ab) * eps

    pred, tape = _forward(params, k_t, y, t, ab[:, 0, 0])
    err = pred - eps
    per_example = np.mean(err * err, axis=(1, 2))
    bad = np.flatnonzero(~np.isfinite(per_example))
    if bad.size:
        exc = NumericalAbort(f"non-finite loss for batch example {bad[0]}")
        exc.example_index = int(bad[0])
        raise exc
    loss = float(per_example.mean())
    g_out = 2.0 * err / err.size
    return loss, _backward(params, tape, g_out)


class Denoiser:
    """Trained network bundled with its schedule and kernel scale.

    Calling it as ``denoiser(k_t, y, t)`` gives the noise prediction the
    sampler expects.
    """

    def __init__(self, params, sched, kernel_scale=None):
        self.params = params
        self.sched = sched
        self.kernel_scale = default_kernel_scale(params.arch.kernel_size) if kernel_scale is None else kernel_scale

    @property
    def arch(self):
        return self.params.arch

    @property
    def kernel_size(self):
        return self.params.arch.kernel_size

    def __call__(self, k_t, y, t):
        return forward(self.params, k_t, y, t, self.sched)


# --- training -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    iterations: int = 20000
    seed: int = 0
    ema_decay: float = 0.0
    noise_std: float = 0.01
    log_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise DomainError("batch_size must be at least 1")
        if not 0 <= self.ema_decay < 1:
            raise DomainError("ema_decay must lie in [0, 1)")


@dataclass
class TrainResult:
    params: DenoiserParams
    loss_curve: list  # (iteration, mean loss over the preceding log_every iterations)
    losses: np.ndarray


def random_crop(img, size, rng):
    h, w = img.shape
    if h < size or w < size:
        raise DomainError(f"image {img.shape} smaller than crop size {size}")
    i = rng.integers(0, h - size + 1)
    j = rng.integers(0, w - size + 1)
    crop = img[i : i + size, j : j + size]
    return crop[:, ::-1] if rng.random() < 0.5 else crop


def make_batch(kernels, images, arch, batch_size, noise_std, kernel_scale, rng):
    """Blurred crops and their scaled kernels, ``(k0, y)``."""
    ki = rng.integers(0, len(kernels), size=batch_size)
    ii = rng.integers(0, len(images), size=batch_size)
    k0 = np.empty((batch_size, arch.kernel_size, arch.kernel_size))
    y = np.empty((batch_size, arch.image_size, arch.image_size))
    for b in range(batch_size):
        k = blur.as_kernel(kernels[ki[b]])
        x = random_crop(images[ii[b]], arch.image_size, rng)
        y[b] = blur.convolve(x, k, "symmetric")
        if noise_std > 0:
            y[b] += noise_std * rng.standard_normal(y[b].shape)
        k0[b] = kernel_scale * k
    return k0, y


def train(kernels, images, cfg=TrainConfig(), arch=DenoiserArch(), sched=None, kernel_scale=None, params=None, progress=None):
    """Fit the network with Adam on freshly blurred random crops.

    Iteration ``i`` draws its batch and its noise from seeds derived from
    ``(cfg.seed, i)``, so the run is reproducible.  ``progress`` is an
    optional callback ``(iteration, loss)``.
    """
    if len(kernels) == 0 or len(images) == 0:
        raise DomainError("need at least one kernel and one image")
    if sched is None:
        from .diffusion import desk_schedule

        sched = desk_schedule()
    kernel_scale = default_kernel_scale(arch.kernel_size) if kernel_scale is None else kernel_scale
    params = init_params(arch, cfg.seed) if params is None else params
    theta = params.vector.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    ema = theta.copy() if cfg.ema_decay > 0 else None
    losses = np.empty(cfg.iterations)
    curve = []
    first = None
    above = 0

    for it in range(cfg.iterations):
        rng = np.random.default_rng([cfg.seed, it, 0])
        k0, y = make_batch(kernels, images, arch, cfg.batch_size, cfg.noise_std, kernel_scale, rng)
        loss, grad = loss_and_grad(params.with_vector(theta), k0, y, sched, seed=[cfg.seed, it, 1])
        losses[it] = loss
        first = loss if first is None else first
        above = above + 1 if loss > 1e3 * first else 0
        if above >= 1000:
            raise NumericalAbort(f"training diverged: loss {loss:.3g} vs initial {first:.3g}", iteration=it)

        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        mhat = m / (1 - cfg.beta1 ** (it + 1))
        vhat = v / (1 - cfg.beta2 ** (it + 1))
        theta = theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if ema is not None:
            ema = cfg.ema_decay * ema + (1 - cfg.ema_decay) * theta

        if (it + 1) % cfg.log_every == 0:
            curve.append((it + 1, float(losses[it + 1 - cfg.log_every : it + 1].mean())))
            if progress is not None:
                progress(it + 1, curve[-1][1])

    final = ema if ema is not None else theta
    return TrainResult(params.with_vector(final), curve, losses)


def smoothed(values, window):
    """Trailing moving average; the first ``window - 1`` entries are dropped."""
    values = np.asarray(values, dtype=float)
    c = np.cumsum(np.concatenate([[0.0], values]))
    return (c[window:] - c[:-window]) / window


# --- checkpoints ----------------------------------------------------------

CKPT_MAGIC = b"KDNN"
CKPT_VERSION = 1
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


def save_checkpoint(path, denoiser):
    """Write arch, schedule, kernel scale and parameters to ``path``.

    Parameters are stored as little-endian float64 so the round trip is
    exact.
    """
    arch_blob = json.dumps(denoiser.arch.to_dict(), sort_keys=True).encode()
    sched_blob = json.dumps(denoiser.sched.descriptor(), sort_keys=True).encode()
    payload = np.ascontiguousarray(denoiser.params.vector, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(_U32.pack(CKPT_VERSION))
        for blob in (arch_blob, sched_blob):
            fh.write(_U32.pack(len(blob)))
            fh.write(blob)
        fh.write(_F64.pack(denoiser.kernel_scale))
        fh.write(_U32.pack(denoiser.params.param_count))
        fh.write(payload)


def load_checkpoint(path, expected_arch=None):
    """Read a checkpoint written by :func:`save_checkpoint`.

    If ``expected_arch`` is given, any field that differs is reported in the
    raised :class:`FormatError`.
    """
    data = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated {what}", offset=pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    (version,) = _U32.unpack(take(4, "version"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    blobs = []
    for what in ("arch", "schedule"):
        (n,) = _U32.unpack(take(4, f"{what} length"))
        start = pos
        try:
            blobs.append(json.loads(take(n, what)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed {what} descriptor", offset=start) from exc
    arch_dict, sched_dict = blobs
    arch_dict["channels"] = tuple(arch_dict["channels"])
    arch = DenoiserArch(**arch_dict)
    if expected_arch is not None:
        for key, want in asdict(expected_arch).items():
            got = getattr(arch, key)
            if tuple(np.atleast_1d(got)) != tuple(np.atleast_1d(want)):
                raise FormatError(f"arch field {key!r} mismatch: checkpoint has {got}, expected {want}")
    (kernel_scale,) = _F64.unpack(take(8, "kernel scale"))
    (count,) = _U32.unpack(take(4, "parameter count"))
    if count != param_count(arch):
        raise FormatError(f"parameter count {count} does not match arch ({param_count(arch)})", offset=pos - 4)
    vector = np.frombuffer(take(8 * count, "parameters"), dtype="<f8").astype(float)
    if pos != len(data):
        raise FormatError("trailing bytes after parameters", offset=pos)
    sched = DiffusionSchedule(**sched_dict)
    return Denoiser(DenoiserParams(arch, vector), sched, kernel_scale)

