"""Spatially invariant blur: convolution, noise, motion kernels, datasets.

Images are 2D float arrays, grayscale, nominally in ``[0, 1]``.  Kernels are
odd-sized square arrays, non-negative, summing to one.  Convolution is true
convolution (kernel flipped) with the kernel centre at ``K // 2``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .errors import DomainError, FormatError

BOUNDARIES = ("symmetric", "circular")
_PAD_MODE = {"symmetric": "symmetric", "circular": "wrap"}


def pad_for_kernel(x, ksize, boundary="symmetric"):
    r = ksize // 2
    return np.pad(x, r, mode=_PAD_MODE[boundary])


def convolve(x, k, boundary="symmetric"):
    """Same-size convolution of image ``x`` with kernel ``k``.

    The image is extended by ``K // 2`` pixels (``symmetric``: mirrored with
    the edge pixel repeated; ``circular``: wrapped) and valid-convolved in the
    frequency domain.
    """
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    _check_shapes(x, k, boundary)
    return fftconvolve(pad_for_kernel(x, k.shape[0], boundary), k, mode="valid")


def convolve_direct(x, k, boundary="symmetric"):
    """Spatial-domain twin of :func:`convolve` (sliding-window sum)."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=float)
    _check_shapes(x, k, boundary)
    windows = np.lib.stride_tricks.sliding_window_view(pad_for_kernel(x, k.shape[0], boundary), k.shape)
    return np.einsum("ijkl,kl->ij", windows, k[::-1, ::-1])


def _check_shapes(x, k, boundary):
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}; expected one of {BOUNDARIES}")
    if x.ndim != 2 or k.ndim != 2:
        raise DomainError("image and kernel must be 2D")
    if k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise DomainError(f"kernel must be square with odd size, got {k.shape}")
    if k.shape[0] > min(x.shape):
        raise DomainError(f"kernel of size {k.shape[0]} is larger than image {x.shape}")


def pad_adjoint(g, r, boundary="symmetric"):
    """Adjoint of ``np.pad(x, r, mode)``: fold the border back onto ``x``."""
    h, w = g.shape[0] - 2 * r, g.shape[1] - 2 * r
    mode = _PAD_MODE[boundary]
    rows = np.pad(np.arange(h), r, mode=mode)
    cols = np.pad(np.arange(w), r, mode=mode)
    out = np.zeros((h, w))
    np.add.at(out, (rows[:, None], cols[None, :]), g)
    return out


def add_noise(y, noise_std, seed):
    """Add i.i.d. Gaussian noise; the result is not clipped."""
    if noise_std < 0:
        raise DomainError("noise_std must be non-negative")
    y = np.asarray(y, dtype=float)
    if noise_std == 0:
        return y.copy()
    rng = np.random.default_rng(seed)
    return y + noise_std * rng.standard_normal(y.shape)


def clip_unit(x):
    return np.clip(x, 0.0, 1.0)


def impulse(size):
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def is_valid_kernel(k, tol=1e-9):
    k = np.asarray(k)
    return bool(np.all(k >= 0) and abs(k.sum() - 1.0) <= tol)


def project_kernel(k):
    """Clip negatives and renormalise; an all-non-positive input gives an impulse."""
    k = np.clip(np.asarray(k, dtype=float), 0.0, None)
    total = k.sum()
    if total <= 0:
        return impulse(k.shape[0])
    return k / total


# --- motion kernels -------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryParams:
    """Random camera-shake trajectory.

    Velocity follows ``v[t+1] = inertia * v[t] + N(0, jitter_std^2 I)``;
    position is the running sum of velocities.
    """

    num_steps: int = 16
    inertia: float = 0.7
    jitter_std: float = 0.35
    smoothing_sigma: float = 0.5

    def __post_init__(self):
        if self.num_steps < 2:
            raise DomainError("num_steps must be at least 2")
        if not 0 <= self.inertia < 1:
            raise DomainError("inertia must lie in [0, 1)")
        if self.jitter_std < 0 or self.smoothing_sigma < 0:
            raise DomainError("jitter_std and smoothing_sigma must be non-negative")


SUPERSAMPLE = 3
MAX_RETRIES = 10


def random_trajectory(params, rng):
    """Centred 2D trajectory of ``num_steps`` points, in pixels."""
    v = np.zeros(2)
    pos = np.zeros((params.num_steps, 2))
    for t in range(1, params.num_steps):
        v = params.inertia * v + params.jitter_std * rng.standard_normal(2)
        pos[t] = pos[t - 1] + v
    return pos - pos.mean(axis=0)


def rasterize(points, size):
    """Bilinear splatting of sub-pixel points onto a ``size x size`` grid.

    Each point is split into ``SUPERSAMPLE`` sub-points along the segment to
    the next point.  Mass falling outside the grid is dropped.
    """
    c = size // 2
    if len(points) > 1:
        frac = np.arange(SUPERSAMPLE) / SUPERSAMPLE
        seg = points[:-1, None, :] + frac[None, :, None] * (points[1:] - points[:-1])[:, None, :]
        pts = np.concatenate([seg.reshape(-1, 2), points[-1:]])
    else:
        pts = points
    k = np.zeros((size, size))
    r = pts[:, 0] + c
    q = pts[:, 1] + c
    r0 = np.floor(r).astype(int)
    q0 = np.floor(q).astype(int)
    fr = r - r0
    fq = q - q0
    for dr, dq, wt in (
        (0, 0, (1 - fr) * (1 - fq)),
        (1, 0, fr * (1 - fq)),
        (0, 1, (1 - fr) * fq),
        (1, 1, fr * fq),
    ):
        rr, qq = r0 + dr, q0 + dq
        ok = (rr >= 0) & (rr < size) & (qq >= 0) & (qq < size)
        np.add.at(k, (rr[ok], qq[ok]), wt[ok])
    return k


def synth_motion_kernel(size, params=TrajectoryParams(), seed=0):
    """Random motion-blur kernel of odd ``size``.

    Retries with a derived seed if the trajectory leaves the grid entirely.
    """
    if size < 3 or size % 2 == 0:
        raise DomainError("kernel size must be odd and at least 3")
    for attempt in range(MAX_RETRIES + 1):
        rng = np.random.default_rng([seed, attempt])
        k = rasterize(random_trajectory(params, rng), size)
        if params.smoothing_sigma > 0:
            k = gaussian_filter(k, params.smoothing_sigma, mode="constant")
        k = np.clip(k, 0.0, None)
        total = k.sum()
        if total > 0:
            return k / total
    raise DomainError(f"trajectory left the {size}x{size} grid after {MAX_RETRIES} retries")


# --- kernel datasets ------------------------------------------------------

MAGIC = b"KDKD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def gen_dataset(count, size, params=TrajectoryParams(), seed=0):
    """``count`` kernels as a float32 array of shape ``(count, size, size)``.

    Kernel ``i`` uses a seed derived from ``(seed, i)``.  Stored values are float32; use
    :func:`as_kernel` to recover a float64 kernel with an exact unit sum.
    """
    if count < 1:
        raise DomainError("count must be at least 1")
    out = np.empty((count, size, size), dtype=np.float32)
    for i in range(count):
        out[i] = synth_motion_kernel(size, params, seed=np.random.SeedSequence([seed, i]).generate_state(1)[0])
    return out


def as_kernel(k):
    k = np.asarray(k, dtype=float)
    return k / k.sum()


def save_dataset(path, kernels):
    kernels = np.asarray(kernels, dtype="<f4")
    if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise DomainError("kernels must have shape (count, size, size)")
    count, size, _ = kernels.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, count, size))
        fh.write(np.ascontiguousarray(kernels).tobytes())


def load_dataset(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", offset=len(data))
    magic, version, count, size = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    expected = _HEADER.size + 4 * count * size * size
    if len(data) != expected:
        raise FormatError(f"payload size mismatch: expected {expected} bytes, found {len(data)}", offset=min(len(data), expected))
    arr = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, size, size)
    return arr.astype(np.float32)


# --- images ---------------------------------------------------------------


def dead_leaves(size, seed, n_shapes=60, rmin=1.5, rmax=None):
    """Synthetic natural-like image: occluding discs with random gray levels.

    Radii follow a ``1/r^3`` law truncated to ``[rmin, rmax]``, which gives
    the scale-invariant edge statistics blur estimators rely on.
    """
    rng = np.random.default_rng(seed)
    rmax = size / 3 if rmax is None else rmax
    img = np.full((size, size), rng.uniform(0.2, 0.8))
    yy, xx = np.mgrid[0:size, 0:size]
    u = rng.uniform(size=n_shapes)
    # inverse CDF of p(r) ~ r^-3 on [rmin, rmax]
    radii = 1.0 / np.sqrt(u / rmax**2 + (1 - u) / rmin**2)
    centres = rng.uniform(-0.1 * size, 1.1 * size, size=(n_shapes, 2))
    levels = rng.uniform(0.0, 1.0, size=n_shapes)
    for r, (cy, cx), g in zip(radii, centres, levels):
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = g
    return img


def quantize(x):
    return np.round(255.0 * np.clip(x, 0.0, 1.0)).astype(np.uint8)


def write_image(path, x):
    """Write an 8-bit grayscale PGM (``.pgm``) or PNG (any other suffix)."""
    path = Path(path)
    q = quantize(x)
    if path.suffix.lower() == ".pgm":
        h, w = q.shape
        path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())
    else:
        from PIL import Image

        Image.fromarray(q, mode="L").save(path, format="PNG")


def read_image(path):
    """Read a grayscale PGM/PNG image as float64 in ``[0, 1]``."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=float) / 255.0
