"""Differentiable non-blind deconvolution and the reblurring loss.

The solver is regularised Wiener (Tikhonov) deconvolution,

    x = IFFT( conj(K) Y / (|K|^2 + lam) ),

computed on an edge-replicated extension of ``y`` and cropped back.  It is
the exact minimiser of ``||y - k * x||^2 + lam ||x||^2`` on the extended
circular domain and is smooth in the kernel, so the reblurring loss
``||y - k * F(y, k)||^2`` has an exact gradient in ``k``.  The gradient is
assembled by hand: symmetric-boundary convolution, its padding, the crop,
and the frequency-domain division are all pushed through in reverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.fft import fft2, ifft2
from scipy.signal import fftconvolve

from . import blur
from .errors import DomainError


@dataclass(frozen=True)
class WienerConfig:
    lam: float = 1e-3
    pad_width: int | None = None  # None pads by the kernel size

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lam must be positive")

    def width(self, ksize):
        p = ksize if self.pad_width is None else self.pad_width
        if p < ksize // 2:
            raise DomainError(f"pad_width {p} is smaller than half the kernel size {ksize}")
        return p


def embed_kernel(k, shape):
    """Place ``k`` in a zero array of ``shape`` with its centre at the origin."""
    ksize = k.shape[0]
    c = ksize // 2
    out = np.zeros(shape)
    out[:ksize, :ksize] = k
    return np.roll(out, (-c, -c), axis=(0, 1))


def embed_kernel_adjoint(g, ksize):
    c = ksize // 2
    return np.roll(g, (c, c), axis=(0, 1))[:ksize, :ksize].copy()


def _check(y, k):
    y = np.asarray(y, dtype=float)
    k = np.asarray(k, dtype=float)
    if y.ndim != 2 or k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise DomainError("expected a 2D image and an odd square kernel")
    return y, k


def _spectra(y, k, cfg):
    p = cfg.width(k.shape[0])
    yp = np.pad(y, p, mode="edge")
    kf = fft2(embed_kernel(k, yp.shape))
    yf = fft2(yp)
    denom = (kf.real**2 + kf.imag**2) + cfg.lam
    return p, yf, kf, denom


def wiener_solve(y, k, cfg=WienerConfig()):
    """Regularised Wiener estimate of the sharp image, same size as ``y``."""
    y, k = _check(y, k)
    p, yf, kf, denom = _spectra(y, k, cfg)
    xp = ifft2(np.conj(kf) * yf / denom).real
    return xp[p : p + y.shape[0], p : p + y.shape[1]]


def reblur_residual(y, k, x, method="fft"):
    conv = blur.convolve if method == "fft" else blur.convolve_direct
    return y - conv(x, k, boundary="symmetric")


def reblur_loss(y, k, cfg=WienerConfig(), method="fft"):
    """``||y - k * F(y, k)||^2`` with symmetric-boundary reblurring.

    ``k`` may be any real array; no sign or normalisation is assumed.
    ``method="direct"`` reblurs with the spatial sliding-window sum instead
    of the FFT.
    """
    y, k = _check(y, k)
    r = reblur_residual(y, k, wiener_solve(y, k, cfg), method)
    return float(np.sum(r * r))


def reblur_loss_and_grad(y, k, cfg=WienerConfig(), through_solver=True):
    """Reblurring loss and its gradient with respect to ``k``.

    With ``through_solver=False`` the deconvolved image is held fixed and
    only the explicit reblurring path contributes.
    """
    y, k = _check(y, k)
    ksize = k.shape[0]
    c = ksize // 2
    h, w = y.shape

    p, yf, kf, denom = _spectra(y, k, cfg)
    xp = ifft2(np.conj(kf) * yf / denom).real
    x = xp[p : p + h, p : p + w]
    xpad = blur.pad_for_kernel(x, ksize, "symmetric")
    r = y - fftconvolve(xpad, k, mode="valid")
    loss = float(np.sum(r * r))

    g_out = -2.0 * r
    # explicit dependence through the reblurring convolution
    grad = fftconvolve(xpad, g_out[::-1, ::-1], mode="valid")[::-1, ::-1]
    if not through_solver:
        return loss, grad

    # back through the convolution and its symmetric padding to x
    g_x = blur.pad_adjoint(fftconvolve(g_out, k[::-1, ::-1], mode="full"), c, "symmetric")
    # back through the crop and the Wiener division to the embedded kernel
    g_xp = np.zeros_like(xp)
    g_xp[p : p + h, p : p + w] = g_x
    gxf_conj = np.conj(fft2(g_xp))
    d2 = denom * denom
    holo = -gxf_conj * yf * np.conj(kf) ** 2 / d2
    anti = gxf_conj * yf * cfg.lam / d2
    g_kpad = fft2(holo).real / holo.size + ifft2(anti).real
    grad = grad + embed_kernel_adjoint(g_kpad, ksize)
    return loss, grad


def reblur_loss_grad(y, k, cfg=WienerConfig(), through_solver=True):
    """Gradient of :func:`reblur_loss` with respect to ``k`` (``K x K``)."""
    return reblur_loss_and_grad(y, k, cfg, through_solver)[1]


def quadratic_objective(x, y, k, cfg=WienerConfig()):
    """``||y - k * x||^2 + lam ||x||^2`` on the solver's extended circular domain.

    ``x`` and the edge-replicated ``y`` both live on the extended grid.  Used
    to check that :func:`wiener_solve` is its minimiser.
    """
    p = cfg.width(k.shape[0])
    yp = np.pad(y, p, mode="edge")
    kx = ifft2(fft2(embed_kernel(k, yp.shape)) * fft2(x)).real
    r = yp - kx
    return float(np.sum(r * r) + cfg.lam * np.sum(x * x))


def wiener_solve_extended(y, k, cfg=WienerConfig()):
    """Like :func:`wiener_solve` but returns the uncropped extended estimate."""
    y, k = _check(y, k)
    _, yf, kf, denom = _spectra(y, k, cfg)
    return ifft2(np.conj(kf) * yf / denom).real
