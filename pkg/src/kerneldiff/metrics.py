"""Image and kernel quality measures: PSNR, SSIM, MNC, and report tables."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate, fftconvolve

from .errors import DomainError

SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _pair(x, ref):
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise DomainError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, peak=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    x, ref = _pair(x, ref)
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax**2) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, peak=1.0):
    """Mean single-scale SSIM over all fully covered 11x11 Gaussian windows."""
    x, ref = _pair(x, ref)
    if min(x.shape) < SSIM_WIN:
        raise DomainError(f"image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    w = gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(a):
        return fftconvolve(a, w, mode="valid")

    mx, my = filt(x), filt(ref)
    sxx = filt(x * x) - mx * mx
    syy = filt(ref * ref) - my * my
    sxy = filt(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def mnc(k_est, k_true):
    """Maximum over all 2D shifts of the normalised cross-correlation.

    Shifted-out entries are zero-filled.  Invariant to positive rescaling of
    either kernel.
    """
    a, b = _pair(k_est, k_true)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DomainError("kernel with zero norm")
    return float(correlate(a, b, mode="full", method="direct").max() / (na * nb))


# --- reports --------------------------------------------------------------

REPORT_COLUMNS = ["id", "psnr_db", "ssim", "mnc", "final_residual", "lpips", "fid"]


@dataclass
class EvalReport:
    """Per-image metric rows plus their arithmetic means.

    ``lpips`` and ``fid`` columns are always written empty so external tools
    can fill them in.
    """

    rows: list = field(default_factory=list)

    def add(self, id, psnr_db, ssim, mnc=math.nan, final_residual=math.nan):
        self.rows.append(
            {"id": str(id), "psnr_db": float(psnr_db), "ssim": float(ssim), "mnc": float(mnc), "final_residual": float(final_residual)}
        )

    def mean(self, key):
        return float(np.mean([r[key] for r in self.rows]))

    def means(self):
        return {k: self.mean(k) for k in ("psnr_db", "ssim", "mnc", "final_residual")}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(REPORT_COLUMNS)
            for r in self.rows:
                out.writerow([r["id"], *(_fmt(r[k]) for k in REPORT_COLUMNS[1:5]), "", ""])
            m = self.means()
            out.writerow(["MEAN", *(_fmt(m[k]) for k in REPORT_COLUMNS[1:5]), "", ""])


def _fmt(v):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"
