"""One-dimensional pulse deconvolution.

A unit-height pulse ``x_{a,w}`` starting at ``a`` with width ``w`` is blurred
by a sampled Gaussian ``k_sigma`` and corrupted by white noise.  The three
scalars ``(a, w, sigma)`` are the whole unknown, which makes it possible to
look at the joint loss surface directly and to compare alternating
minimisation against estimating ``sigma`` first from its marginal.

Pulses use partial-area sampling: sample ``i`` covers ``[i, i + 1)`` and holds
the length of its overlap with ``[a, a + w)``.  This keeps every loss below
continuous in ``a`` and ``w``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# lower ends of the open intervals w > 0 and sigma > 0 used by the line searches
W_MIN = 1e-3
SIGMA_MIN = 1e-3

GRID_STEP = 0.5


@dataclass(frozen=True)
class ToyProblem:
    """A pulse deconvolution instance together with its parameter box."""

    n_samples: int = 128
    a_true: float = 64.0
    w_true: float = 10.0
    sigma_true: float = 1.5
    noise_std: float = 0.01
    seed: int = 0
    a_max: float = 96.0
    w_max: float = 32.0
    sigma_max: float = 3.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise DomainError("n_samples must be at least 2")
        if not self.w_true > 0 or not self.sigma_true > 0:
            raise DomainError("w_true and sigma_true must be positive")
        if not 0 <= self.a_true <= self.n_samples - self.w_true:
            raise DomainError("pulse does not fit inside the signal")
        if self.noise_std < 0:
            raise DomainError("noise_std must be non-negative")
        if self.a_max + self.w_max > self.n_samples:
            raise DomainError("parameter box exceeds the signal length")

    @property
    def truth(self):
        return (self.a_true, self.w_true, self.sigma_true)

    @property
    def kernel_radius(self):
        # fixed for the whole box so the loss stays continuous in sigma
        return max(1, math.ceil(4 * self.sigma_max))

    def in_bounds(self, a, w, sigma):
        return (
            0 <= a <= self.a_max
            and 0 < w <= self.w_max
            and a + w <= self.n_samples
            and 0 < sigma <= self.sigma_max
        )

    def check_bounds(self, a, w, sigma):
        if not self.in_bounds(a, w, sigma):
            raise DomainError(f"(a={a}, w={w}, sigma={sigma}) outside the parameter box")


DEFAULT_PROBLEM = ToyProblem()


@dataclass
class ToySurfaceGrid:
    """Joint loss sampled on a 2D slice through parameter space.

    ``loss_values[i, j]`` belongs to ``truth + axis1_values[i] * direction1 +
    axis2_values[j] * direction2``; NaN marks points outside the box.
    """

    axis1_values: np.ndarray
    axis2_values: np.ndarray
    loss_values: np.ndarray
    direction1: np.ndarray
    direction2: np.ndarray
    origin: np.ndarray

    def point(self, i, j):
        return self.origin + self.axis1_values[i] * self.direction1 + self.axis2_values[j] * self.direction2


@dataclass
class AltMinResult:
    a: float
    w: float
    sigma: float
    loss: float
    trajectory: list = field(default_factory=list)


def synth_pulse(a, w, n):
    """Unit pulse on ``[a, a + w)`` sampled by partial area.

    >>> synth_pulse(10.5, 2, 16)[9:14]
    array([0. , 0.5, 1. , 0.5, 0. ])
    """
    if not (w > 0 and a >= 0 and a + w <= n):
        raise DomainError(f"pulse (a={a}, w={w}) does not fit in {n} samples")
    return _step(a, n) - _step(a + w, n)


def _step(s, n):
    # overlap of [i, i + 1) with [s, inf)
    return np.clip(np.arange(1, n + 1, dtype=float) - s, 0.0, 1.0)


def gauss_kernel_1d(sigma, radius):
    """Gaussian sampled at integer offsets ``-radius..radius``, unit sum."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if radius < 1:
        raise DomainError("radius must be at least 1")
    offsets = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def blur_1d(x, k):
    # zero boundary, output aligned with the input
    return np.convolve(x, k, mode="same")


def toy_forward(prob=DEFAULT_PROBLEM):
    """Observation ``y = k_sigma * x_{a,w} + noise`` for ``prob``."""
    x = synth_pulse(prob.a_true, prob.w_true, prob.n_samples)
    y = blur_1d(x, gauss_kernel_1d(prob.sigma_true, prob.kernel_radius))
    if prob.noise_std > 0:
        rng = np.random.default_rng(prob.seed)
        y = y + prob.noise_std * rng.standard_normal(prob.n_samples)
    return y


def joint_loss(a, w, sigma, y, prob=DEFAULT_PROBLEM):
    """Squared residual ``||y - x_{a,w} * k_sigma||^2``."""
    prob.check_bounds(a, w, sigma)
    return _loss(a, w, sigma, y, prob)


def _loss(a, w, sigma, y, prob):
    pred = blur_1d(synth_pulse(a, w, prob.n_samples), gauss_kernel_1d(sigma, prob.kernel_radius))
    r = y - pred
    return float(r @ r)


# --- alternating minimisation ------------------------------------------------


def golden_section(f, lo, hi, tol=1e-6, max_evals=80):
    """Golden-section search for a minimiser of ``f`` on ``[lo, hi]``.

    Returns ``(x, f(x))`` for the best point evaluated.  ``f`` is assumed
    unimodal; on a multimodal function the search settles in one basin.
    """
    c = hi - GOLDEN * (hi - lo)
    d = lo + GOLDEN * (hi - lo)
    fc, fd = f(c), f(d)
    best = min((fc, c), (fd, d))
    evals = 2
    while hi - lo > tol and evals < max_evals:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - GOLDEN * (hi - lo)
            fc = f(c)
            best = min(best, (fc, c))
        else:
            lo, c, fc = c, d, fd
            d = lo + GOLDEN * (hi - lo)
            fd = f(d)
            best = min(best, (fd, d))
        evals += 1
    return best[1], best[0]


def alt_min(y, init, max_iters=100, prob=DEFAULT_PROBLEM, tol=1e-10, bracket_fraction=0.1):
    """Alternating minimisation of the joint loss.

    Each iteration updates the image block ``(a, w)`` one coordinate at a
    time and then the kernel width ``sigma``, each by a golden-section line
    search.  The search bracket is centred on the current value, spans
    ``bracket_fraction`` of the coordinate's range on either side and is
    clipped to the box; ``bracket_fraction=1`` searches the whole box.  A
    coordinate move is kept only if it lowers the loss, so the recorded
    trajectory is non-increasing.  Stops when an iteration improves the loss
    by less than ``tol``.
    """
    a, w, sigma = (float(v) for v in init)
    prob.check_bounds(a, w, sigma)
    n = prob.n_samples
    loss = _loss(a, w, sigma, y, prob)
    trajectory = [(a, w, sigma, loss)]

    for _ in range(max_iters):
        start = loss

        lo, hi = _bracket(a, 0.0, min(prob.a_max, n - w), prob.a_max, bracket_fraction)
        cand, val = golden_section(lambda v: _loss(v, w, sigma, y, prob), lo, hi)
        if val < loss:
            a, loss = cand, val
        lo, hi = _bracket(w, W_MIN, min(prob.w_max, n - a), prob.w_max, bracket_fraction)
        cand, val = golden_section(lambda v: _loss(a, v, sigma, y, prob), lo, hi)
        if val < loss:
            w, loss = cand, val
        lo, hi = _bracket(sigma, SIGMA_MIN, prob.sigma_max, prob.sigma_max, bracket_fraction)
        cand, val = golden_section(lambda v: _loss(a, w, v, y, prob), lo, hi)
        if val < loss:
            sigma, loss = cand, val

        trajectory.append((a, w, sigma, loss))
        if start - loss < tol:
            break

    return AltMinResult(a, w, sigma, loss, trajectory)


def _bracket(x, lo, hi, span, fraction):
    half = fraction * span
    return max(lo, x - half), min(hi, x + half)


def random_init(rng, prob=DEFAULT_PROBLEM):
    a = rng.uniform(0.0, prob.a_max)
    w = rng.uniform(W_MIN, min(prob.w_max, prob.n_samples - a))
    sigma = rng.uniform(SIGMA_MIN, prob.sigma_max)
    return a, w, sigma


def multistart_alt_min(y, n_starts=100, seed=0, prob=DEFAULT_PROBLEM, max_iters=100, threads=1, bracket_fraction=0.1):
    """Run :func:`alt_min` from ``n_starts`` uniform random initialisations.

    Restart ``i`` draws its initial point from ``default_rng([seed, i])`` so
    the outcome does not depend on ``threads``.  Returns a list of
    ``(init, AltMinResult)`` pairs in restart order.
    """
    inits = [random_init(np.random.default_rng([seed, i]), prob) for i in range(n_starts)]

    def run(init):
        return init, alt_min(y, init, max_iters=max_iters, prob=prob, bracket_fraction=bracket_fraction)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(run, inits))
    return [run(init) for init in inits]


def failure_fraction(sigmas, sigma_true, tol=0.3):
    sigmas = np.asarray(sigmas, dtype=float)
    return float(np.mean(np.abs(sigmas - sigma_true) > tol))


# --- kernel-first estimation ---------------------------------------------------


def default_sigma_grid(step=0.05, sigma_max=3.0):
    count = int(round(sigma_max / step))
    return np.round(step * np.arange(1, count + 1), 12)


def integration_grid(prob=DEFAULT_PROBLEM):
    """The ``(a, w)`` grid the marginals integrate over."""
    a = GRID_STEP * np.arange(int(round(prob.a_max / GRID_STEP)) + 1)
    w = GRID_STEP * np.arange(1, int(round(prob.w_max / GRID_STEP)) + 1)
    return a, w


def grid_losses(y, sigma, prob=DEFAULT_PROBLEM):
    """Joint loss over the whole integration grid at fixed ``sigma``.

    Returns an array indexed ``[a_index, w_index]``.  Uses linearity: a
    blurred pulse is the difference of two blurred steps, and all step
    positions lie on the same half-sample lattice.
    """
    n = prob.n_samples
    a_vals, w_vals = integration_grid(prob)
    k = gauss_kernel_1d(sigma, prob.kernel_radius)
    starts = GRID_STEP * np.arange(int(round(n / GRID_STEP)) + 1)
    steps = np.clip(np.arange(1, n + 1, dtype=float)[None, :] - starts[:, None], 0.0, 1.0)
    blurred = np.stack([blur_1d(s, k) for s in steps])

    ia = np.arange(a_vals.size)
    iw = np.arange(1, w_vals.size + 1)
    pulses = blurred[ia][:, None, :] - blurred[ia[:, None] + iw[None, :]]
    r = np.asarray(y, dtype=float) - pulses
    return np.einsum("ijk,ijk->ij", r, r)


def _likelihood_scale(noise_std, literal_denominator=False):
    if not noise_std > 0:
        raise DomainError("noise_std must be positive to form a likelihood")
    # literal form divides by 2*beta^2 with beta the noise variance
    return 2.0 * noise_std**4 if literal_denominator else 2.0 * noise_std**2


def marginal_sigma_grid(y, sigma_grid, noise_std, prob=DEFAULT_PROBLEM):
    """Log of ``sum_{a,w} exp(-||y - x_{a,w} * k_sigma||^2 / (2 noise_std^2))``.

    Brute-force marginal over the integration grid, one value per entry of
    ``sigma_grid``, evaluated with log-sum-exp.
    """
    scale = _likelihood_scale(noise_std)
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if np.any(sigma_grid <= 0):
        raise DomainError("sigma grid must be strictly positive")
    return np.array([logsumexp(-grid_losses(y, s, prob) / scale) for s in sigma_grid])


def marginal_sigma_laplace(y, sigma_grid, noise_std, prob=DEFAULT_PROBLEM, literal_denominator=False):
    """Log of the mode-only approximation to the marginal of ``sigma``.

    For each ``sigma`` the image parameters are fitted by exhaustive search
    on the integration grid and only the best fit contributes.  The Laplace
    volume factor is treated as constant and dropped.
    """
    scale = _likelihood_scale(noise_std, literal_denominator)
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if np.any(sigma_grid <= 0):
        raise DomainError("sigma grid must be strictly positive")
    return np.array([-grid_losses(y, s, prob).min() / scale for s in sigma_grid])


def sigma_argmax(sigma_grid, log_values, eq12_literal=False):
    """Pick the kernel width from a marginal curve.

    ``eq12_literal`` takes the arg-min instead, reproducing the printed sign
    of the brute-force formula; that reading selects the worst fit and is
    kept only for inspection.
    """
    idx = np.argmin(log_values) if eq12_literal else np.argmax(log_values)
    return float(np.asarray(sigma_grid)[idx])


def count_local_maxima(values):
    """Number of strict local maxima of a sampled curve, endpoints included."""
    v = np.asarray(values, dtype=float)
    if v.size == 1:
        return 1
    left = np.concatenate([[-np.inf], v[:-1]])
    right = np.concatenate([v[1:], [-np.inf]])
    return int(np.sum((v > left) & (v > right)))


def fit_image_params(y, sigma, prob=DEFAULT_PROBLEM):
    """Grid-search ``(a, w)`` minimising the joint loss at fixed ``sigma``."""
    losses = grid_losses(y, sigma, prob)
    ia, iw = np.unravel_index(np.argmin(losses), losses.shape)
    a_vals, w_vals = integration_grid(prob)
    return float(a_vals[ia]), float(w_vals[iw]), float(losses[ia, iw])


def kernel_first_estimate(y, noise_std, prob=DEFAULT_PROBLEM, sigma_grid=None):
    """Estimate ``sigma`` from its approximate marginal, then ``(a, w)``.

    Returns ``(sigma, a, w)``.  The arg-max of the mode approximation is the
    arg-min of the inner best-fit loss for every positive noise level, so
    ``noise_std = 0`` is handled as that limit.
    """
    if sigma_grid is None:
        sigma_grid = default_sigma_grid(sigma_max=prob.sigma_max)
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    if noise_std > 0:
        sigma = sigma_argmax(sigma_grid, marginal_sigma_laplace(y, sigma_grid, noise_std, prob))
    else:
        best = [grid_losses(y, s, prob).min() for s in sigma_grid]
        sigma = float(sigma_grid[int(np.argmin(best))])
    a, w, _ = fit_image_params(y, sigma, prob)
    return sigma, a, w


# --- random-projection landscape --------------------------------------------


def projection_directions(seed, scales=(64.0, 32.0, 1.0)):
    """Two orthogonal random directions in ``(a, w, sigma)`` space."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, 3))
    t1 = z[0] * np.asarray(scales)
    t2 = z[1] * np.asarray(scales)
    t2 = t2 - (t2 @ t1) / (t1 @ t1) * t1
    return t1, t2


def projected_surface(y, seed=0, half_extent=0.5, resolution=51, prob=DEFAULT_PROBLEM):
    """Joint loss on a random 2D slice centred on the true parameters."""
    if resolution < 2:
        raise DomainError("resolution must be at least 2")
    t1, t2 = projection_directions(seed)
    axis = np.linspace(-half_extent, half_extent, resolution)
    origin = np.asarray(prob.truth, dtype=float)
    losses = np.full((resolution, resolution), np.nan)
    for i, u in enumerate(axis):
        for j, v in enumerate(axis):
            a, w, sigma = origin + u * t1 + v * t2
            if prob.in_bounds(a, w, sigma):
                losses[i, j] = _loss(a, w, sigma, y, prob)
    return ToySurfaceGrid(axis, axis.copy(), losses, t1, t2, origin)


# --- CSV output ----------------------------------------------------------------


def _fmt(v):
    return f"{v:.9g}"


def write_surface_csv(path, grid):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["axis1", "axis2", "loss"])
        for i, u in enumerate(grid.axis1_values):
            for j, v in enumerate(grid.axis2_values):
                out.writerow([_fmt(u), _fmt(v), _fmt(grid.loss_values[i, j])])


def write_marginal_csv(path, sigma_grid, log_values):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sigma", "log_value"])
        for s, v in zip(sigma_grid, log_values):
            out.writerow([_fmt(s), _fmt(v)])


def write_multistart_csv(path, outcomes, summary=None):
    """One row per restart: initial triple, final triple, final loss.

    ``summary`` is an optional dict appended as a final ``SUMMARY`` row.
    """
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["kind", "a0", "w0", "sigma0", "a", "w", "sigma", "loss"])
        for init, res in outcomes:
            out.writerow(["alt_min", *map(_fmt, init), *map(_fmt, (res.a, res.w, res.sigma, res.loss))])
        if summary is not None:
            out.writerow(["SUMMARY", *(f"{k}={_fmt(v)}" for k, v in summary.items())])
