import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kerneldiff import blur
from kerneldiff.errors import DomainError, FormatError

from oracles import conv2d_loop


def random_kernel(r, K):
    k = r.random((K, K))
    return k / k.sum()


def test_impulse_is_identity():
    x = np.random.default_rng(0).random((20, 17))
    for b in blur.BOUNDARIES:
        assert np.array_equal(blur.convolve_direct(x, blur.impulse(5), b), x)
        np.testing.assert_allclose(blur.convolve(x, blur.impulse(5), b), x, atol=1e-12)


def test_constant_image_preserved(rng):
    x = np.full((16, 16), 0.37)
    y = blur.convolve(x, random_kernel(rng, 7))
    np.testing.assert_allclose(y, 0.37, atol=1e-10)


@pytest.mark.parametrize("boundary", blur.BOUNDARIES)
def test_convolve_matches_loop(rng, boundary):
    x = rng.random((32, 32))
    k = random_kernel(rng, 7)
    ref = conv2d_loop(x, k, boundary)
    assert np.max(np.abs(blur.convolve(x, k, boundary) - ref)) < 1e-8
    assert np.max(np.abs(blur.convolve_direct(x, k, boundary) - ref)) < 1e-8


@given(st.integers(8, 24), st.integers(8, 24), st.sampled_from([1, 3, 5, 7]), st.integers(0, 2**31))
def test_fft_and_direct_agree(h, w, K, seed):
    r = np.random.default_rng(seed)
    x = r.random((h, w))
    k = r.standard_normal((K, K))
    assert np.max(np.abs(blur.convolve(x, k) - blur.convolve_direct(x, k))) < 1e-8


@given(st.floats(-3, 3), st.integers(0, 2**31))
def test_linearity(alpha, seed):
    r = np.random.default_rng(seed)
    x1, x2 = r.random((16, 16)), r.random((16, 16))
    k = random_kernel(r, 5)
    lhs = blur.convolve(alpha * x1 + x2, k)
    rhs = alpha * blur.convolve(x1, k) + blur.convolve(x2, k)
    assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_kernel_too_large():
    with pytest.raises(DomainError):
        blur.convolve(np.zeros((8, 8)), np.ones((9, 9)) / 81)


@given(st.integers(1, 4), st.sampled_from(blur.BOUNDARIES), st.integers(0, 2**31))
def test_pad_adjoint(r, boundary, seed):
    rg = np.random.default_rng(seed)
    x = rg.random((9, 10))
    g = rg.random((9 + 2 * r, 10 + 2 * r))
    lhs = np.sum(np.pad(x, r, mode=blur._PAD_MODE[boundary]) * g)
    assert lhs == pytest.approx(np.sum(x * blur.pad_adjoint(g, r, boundary)), rel=1e-12)


def test_add_noise():
    y = np.full((256, 256), 0.5)
    assert np.array_equal(blur.add_noise(y, 0.0, 1), y)
    a = blur.add_noise(y, 0.05, 7)
    assert np.array_equal(a, blur.add_noise(y, 0.05, 7))
    assert abs(np.var(a - y) / 0.05**2 - 1) < 0.05
    # not clipped
    assert (blur.add_noise(np.ones((64, 64)), 0.1, 0) > 1).any()


def test_degenerate_trajectory_gives_impulse():
    p = blur.TrajectoryParams(num_steps=2, inertia=0.0, jitter_std=0.0, smoothing_sigma=0.0)
    np.testing.assert_array_equal(blur.synth_motion_kernel(7, p, seed=3), blur.impulse(7))


def test_trajectory_params_validation():
    with pytest.raises(DomainError):
        blur.TrajectoryParams(num_steps=1)
    with pytest.raises(DomainError):
        blur.TrajectoryParams(inertia=1.0)


@given(st.integers(0, 2**31), st.sampled_from([3, 5, 11, 15]))
def test_kernels_are_valid(seed, size):
    k = blur.synth_motion_kernel(size, seed=seed)
    assert blur.is_valid_kernel(k)


def test_kernel_ensemble_statistics():
    ks = blur.gen_dataset(1000, 11, seed=11).astype(float)
    support = (ks > 1e-4).sum(axis=(1, 2))
    assert 2 < support.mean() < 121
    ax = np.arange(11)
    mean_k = ks.mean(axis=0)
    cy = np.sum(mean_k.sum(axis=1) * ax) / mean_k.sum()
    cx = np.sum(mean_k.sum(axis=0) * ax) / mean_k.sum()
    assert abs(cy - 5) < 1 and abs(cx - 5) < 1


def test_trajectory_leaving_grid_retries_then_fails():
    # a huge jitter throws every point off a 3x3 grid
    p = blur.TrajectoryParams(num_steps=2, inertia=0.0, jitter_std=1e6, smoothing_sigma=0.0)
    with pytest.raises(DomainError):
        blur.synth_motion_kernel(3, p, seed=0)


def test_dataset_round_trip(tmp_path):
    ks = blur.gen_dataset(100, 11, seed=5)
    path = tmp_path / "k.kd"
    blur.save_dataset(path, ks)
    back = blur.load_dataset(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, ks)
    assert path.read_bytes()[:4] == b"KDKD"


def test_dataset_generation_time():
    t0 = time.perf_counter()
    blur.gen_dataset(2000, 11, seed=0)
    assert time.perf_counter() - t0 < 10


def test_dataset_format_errors(tmp_path):
    good = tmp_path / "g.kd"
    blur.save_dataset(good, blur.gen_dataset(3, 5, seed=0))
    data = good.read_bytes()
    bad = tmp_path / "b.kd"
    bad.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="magic"):
        blur.load_dataset(bad)
    bad.write_bytes(data[:-6])
    with pytest.raises(FormatError, match="offset"):
        blur.load_dataset(bad)
    bad.write_bytes(data[:7])
    with pytest.raises(FormatError, match="header"):
        blur.load_dataset(bad)


def test_dataset_kernels_are_deterministic_and_distinct():
    a = blur.gen_dataset(4, 11, seed=1)
    assert np.array_equal(a, blur.gen_dataset(4, 11, seed=1))
    assert not np.array_equal(a[0], a[1])
    for k in a:
        assert blur.is_valid_kernel(blur.as_kernel(k))


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_image_io_round_trip(tmp_path, suffix):
    x = blur.dead_leaves(24, seed=2)
    path = tmp_path / f"im{suffix}"
    blur.write_image(path, x)
    back = blur.read_image(path)
    np.testing.assert_array_equal(back, blur.quantize(x) / 255.0)


def test_quantize_rounds_and_clips():
    q = blur.quantize(np.array([[-0.5, 0.0, 0.4 / 255, 0.6 / 255, 1.0, 3.0]]))
    assert q.tolist() == [[0, 0, 0, 1, 255, 255]]


def test_project_kernel():
    k = np.array([[-1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, -3.0]])
    p = blur.project_kernel(k)
    assert blur.is_valid_kernel(p)
    assert p[0, 1] == 0.5
    np.testing.assert_array_equal(blur.project_kernel(-np.ones((3, 3))), blur.impulse(3))
