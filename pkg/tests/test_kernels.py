import math
import os
import subprocess
import sys

import numpy as np
import pytest

from turngrab import kernels
from turngrab._accel import NUMBA_AVAILABLE


def test_conv_hand_example():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    w = np.ones((3, 1, 1))
    for f in (kernels.conv1d_forward_np, kernels.conv1d_forward_nb):
        np.testing.assert_array_equal(f(x, w, np.zeros(1)).ravel(), [3.0, 6.0, 5.0])


def test_conv_centred_identity():
    x = np.abs(np.random.default_rng(0).normal(size=(2, 10, 4)))
    w = np.zeros((3, 4, 4))
    w[1] = np.eye(4)
    y = np.maximum(kernels.conv1d_forward(x, w, np.zeros(4)), 0.0)
    np.testing.assert_array_equal(y, x)


@pytest.mark.parametrize("K", [1, 2, 3, 4, 5])
def test_conv_matches_direct_loop(K):
    rng = np.random.default_rng(K)
    x = rng.normal(size=(2, 9, 3))
    w = rng.normal(size=(K, 3, 5))
    b = rng.normal(size=5)
    left = (K - 1) // 2
    expect = np.tile(b, (2, 9, 1))
    for bi in range(2):
        for t in range(9):
            for k in range(K):
                s = t + k - left
                if 0 <= s < 9:
                    expect[bi, t] += x[bi, s] @ w[k]
    np.testing.assert_allclose(kernels.conv1d_forward_np(x, w, b), expect, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(kernels.conv1d_forward_nb(x, w, b), expect, rtol=1e-13, atol=1e-13)


def test_conv_backward_finite_differences():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 8, 19))
    w = rng.normal(size=(3, 19, 4))
    b = rng.normal(size=4)
    gy = rng.normal(size=(1, 8, 4))
    gx, gw, gb = kernels.conv1d_backward(x, w, gy)
    f = lambda x_, w_, b_: float(np.sum(kernels.conv1d_forward(x_, w_, b_) * gy))
    h = 1e-6
    for arr, g in ((x, gx), (w, gw), (b, gb)):
        flat = arr.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 25)):
            old = flat[i]
            flat[i] = old + h
            up = f(x, w, b)
            flat[i] = old - h
            dn = f(x, w, b)
            flat[i] = old
            num = (up - dn) / (2 * h)
            assert abs(g.reshape(-1)[i] - num) <= 1e-4 * max(abs(num), 1e-6)


def test_lstm_zero_weights_give_zero_states():
    x = np.random.default_rng(2).normal(size=(2, 7, 3))
    h, c, _ = kernels.lstm_forward(x, np.zeros((3 + 4, 16)), np.zeros(16))
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_lstm_single_scalar_step():
    sig = lambda z: 1.0 / (1.0 + math.exp(-z))
    # gate order i, f, g, o; rows: input weight, recurrent weight
    W = np.array([[0.1, 0.2, 0.3, 0.4], [0.5, 0.6, 0.7, 0.8]])
    b = np.array([0.05, -0.05, 0.1, 0.0])
    x = np.array([[[0.5]]])
    i, g, o = sig(0.1 * 0.5 + 0.05), math.tanh(0.3 * 0.5 + 0.1), sig(0.4 * 0.5)
    c1 = i * g
    h1 = o * math.tanh(c1)
    for f in (kernels.lstm_forward_np, kernels.lstm_forward_nb):
        h, c, _ = f(x, W, b)
        assert round(h[0, 1, 0], 6) == round(h1, 6)
        assert abs(h[0, 1, 0] - h1) < 1e-15 and abs(c[0, 1, 0] - c1) < 1e-15
    assert round(h1, 6) == 0.070309


def test_lstm_backward_finite_differences():
    rng = np.random.default_rng(3)
    B, T, D, H = 2, 6, 3, 4
    x = rng.normal(size=(B, T, D))
    W = rng.normal(size=(D + H, 4 * H)) * 0.5
    b = rng.normal(size=4 * H) * 0.5
    gh = rng.normal(size=(B, T, H))
    h, c, acts = kernels.lstm_forward(x, W, b)
    gx, gW, gb = kernels.lstm_backward(x, W, h, c, acts, gh)
    f = lambda: float(np.sum(kernels.lstm_forward(x, W, b)[0][:, 1:] * gh))
    step = 1e-6
    for arr, g in ((x, gx), (W, gW), (b, gb)):
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = f()
            flat[i] = old - step
            dn = f()
            flat[i] = old
            num = (up - dn) / (2 * step)
            assert abs(g.reshape(-1)[i] - num) <= 1e-4 * max(abs(num), 1e-6)


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")
def test_numpy_and_numba_paths_agree():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 20, 5))
    w = rng.normal(size=(3, 5, 6))
    b = rng.normal(size=6)
    gy = rng.normal(size=(3, 20, 6))
    np.testing.assert_allclose(kernels.conv1d_forward_np(x, w, b), kernels.conv1d_forward_nb(x, w, b),
                               rtol=1e-12, atol=1e-12)
    for a, c in zip(kernels.conv1d_backward_np(x, w, gy), kernels.conv1d_backward_nb(x, w, gy)):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)
    W = rng.normal(size=(5 + 4, 16)) * 0.5
    bl = rng.normal(size=16)
    out_np = kernels.lstm_forward_np(x, W, bl)
    out_nb = kernels.lstm_forward_nb(x, W, bl)
    for a, c in zip(out_np, out_nb):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)
    gh = rng.normal(size=(3, 20, 4))
    for a, c in zip(kernels.lstm_backward_np(x, W, *out_np, gh), kernels.lstm_backward_nb(x, W, *out_nb, gh)):
        np.testing.assert_allclose(a, c, rtol=1e-12, atol=1e-12)
    img = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
    A = np.array([[0.8, 0.1, 2.5], [-0.05, 0.9, 1.5]])
    np.testing.assert_array_equal(kernels.warp_bilinear_np(img, A), kernels.warp_bilinear_nb(img, A))


@pytest.mark.parametrize("flag,backend", [("0", "numpy"), ("1", "numba" if NUMBA_AVAILABLE else "numpy")])
def test_backend_env_flag(flag, backend):
    env = dict(os.environ, TURNGRAB_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from turngrab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == backend


def test_warp_integer_translation_matches_shift():
    ramp = np.arange(6 * 8, dtype=np.uint8).reshape(6, 8, 1).repeat(3, axis=2) * 5
    A = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])  # output (x, y) samples source (x + 1, y)
    expect = np.concatenate([ramp[:, 1:], ramp[:, -1:]], axis=1)
    for f in (kernels.warp_bilinear_np, kernels.warp_bilinear_nb):
        np.testing.assert_array_equal(f(ramp, A), expect)


def test_warp_half_pixel_is_bilinear():
    img = np.zeros((1, 2, 3), dtype=np.uint8)
    img[0, 1] = 100
    A = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]])
    out = kernels.warp_bilinear(img, A)
    assert out[0, 0, 0] == 50 and out[0, 1, 0] == 100
