"""Numeric hot loops: temporal convolution, LSTM recurrence, bilinear warp.

Each kernel exists twice, a vectorised numpy version (``*_np``) and a numba
version (``*_nb``). The unsuffixed names are bound to one of them at import
time according to :data:`turngrab._accel.USE_NUMBA`.

Array conventions (all float64 unless noted):

* sequences are ``(B, T, C)``
* conv kernels are ``(K, C_in, C_out)``, biases ``(C_out,)``
* LSTM weights are ``(D + H, 4H)`` acting on ``[x_t, h_{t-1}]``, gate order
  input, forget, cell candidate, output
* images are ``(H, W, 3)`` uint8, affine matrices ``(2, 3)`` mapping output
  pixel ``(x, y, 1)`` to a source coordinate
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit


def same_padding(kernel_size):
    left = (kernel_size - 1) // 2
    return left, kernel_size - 1 - left


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------


def conv1d_forward_np(x, w, b):
    B, T, _ = x.shape
    K = w.shape[0]
    left, right = same_padding(K)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    y = np.empty((B, T, w.shape[2]))
    y[...] = b
    for k in range(K):
        y += xp[:, k:k + T, :] @ w[k]
    return y


def conv1d_backward_np(x, w, gy):
    B, T, C_in = x.shape
    K, _, C_out = w.shape
    left, right = same_padding(K)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    gy2 = gy.reshape(B * T, C_out)
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for k in range(K):
        gw[k] = xp[:, k:k + T, :].reshape(B * T, C_in).T @ gy2
        gxp[:, k:k + T, :] += gy @ w[k].T
    gb = gy2.sum(axis=0)
    return gxp[:, left:left + T, :], gw, gb


@njit(cache=True)
def conv1d_forward_nb(x, w, b):
    B, T, C_in = x.shape
    K, _, C_out = w.shape
    left = (K - 1) // 2
    y = np.empty((B, T, C_out))
    for bi in range(B):
        for t in range(T):
            for o in range(C_out):
                y[bi, t, o] = b[o]
        for k in range(K):
            lo = max(0, left - k)
            hi = min(T, T + left - k)
            if hi <= lo:
                continue
            src = np.ascontiguousarray(x[bi, lo + k - left:hi + k - left, :])
            y[bi, lo:hi, :] += np.dot(src, np.ascontiguousarray(w[k]))
    return y


@njit(cache=True)
def conv1d_backward_nb(x, w, gy):
    B, T, C_in = x.shape
    K, _, C_out = w.shape
    left = (K - 1) // 2
    gx = np.zeros((B, T, C_in))
    gw = np.zeros((K, C_in, C_out))
    gb = np.zeros(C_out)
    for k in range(K):
        wt = np.ascontiguousarray(w[k].T)
        lo = max(0, left - k)
        hi = min(T, T + left - k)
        if hi <= lo:
            continue
        for bi in range(B):
            g = np.ascontiguousarray(gy[bi, lo:hi, :])
            src = np.ascontiguousarray(x[bi, lo + k - left:hi + k - left, :])
            gw[k] += np.dot(src.T.copy(), g)
            gx[bi, lo + k - left:hi + k - left, :] += np.dot(g, wt)
    for bi in range(B):
        for t in range(T):
            for o in range(C_out):
                gb[o] += gy[bi, t, o]
    return gx, gw, gb


# ---------------------------------------------------------------------------
# LSTM (single layer, zero initial state)
# ---------------------------------------------------------------------------


def _sigmoid(z):
    # exp of a non-positive argument only
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def lstm_forward_np(x, W, b):
    """Run one LSTM layer over ``x``.

    Returns ``(h, c, acts)`` where ``h`` and ``c`` are ``(B, T + 1, H)`` with
    the zero initial state at index 0, and ``acts`` is ``(B, T, 4H)`` holding
    the post-nonlinearity gate values.
    """
    B, T, D = x.shape
    H = W.shape[1] // 4
    h = np.zeros((B, T + 1, H))
    c = np.zeros((B, T + 1, H))
    acts = np.empty((B, T, 4 * H))
    Wx, Wh = W[:D], W[D:]
    zx = x @ Wx + b
    for t in range(T):
        z = zx[:, t, :] + h[:, t, :] @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c[:, t + 1] = f * c[:, t] + i * g
        h[:, t + 1] = o * np.tanh(c[:, t + 1])
        acts[:, t, :H] = i
        acts[:, t, H:2 * H] = f
        acts[:, t, 2 * H:3 * H] = g
        acts[:, t, 3 * H:] = o
    return h, c, acts


def lstm_backward_np(x, W, h, c, acts, gh):
    """Backpropagate through time.

    ``gh`` is the ``(B, T, H)`` loss gradient with respect to the layer's
    outputs ``h[:, 1:]``. Returns ``(gx, gW, gb)``.
    """
    B, T, D = x.shape
    H = W.shape[1] // 4
    Wx, Wh = W[:D], W[D:]
    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = acts[:, t, :H]
        f = acts[:, t, H:2 * H]
        g = acts[:, t, 2 * H:3 * H]
        o = acts[:, t, 3 * H:]
        tc = np.tanh(c[:, t + 1])
        dh = gh[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[:, t, :H] = dc * g * i * (1.0 - i)
        dz[:, t, H:2 * H] = dc * c[:, t] * f * (1.0 - f)
        dz[:, t, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, t, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz[:, t] @ Wh.T
    dz2 = dz.reshape(B * T, 4 * H)
    gW = np.empty_like(W)
    gW[:D] = x.reshape(B * T, D).T @ dz2
    gW[D:] = h[:, :T].reshape(B * T, H).T @ dz2
    gb = dz2.sum(axis=0)
    gx = dz @ Wx.T
    return gx, gW, gb


@njit(cache=True)
def _sig(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def lstm_forward_nb(x, W, b):
    B, T, D = x.shape
    H = W.shape[1] // 4
    h = np.zeros((B, T + 1, H))
    c = np.zeros((B, T + 1, H))
    acts = np.empty((B, T, 4 * H))
    Wx = np.ascontiguousarray(W[:D])
    Wh = np.ascontiguousarray(W[D:])
    zx = np.dot(np.ascontiguousarray(x).reshape(B * T, D), Wx).reshape(B, T, 4 * H)
    hprev = np.zeros((B, H))
    for t in range(T):
        z = np.dot(hprev, Wh)
        for bi in range(B):
            for j in range(H):
                i = _sig(zx[bi, t, j] + z[bi, j] + b[j])
                f = _sig(zx[bi, t, H + j] + z[bi, H + j] + b[H + j])
                g = math.tanh(zx[bi, t, 2 * H + j] + z[bi, 2 * H + j] + b[2 * H + j])
                o = _sig(zx[bi, t, 3 * H + j] + z[bi, 3 * H + j] + b[3 * H + j])
                cn = f * c[bi, t, j] + i * g
                c[bi, t + 1, j] = cn
                hn = o * math.tanh(cn)
                h[bi, t + 1, j] = hn
                hprev[bi, j] = hn
                acts[bi, t, j] = i
                acts[bi, t, H + j] = f
                acts[bi, t, 2 * H + j] = g
                acts[bi, t, 3 * H + j] = o
    return h, c, acts


@njit(cache=True)
def lstm_backward_nb(x, W, h, c, acts, gh):
    B, T, D = x.shape
    H = W.shape[1] // 4
    WhT = np.ascontiguousarray(W[D:].T)
    WxT = np.ascontiguousarray(W[:D].T)
    dz = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dzt = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        for bi in range(B):
            for j in range(H):
                i = acts[bi, t, j]
                f = acts[bi, t, H + j]
                g = acts[bi, t, 2 * H + j]
                o = acts[bi, t, 3 * H + j]
                tc = math.tanh(c[bi, t + 1, j])
                dh = gh[bi, t, j] + dh_next[bi, j]
                dc = dc_next[bi, j] + dh * o * (1.0 - tc * tc)
                dzt[bi, j] = dc * g * i * (1.0 - i)
                dzt[bi, H + j] = dc * c[bi, t, j] * f * (1.0 - f)
                dzt[bi, 2 * H + j] = dc * i * (1.0 - g * g)
                dzt[bi, 3 * H + j] = dh * tc * o * (1.0 - o)
                dc_next[bi, j] = dc * f
        dz[:, t, :] = dzt
        dh_next = np.dot(dzt, WhT)
    dz2 = dz.reshape(B * T, 4 * H)
    gW = np.empty_like(W)
    gW[:D] = np.dot(np.ascontiguousarray(x).reshape(B * T, D).T.copy(), dz2)
    gW[D:] = np.dot(np.ascontiguousarray(h[:, :T]).reshape(B * T, H).T.copy(), dz2)
    gb = np.zeros(4 * H)
    for r in range(B * T):
        for j in range(4 * H):
            gb[j] += dz2[r, j]
    gx = np.dot(dz2, WxT).reshape(B, T, D)
    return gx, gW, gb


# ---------------------------------------------------------------------------
# bilinear inverse-mapping warp with edge clamp
# ---------------------------------------------------------------------------


def warp_bilinear_np(img, A):
    Hh, Ww = img.shape[:2]
    ys, xs = np.mgrid[0:Hh, 0:Ww].astype(np.float64)
    u = (A[0, 0] * xs + A[0, 1] * ys) + A[0, 2]
    v = (A[1, 0] * xs + A[1, 1] * ys) + A[1, 2]
    u = np.clip(u, 0.0, Ww - 1.0)
    v = np.clip(v, 0.0, Hh - 1.0)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    x1 = np.minimum(x0 + 1, Ww - 1)
    y1 = np.minimum(y0 + 1, Hh - 1)
    src = img.astype(np.float64)
    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x1]
    bot = (1.0 - fx) * src[y1, x0] + fx * src[y1, x1]
    val = (1.0 - fy) * top + fy * bot
    return np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)


@njit(cache=True)
def warp_bilinear_nb(img, A):
    Hh, Ww, C = img.shape
    out = np.empty_like(img)
    for y in range(Hh):
        for x in range(Ww):
            u = (A[0, 0] * x + A[0, 1] * y) + A[0, 2]
            v = (A[1, 0] * x + A[1, 1] * y) + A[1, 2]
            u = min(max(u, 0.0), Ww - 1.0)
            v = min(max(v, 0.0), Hh - 1.0)
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            fx = u - x0
            fy = v - y0
            x1 = min(x0 + 1, Ww - 1)
            y1 = min(y0 + 1, Hh - 1)
            for ch in range(C):
                top = (1.0 - fx) * img[y0, x0, ch] + fx * img[y0, x1, ch]
                bot = (1.0 - fx) * img[y1, x0, ch] + fx * img[y1, x1, ch]
                val = math.floor((1.0 - fy) * top + fy * bot + 0.5)
                out[y, x, ch] = min(max(val, 0.0), 255.0)
    return out


if USE_NUMBA:
    conv1d_forward = conv1d_forward_nb
    conv1d_backward = conv1d_backward_nb
    lstm_forward = lstm_forward_nb
    lstm_backward = lstm_backward_nb
    warp_bilinear = warp_bilinear_nb
else:
    conv1d_forward = conv1d_forward_np
    conv1d_backward = conv1d_backward_np
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np
    warp_bilinear = warp_bilinear_np

BACKEND = "numba" if USE_NUMBA else "numpy"
