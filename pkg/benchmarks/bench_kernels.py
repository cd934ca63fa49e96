"""Time the numpy and numba versions of each hot kernel side by side.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 64]

The first numba call (compilation) is excluded; each line reports the best
of ``--repeat`` runs and the largest absolute difference between outputs.
"""

import argparse
import time

import numpy as np

from turngrab import kernels
from turngrab._accel import NUMBA_AVAILABLE


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def _maxdiff(a, b):
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def cases(batch, rng):
    T, C, C1, C2, H = 100, 19, 8, 128, 16
    x = rng.normal(size=(batch, T, C))
    w1 = rng.normal(size=(3, C, C1)) * 0.3
    b1 = rng.normal(size=C1)
    gy1 = rng.normal(size=(batch, T, C1))
    a1 = rng.normal(size=(batch, T, C1))
    w2 = rng.normal(size=(3, C1, C2)) * 0.3
    b2 = rng.normal(size=C2)
    gy2 = rng.normal(size=(batch, T, C2))
    xl = rng.normal(size=(batch, T, C2))
    W = rng.normal(size=(C2 + H, 4 * H)) * 0.1
    bl = rng.normal(size=4 * H) * 0.1
    h, c, acts = kernels.lstm_forward_np(xl, W, bl)
    gh = rng.normal(size=(batch, T, H))
    img = rng.integers(0, 256, size=(720, 1280, 3), dtype=np.uint8)
    A = np.array([[1 / 1.3, 0.0, 150.0], [0.0, 1 / 1.3, 80.0]])
    return [
        ("conv1d_forward 19->8", "conv1d_forward", (x, w1, b1)),
        ("conv1d_forward 8->128", "conv1d_forward", (a1, w2, b2)),
        ("conv1d_backward 19->8", "conv1d_backward", (x, w1, gy1)),
        ("conv1d_backward 8->128", "conv1d_backward", (a1, w2, gy2)),
        ("lstm_forward 128->16", "lstm_forward", (xl, W, bl)),
        ("lstm_backward 128->16", "lstm_backward", (xl, W, h, c, acts, gh)),
        ("warp_bilinear 1280x720", "warp_bilinear", (img, A)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy path can run")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<26}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}{'max |diff|':>13}")
    for label, name, inputs in cases(args.batch, rng):
        f_np = getattr(kernels, name + "_np")
        f_nb = getattr(kernels, name + "_nb")
        t_np, out_np = best_of(f_np, inputs, args.repeat)
        if not NUMBA_AVAILABLE:
            print(f"{label:<26}{1e3 * t_np:>11.2f}")
            continue
        f_nb(*inputs)  # compile
        t_nb, out_nb = best_of(f_nb, inputs, args.repeat)
        print(f"{label:<26}{1e3 * t_np:>11.2f}{1e3 * t_nb:>11.2f}{t_np / t_nb:>9.2f}"
              f"{_maxdiff(out_np, out_nb):>13.2e}")


if __name__ == "__main__":
    main()
