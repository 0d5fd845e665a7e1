"""Compare the compiled and numpy im2col / col2im kernels.

    python3 benchmarks/bench_kernels.py [--repeats 50]

Also times one dcgan_toy-sized conv forward + backward with the active
backend. Outputs are checked for equality before timing.
"""

import argparse
import timeit

import numpy as np

from hyperprune.numeric import _pykernels, kernels

try:
    from hyperprune.numeric import _ckernels
except ImportError:
    _ckernels = None

# (batch, channels, size, kernel, stride, pad)
CASES = [
    (8, 32, 8, 4, 2, 1),
    (8, 64, 4, 3, 1, 1),
    (8, 16, 16, 3, 1, 1),
    (4, 3, 32, 7, 1, 3),
]


def _setup(b, c, size, k, s, p, rng):
    out = (size + 2 * p - k) // s + 1
    xp = rng.standard_normal((b, c, size + 2 * p, size + 2 * p))
    cols = rng.standard_normal((b, c * k * k, out * out))
    return xp, cols, out


def bench(repeats: int) -> None:
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.BACKEND}")
    header = f"{'case':<22s} {'op':<7s} {'numpy us':>10s} {'cython us':>10s} {'speedup':>8s}"
    print(header)
    for b, c, size, k, s, p in CASES:
        xp, cols, out = _setup(b, c, size, k, s, p, rng)
        hp = size + 2 * p
        label = f"B{b} C{c} {size}px k{k}s{s}"
        ops = {
            "im2col": lambda mod: mod.im2col(xp, k, s, out, out),
            "col2im": lambda mod: mod.col2im(cols, c, k, s, out, out, hp, hp),
        }
        for name, fn in ops.items():
            t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=repeats)) * 1e6
            if _ckernels is None:
                print(f"{label:<22s} {name:<7s} {t_py:10.1f} {'n/a':>10s} {'':>8s}")
                continue
            # same answer bit for bit, or the timing is meaningless
            assert np.array_equal(np.asarray(fn(_pykernels)), np.asarray(fn(_ckernels))), name
            t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=repeats)) * 1e6
            print(f"{label:<22s} {name:<7s} {t_py:10.1f} {t_c:10.1f} {t_py / t_c:7.2f}x")


def bench_step(repeats: int) -> None:
    from hyperprune import numeric as nm

    rng = np.random.default_rng(1)
    x = nm.Tensor(rng.standard_normal((8, 64, 8, 8)), requires_grad=True)
    w = nm.Tensor(rng.standard_normal((32, 64, 4, 4)), requires_grad=True)

    def step():
        y = nm.conv2d(x, w, stride=2, pad=1)
        nm.backward(nm.mean(nm.square(y)))
        x.grad = w.grad = None

    t = min(timeit.repeat(step, number=1, repeat=repeats)) * 1e3
    print(f"conv2d forward+backward (B8 C64->32 8px k4s2): {t:.3f} ms [{kernels.BACKEND}]")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50)
    args = ap.parse_args()
    bench(args.repeats)
    bench_step(args.repeats)


if __name__ == "__main__":
    main()
