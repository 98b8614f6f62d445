"""Time the numba and pure-numpy versions of each hot kernel side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both versions are called directly, so the ``PEAKFORGE_NO_NUMBA`` flag does
not matter here. Outputs are compared too; every row should say "same".
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from peakforge import _accel, pareto, surrogate
from peakforge.nnkernel import _conv


def best_time(fn, repeat: int) -> float:
    fn()  # compile / warm caches
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng: np.random.Generator):
    X = rng.random((200, 8))
    y = np.sin(6 * X[:, 0]) + X[:, 1] ** 2 + 0.05 * rng.standard_normal(200)
    yield (
        "forest fit (200x8, 50 trees)",
        lambda: surrogate.fit(X, y, rng_state=1, use_numba=True),
        lambda: surrogate.fit(X, y, rng_state=1, use_numba=False),
        lambda a, b: np.array_equal(a.threshold, b.threshold) and np.array_equal(a.value, b.value),
    )
    forest = surrogate.fit(X, y, rng_state=1)
    cand = rng.random((512, 8))
    args = (forest.feature, forest.threshold, forest.left, forest.right, forest.value, cand)
    yield (
        "forest predict (512 candidates)",
        lambda: surrogate._predict_numba(*args),
        lambda: surrogate._predict_numpy(*args),
        np.array_equal,
    )
    pts = rng.random((400, 3))
    yield (
        "non-dominated mask (400x3)",
        lambda: pareto._nondominated_numba(pts),
        lambda: pareto._nondominated_numpy(pts),
        np.array_equal,
    )
    xpad = rng.standard_normal((32, 16, 18, 18))
    yield (
        "im2col (32x16x16x16, k=3)",
        lambda: _conv.im2col(xpad, 3, 16, 16, use_numba=True),
        lambda: _conv.im2col(xpad, 3, 16, 16, use_numba=False),
        np.array_equal,
    )
    dcols = rng.standard_normal((32 * 16 * 16, 16 * 9))
    yield (
        "col2im (32x16x16x16, k=3)",
        lambda: _conv.col2im(dcols, 32, 16, 18, 18, 3, 16, 16, use_numba=True),
        lambda: _conv.col2im(dcols, 32, 16, 18, 18, 3, 16, 16, use_numba=False),
        np.allclose,
    )


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        print("numba is unavailable (or disabled); the 'numba' column runs the same code as plain Python")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  check")
    for name, fast, slow, same in cases(rng):
        tf, ts = best_time(fast, args.repeat), best_time(slow, args.repeat)
        ok = "same" if same(fast(), slow()) else "DIFFERENT"
        print(f"{name:<34} {tf * 1e3:>10.2f} {ts * 1e3:>10.2f} {ts / tf:>7.1f}x  {ok}")


if __name__ == "__main__":
    main()
