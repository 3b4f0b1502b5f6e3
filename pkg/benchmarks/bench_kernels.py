"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Each kernel runs once untimed so JIT compilation is excluded. The last
rows time whole operations (EDT, one training step) with the backend
forced through ``_accel``. ``im2col3`` is numpy on both paths and is
not listed.
"""

import argparse
import timeit

import numpy as np

from rforge import _accel, imgcore, realnet


def cases(rng):
    x = rng.standard_normal((32, 32, 32, 16))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = _accel.im2col3(xp, 32, 32, jit=False)
    y, arg = _accel.maxpool2(x, jit=False)
    f = np.where(rng.random((128, 128)) < 0.7, _accel._INF, 0.0)
    return {
        "edt_rows 128x128": lambda jit: _accel.edt_rows(f, jit=jit),
        "col2im3 32x32x32x16": lambda jit: _accel.col2im3(cols, 32, 32, 32, 16, jit=jit),
        "maxpool2 32x32x32x16": lambda jit: _accel.maxpool2(x, jit=jit),
        "maxpool2_back": lambda jit: _accel.maxpool2_back(y, arg, jit=jit),
    }


def whole_ops(rng):
    mask = np.zeros((128, 128))
    mask[30:90, 20:100] = 1
    p = realnet.init_params(seed=0)
    xb = rng.random((32, 64, 64, 3))
    yb = np.array([0, 1] * 16)
    cfg = realnet.TrainConfig(max_iterations=1, batch_size=32)
    return {
        "distance_transform 128x128": lambda: imgcore.distance_transform(mask),
        "train step batch 32": lambda: realnet.train_arrays(p, xb, yb, cfg),
    }


def best(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {_accel.HAS_NUMBA}")
    print(f"{'kernel':30s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_np = best(lambda: fn(False), args.repeat)
        t_nb = best(lambda: fn(True), args.repeat) if _accel.HAS_NUMBA else float("nan")
        print(f"{name:30s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f}")
    for name, fn in whole_ops(rng).items():
        times = []
        for want in (False, True):
            prev = _accel.set_backend(want)
            times.append(best(fn, max(3, args.repeat // 4)))
            _accel.set_backend(prev)
        print(f"{name:30s} {times[0]:10.3f} {times[1]:10.3f} {times[0] / times[1]:8.2f}")


if __name__ == "__main__":
    main()
