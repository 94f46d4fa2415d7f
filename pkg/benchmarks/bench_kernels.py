"""Time the numba kernels against their numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat 5] [--samples 18400]

Inputs are sized like one training stage of the default desk configuration
(18,400 guess-truth samples, 200 feature points, 4 x 20 depth-5 ferns). Both
versions are checked for equal output before timing. The end-to-end line
trains one stage in a child process per backend, switched with
FACECASCADE_DISABLE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from facecascade import kernels

STAGE_SNIPPET = """
import time, numpy as np
from facecascade.cascade import CascadeConfig, train_stage
from facecascade.shape_model import MotionLayout
from facecascade.synthscene import make_toy_model
from facecascade.kernels import BACKEND
rng = np.random.default_rng(0)
X = rng.random(({n}, 200))
Y = rng.normal(size=({n}, MotionLayout.for_model(make_toy_model().model).dim))
cfg = CascadeConfig()
lay = cfg.regression_layout(MotionLayout.for_model(make_toy_model().model))
train_stage(X[:500], Y[:500], cfg, lay, 1)  # compile
t = time.perf_counter(); train_stage(X, Y, cfg, lay, 1); print(BACKEND, time.perf_counter() - t)
"""


def make_inputs(n, rng):
    m, k, depth, dim = 200, 80, 5, 150
    X = rng.random((n, m))
    pix_i = rng.integers(0, m, (k, depth))
    pix_j = rng.integers(0, m, (k, depth))
    thr = rng.uniform(-0.2, 0.2, (k, depth))
    R = rng.normal(size=(n, dim))
    cov_y = rng.normal(size=m)
    Xc = X - X.mean(axis=0)
    pixel_cov = Xc.T @ Xc / n
    idx = rng.integers(0, 32, n)
    cols = rng.integers(0, 32, (n, k)) + 32 * np.arange(k)[None, :]
    WT = rng.normal(size=(32 * k, dim))
    images = rng.random((400, 64, 64))
    image_idx = rng.integers(0, 400, n)
    points = rng.uniform(-2, 66, (n, m, 2))
    verts = rng.uniform(0, 64, (576, 2))
    albedo = rng.random(576)
    return {
        "descend": (X, pix_i, pix_j, thr),
        "best_pair": (cov_y, pixel_cov, 1e-12),
        "leaf_sums": (idx, R, 32),
        "gram": (cols, 32 * k),
        "indicator_rhs": (cols, R, 32 * k),
        "gather_sum": (WT, cols),
        "splat": (verts, albedo, 64, 64, 0.9, 2.7),
        "sample_nearest": (images, image_idx, points),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-9)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--samples", type=int, default=18400)
    ap.add_argument("--skip-stage", action="store_true", help="skip the end-to-end stage timing")
    args = ap.parse_args(argv)
    inputs = make_inputs(args.samples, np.random.default_rng(0))
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for name, (loop, vec) in kernels.PAIRS.items():
        a = inputs[name]
        if not _same(loop(*a), vec(*a)):  # also triggers compilation
            print(f"{name}: numba and numpy outputs differ", file=sys.stderr)
            return 1
        t_loop = best_of(loop, a, args.repeat)
        t_vec = best_of(vec, a, args.repeat)
        print(f"{name:<16}{1e3 * t_loop:>12.2f}{1e3 * t_vec:>12.2f}{t_vec / t_loop:>10.1f}")
    if not args.skip_stage:
        for flag in ("0", "1"):
            env = dict(os.environ, FACECASCADE_DISABLE_NUMBA=flag)
            res = subprocess.run([sys.executable, "-c", STAGE_SNIPPET.format(n=args.samples)], env=env,
                                 capture_output=True, text=True, check=True)
            backend, secs = res.stdout.split()
            print(f"one training stage ({backend}): {float(secs):.2f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
