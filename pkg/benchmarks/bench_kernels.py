"""Benchmark the numba kernels against the pure-numpy fallback.

For the flag-dispatched kernels (resampling, RLE) this flips
``kernels.USE_NUMBA`` around each timing loop; the matmul-shaped
kernels default to BLAS on both backends, so their JIT variants are
invoked explicitly here.  Sizes default to a realistic full-scale
image: 672x672 pixels, a 42x42 patch grid, 64 regions, 512-dim
features, 60 classes.

    python3 benchmarks/bench_kernels.py [--repeats N] [--image 672]
"""

import argparse
import time

import numpy as np

from textregion import kernels


def timed(fn, repeats):
    fn()  # warm-up (numba JIT, caches)
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def flagged(fn, use_numba):
    def run():
        previous = kernels.USE_NUMBA
        kernels.USE_NUMBA = use_numba
        try:
            return fn()
        finally:
            kernels.USE_NUMBA = previous

    return run


def compare(name, numpy_fn, numba_fn, repeats, results, note=""):
    t_np = timed(numpy_fn, repeats)
    t_nb = timed(numba_fn, repeats)
    a, b = numpy_fn(), numba_fn()
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    worst = max(
        float(np.abs(np.asarray(x, np.float64) - np.asarray(y, np.float64)).max(initial=0.0))
        for x, y in zip(a, b)
    )
    results.append((name, t_np, t_nb, worst, note))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--image", type=int, default=672, help="image side in pixels")
    parser.add_argument("--grid", type=int, default=42, help="patch grid side")
    parser.add_argument("--regions", type=int, default=64)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--classes", type=int, default=60)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    side = args.image
    grid = args.grid
    n_regions = args.regions

    masks = rng.random(size=(n_regions, side, side))
    low_res = rng.random(size=(grid // 2, grid // 2, args.dim))
    support = (rng.random(size=side * side) > 0.7).astype(np.uint8)
    runs = kernels.rle_encode(support)
    patch_masks = rng.random(size=(n_regions, grid * grid))
    values = rng.standard_normal(size=(grid * grid, args.dim))
    scores = rng.standard_normal(size=(n_regions, args.classes)).astype(np.float32)
    masks_flat = rng.random(size=(n_regions, side * side)).astype(np.float32)

    results = []
    for name, fn in (
        ("resize_mask_batch  (R masks -> grid)",
         lambda: kernels.resize_mask_batch(masks, grid, grid)),
        ("resize_bilinear    (features upsample)",
         lambda: kernels.resize_bilinear(low_res, grid, grid)),
        ("rle_decode         (full image)",
         lambda: kernels.rle_decode(runs, side * side)),
        ("rle_encode         (full image)",
         lambda: kernels.rle_encode(support)),
    ):
        compare(name, flagged(fn, False), flagged(fn, True), args.repeats, results)

    compare("pool_sum           (R x N @ N x d)",
            lambda: kernels.pool_sum(patch_masks, values),
            lambda: kernels._pool_sum_numba(patch_masks, values),
            args.repeats, results, note="BLAS default")
    compare("masked_mean        (delegate pooling)",
            lambda: kernels.masked_mean(patch_masks, values),
            lambda: kernels._masked_mean_numba(patch_masks, values),
            args.repeats, results, note="BLAS default")
    compare("dense_accumulate   (C x HW spread)",
            lambda: kernels.dense_accumulate(scores, masks_flat),
            lambda: kernels._dense_accumulate_numba(scores, masks_flat),
            args.repeats, results, note="BLAS default")

    print(f"\nimage {side}x{side}, grid {grid}x{grid}, R={n_regions}, "
          f"d={args.dim}, C={args.classes}, best of {args.repeats}\n")
    header = (f"{'kernel':<40} {'numpy':>10} {'numba':>10} {'speedup':>8} "
              f"{'max |diff|':>12}  note")
    print(header)
    print("-" * len(header))
    for name, t_np, t_nb, worst, note in results:
        print(f"{name:<40} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>7.2f}x {worst:>12.2e}  {note}")


if __name__ == "__main__":
    main()
