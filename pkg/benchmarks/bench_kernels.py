"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 7]

Both backends are imported in-process (the numba versions are compiled once
before timing), so the figures compare the kernels rather than start-up cost.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import time

import numpy as np

from noiseprints import kernels
from noiseprints._accel import HAVE_NUMBA
from noiseprints.noise import hash_chain


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    big = 1_297_920
    a = rng.standard_normal(big).astype(np.float32)
    b = rng.standard_normal(big).astype(np.float32)
    mask = np.zeros(512 * 2535 // 4, dtype=np.bool_)
    mask[::3] = True
    u = rng.integers(0, 1 << 33, size=1 << 18, dtype=np.int64)
    digests = hash_chain(hashlib.sha256(b"bench").digest(), 1 << 15)
    img = rng.standard_normal((4, 128, 128)).astype(np.float32)
    th = math.radians(17.0)
    c, s = math.cos(th), math.sin(th)
    warp = (img, c, -s, s, c, 5.0, -3.0, 128, 128, False)
    return [
        ("dot3 d=1297920", "dot3", (a, b)),
        ("dot3_masked d=1297920", "dot3_masked", (a, b, np.resize(mask, big // 4), big // 4)),
        ("gaussian_from_u n=2^18", "gaussian_from_u", (u,)),
        ("unpack_parts 2^15 digests", "unpack_parts", (digests, 7)),
        ("warp_bilinear 4x128x128", "warp_bilinear", warp),
        ("betacf d=65536", "betacf", (32767.5, 0.5, 0.99, 10_000)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for label, name, call_args in cases():
        np_fn = getattr(kernels, name + "_np")
        t_np = best_of(lambda: np_fn(*call_args), args.repeat)
        if HAVE_NUMBA:
            nb_fn = getattr(kernels, name + "_nb")
            t_nb = best_of(lambda: nb_fn(*call_args), args.repeat)
            print(f"{label:<28}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{label:<28}{'-':>10}{t_np * 1e3:>10.3f}{'-':>9}")


if __name__ == "__main__":
    main()
