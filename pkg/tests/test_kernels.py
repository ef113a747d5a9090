"""Numba and numpy kernels must agree bit for bit."""
import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from noiseprints import kernels
from noiseprints._accel import HAVE_NUMBA
from noiseprints.noise import hash_chain

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@needs_numba
def test_gaussian_backends_identical(rng):
    u = rng.integers(0, 1 << 33, size=200_000, dtype=np.int64)
    edges = np.array([0, 1, (1 << 32) - 1, 1 << 32, (1 << 33) - 1], dtype=np.int64)
    u = np.concatenate([u, edges])
    a, b = kernels.gaussian_from_u_nb(u), kernels.gaussian_from_u_np(u)
    assert np.array_equal(a.view(np.uint64), b.view(np.uint64))


@needs_numba
def test_unpack_backends_identical():
    d = hash_chain(hashlib.sha256(b"k").digest(), 500)
    assert np.array_equal(kernels.unpack_parts_nb(d, 7), kernels.unpack_parts_np(d, 7))


@needs_numba
def test_dot3_backends_identical(rng):
    a = rng.standard_normal(100_003).astype(np.float32)
    b = rng.standard_normal(100_003).astype(np.float32)
    assert kernels.dot3_nb(a, b) == kernels.dot3_np(a, b)
    mask = rng.random(1000) < 0.3
    a2, b2 = a[:4000], b[:4000]
    assert kernels.dot3_masked_nb(a2, b2, mask, 1000) == kernels.dot3_masked_np(a2, b2, mask, 1000)


@needs_numba
@pytest.mark.parametrize("clamp", [False, True])
def test_warp_backends_identical(rng, clamp):
    src = rng.standard_normal((3, 33, 41)).astype(np.float32)
    args = (src, 0.93, -0.31, 0.29, 0.95, 2.5, -1.25, 33, 41, clamp)
    assert np.array_equal(kernels.warp_bilinear_nb(*args), kernels.warp_bilinear_np(*args))


@needs_numba
@pytest.mark.parametrize("a,b,x", [(1.5, 0.5, 0.3), (8191.5, 0.5, 0.98), (2.0, 3.0, 0.1)])
def test_betacf_backends_identical(a, b, x):
    assert kernels.betacf_nb(a, b, x, 10_000) == kernels.betacf_np(a, b, x, 10_000)


def test_sequential_dot_matches_python_loop(rng):
    a = rng.standard_normal(257).astype(np.float32)
    b = rng.standard_normal(257).astype(np.float32)
    ab = aa = bb = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        ab += x * y
        aa += x * x
        bb += y * y
    assert kernels.dot3(a, b) == (ab, aa, bb)


def test_disable_flag_selects_numpy_and_matches():
    code = ("import hashlib,numpy as np;from noiseprints import *;"
            "from noiseprints import kernels;"
            "e=derive_noise(SeedRecord(bytes(32),'x'),NoiseSpec(4096,8),(4,32,32));"
            "print(kernels.BACKEND, hashlib.sha256(e.data.tobytes()).hexdigest())")
    out = {}
    for flag in ("1", ""):
        env = dict(os.environ, NOISEPRINTS_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        out[flag] = res.stdout.split()
    assert out["1"][0] == "numpy"
    assert out["1"][1] == out[""][1]
