"""Hot numeric kernels.

Every kernel has a numba implementation (``*_nb``) and a numpy implementation
(``*_np``). The public name dispatches on :data:`noiseprints._accel.USE_NUMBA`.
The two implementations perform the same IEEE operations in the same order, so
their outputs are bit-identical; ``tests/test_kernels.py`` holds them to that.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

# Acklam's rational approximation of the standard normal quantile.
ACKLAM_A = np.array([
    -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
    1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00,
])
ACKLAM_B = np.array([
    -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
    6.680131188771972e+01, -1.328068155288572e+01,
])
ACKLAM_C = np.array([
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
    -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00,
])
ACKLAM_D = np.array([
    7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
    3.754408661907416e+00,
])
ACKLAM_P_LOW = 0.02425

SAMPLE_BITS = 33
U_SPAN = float(1 << SAMPLE_BITS)
U_HALF = 1 << (SAMPLE_BITS - 1)
PART_MASK = (1 << SAMPLE_BITS) - 1


# ---------------------------------------------------------------------------
# inverse normal CDF on 33-bit uniforms
# ---------------------------------------------------------------------------

@njit
def _acklam_tail(pl):
    # pl < p_low; returns the (negative) lower-tail quantile
    c = ACKLAM_C
    d = ACKLAM_D
    q = math.sqrt(-2.0 * math.log(pl))
    num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
    den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
    return num / den


@njit
def _acklam_central(q):
    a = ACKLAM_A
    b = ACKLAM_B
    r = q * q
    num = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
    den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
    return num / den


@njit
def gaussian_from_u_nb(u):
    out = np.empty(u.shape[0], dtype=np.float64)
    for i in range(u.shape[0]):
        ui = u[i]
        # exact evaluation of min(p, 1 - p) with p = (u + 0.5) / 2**33
        if ui < U_HALF:
            pl = (ui + 0.5) / U_SPAN
            neg = True
        else:
            pl = (U_SPAN - ui - 0.5) / U_SPAN
            neg = False
        if pl < ACKLAM_P_LOW:
            x = _acklam_tail(pl)
            out[i] = x if neg else -x
        else:
            out[i] = _acklam_central((ui + 0.5 - U_HALF) / U_SPAN)
    return out


_math_log = np.frompyfunc(math.log, 1, 1)


def gaussian_from_u_np(u):
    u = np.asarray(u, dtype=np.int64)
    uf = u.astype(np.float64)
    neg = u < U_HALF
    pl = np.where(neg, (uf + 0.5) / U_SPAN, (U_SPAN - uf - 0.5) / U_SPAN)
    out = np.empty(u.shape[0], dtype=np.float64)

    tail = pl < ACKLAM_P_LOW
    if tail.any():
        c, d = ACKLAM_C, ACKLAM_D
        # libm log, matching the compiled path bit for bit
        lg = _math_log(pl[tail]).astype(np.float64)
        q = np.sqrt(-2.0 * lg)
        num = ((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]
        den = (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        x = num / den
        out[tail] = np.where(neg[tail], x, -x)

    mid = ~tail
    if mid.any():
        a, b = ACKLAM_A, ACKLAM_B
        q = (uf[mid] + 0.5 - U_HALF) / U_SPAN
        r = q * q
        num = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
        den = ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        out[mid] = num / den
    return out


# ---------------------------------------------------------------------------
# 7 x 33-bit little-endian slicing of 32-byte digests
# ---------------------------------------------------------------------------

@njit
def unpack_parts_nb(digests, parts):
    m = digests.shape[0]
    out = np.empty(m * parts, dtype=np.int64)
    for r in range(m):
        for j in range(parts):
            bit = SAMPLE_BITS * j
            byte = bit >> 3
            shift = bit & 7
            word = np.uint64(0)
            for k in range(8):
                word |= np.uint64(digests[r, byte + k]) << np.uint64(8 * k)
            out[r * parts + j] = np.int64((word >> np.uint64(shift)) & np.uint64(PART_MASK))
    return out


def unpack_parts_np(digests, parts):
    digests = np.ascontiguousarray(digests, dtype=np.uint8)
    m = digests.shape[0]
    out = np.empty((m, parts), dtype=np.int64)
    for j in range(parts):
        bit = SAMPLE_BITS * j
        byte, shift = bit >> 3, bit & 7
        word = np.ascontiguousarray(digests[:, byte:byte + 8]).view("<u8")[:, 0]
        out[:, j] = ((word >> np.uint64(shift)) & np.uint64(PART_MASK)).astype(np.int64)
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# sequential float64 inner products
# ---------------------------------------------------------------------------

@njit
def dot3_nb(a, b):
    s_ab = 0.0
    s_aa = 0.0
    s_bb = 0.0
    for i in range(a.shape[0]):
        x = np.float64(a[i])
        y = np.float64(b[i])
        s_ab += x * y
        s_aa += x * x
        s_bb += y * y
    return s_ab, s_aa, s_bb


def _seqsum(v):
    # np.cumsum adds strictly left to right
    return float(np.cumsum(v)[-1]) if v.size else 0.0


def dot3_np(a, b):
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    return _seqsum(x * y), _seqsum(x * x), _seqsum(y * y)


@njit
def dot3_masked_nb(a, b, mask, hw):
    s_ab = 0.0
    s_aa = 0.0
    s_bb = 0.0
    for i in range(a.shape[0]):
        if mask[i % hw]:
            x = np.float64(a[i])
            y = np.float64(b[i])
            s_ab += x * y
            s_aa += x * x
            s_bb += y * y
    return s_ab, s_aa, s_bb


def dot3_masked_np(a, b, mask, hw):
    keep = np.tile(np.asarray(mask, dtype=bool), a.shape[0] // hw)
    x = np.asarray(a, dtype=np.float64)[keep]
    y = np.asarray(b, dtype=np.float64)[keep]
    return _seqsum(x * y), _seqsum(x * x), _seqsum(y * y)


# ---------------------------------------------------------------------------
# bilinear warp under an affine sampling map  q = A p + t,  p = (x, y)
# ---------------------------------------------------------------------------

@njit
def warp_bilinear_nb(src, a00, a01, a10, a11, t0, t1, out_h, out_w, clamp):
    C, H, W = src.shape
    out = np.zeros((C, out_h, out_w), dtype=np.float32)
    for yy in range(out_h):
        for xx in range(out_w):
            qx = a00 * xx + a01 * yy + t0
            qy = a10 * xx + a11 * yy + t1
            if clamp:
                qx = min(max(qx, 0.0), W - 1.0)
                qy = min(max(qy, 0.0), H - 1.0)
            x0 = math.floor(qx)
            y0 = math.floor(qy)
            fx = qx - x0
            fy = qy - y0
            ix = int(x0)
            iy = int(y0)
            if ix < -1 or iy < -1 or ix > W - 1 or iy > H - 1:
                continue
            okx0 = ix >= 0
            okx1 = ix + 1 <= W - 1
            oky0 = iy >= 0
            oky1 = iy + 1 <= H - 1
            for c in range(C):
                v00 = np.float64(src[c, iy, ix]) if (oky0 and okx0) else 0.0
                v01 = np.float64(src[c, iy, ix + 1]) if (oky0 and okx1) else 0.0
                v10 = np.float64(src[c, iy + 1, ix]) if (oky1 and okx0) else 0.0
                v11 = np.float64(src[c, iy + 1, ix + 1]) if (oky1 and okx1) else 0.0
                top = (1.0 - fx) * v00 + fx * v01
                bot = (1.0 - fx) * v10 + fx * v11
                out[c, yy, xx] = np.float32((1.0 - fy) * top + fy * bot)
    return out


def warp_bilinear_np(src, a00, a01, a10, a11, t0, t1, out_h, out_w, clamp):
    C, H, W = src.shape
    ys, xs = np.meshgrid(np.arange(out_h, dtype=np.float64),
                         np.arange(out_w, dtype=np.float64), indexing="ij")
    qx = a00 * xs + a01 * ys + t0
    qy = a10 * xs + a11 * ys + t1
    if clamp:
        qx = np.minimum(np.maximum(qx, 0.0), W - 1.0)
        qy = np.minimum(np.maximum(qy, 0.0), H - 1.0)
    x0 = np.floor(qx)
    y0 = np.floor(qy)
    fx = qx - x0
    fy = qy - y0
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    live = (ix >= -1) & (iy >= -1) & (ix <= W - 1) & (iy <= H - 1)

    padded = np.zeros((C, H + 2, W + 2), dtype=np.float64)
    padded[:, 1:-1, 1:-1] = src
    jx = np.clip(ix + 1, 0, W + 1)
    jy = np.clip(iy + 1, 0, H + 1)
    jx1 = np.clip(ix + 2, 0, W + 1)
    jy1 = np.clip(iy + 2, 0, H + 1)
    v00 = padded[:, jy, jx]
    v01 = padded[:, jy, jx1]
    v10 = padded[:, jy1, jx]
    v11 = padded[:, jy1, jx1]
    top = (1.0 - fx) * v00 + fx * v01
    bot = (1.0 - fx) * v10 + fx * v11
    val = (1.0 - fy) * top + fy * bot
    val[:, ~live] = 0.0
    return val.astype(np.float32)


# ---------------------------------------------------------------------------
# incomplete-beta continued fraction (modified Lentz)
# ---------------------------------------------------------------------------

_CF_TINY = 1e-300
_CF_EPS = 1e-16


@njit
def betacf_nb(a, b, x, max_iter):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h, m
    return h, -1


def betacf_np(a, b, x, max_iter):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h, m
    return h, -1


if USE_NUMBA:
    gaussian_from_u = gaussian_from_u_nb
    unpack_parts = unpack_parts_nb
    dot3 = dot3_nb
    dot3_masked = dot3_masked_nb
    warp_bilinear = warp_bilinear_nb
    betacf = betacf_nb
else:
    gaussian_from_u = gaussian_from_u_np
    unpack_parts = unpack_parts_np
    dot3 = dot3_np
    dot3_masked = dot3_masked_np
    warp_bilinear = warp_bilinear_np
    betacf = betacf_np

BACKEND = "numba" if USE_NUMBA else "numpy"
