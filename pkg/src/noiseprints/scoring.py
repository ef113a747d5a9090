"""NoisePrint scores, masked transform scores and spatial diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import DegenerateInputError, InsufficientOverlapError, ShapeMismatchError
from .tensors import LatentTensor, TransformSpec, apply_transform, transform_mask

MIN_COVERAGE = 0.01

# low-entropy heuristic
BLOCK = 8
BLOCK_VAR_FLOOR = 1e-4
FLAT_FRACTION = 0.5
MARGIN = 0.02


@dataclass(frozen=True)
class ScoreReport:
    phi: float
    tau: float
    dimension_d: int
    transform: TransformSpec | None = None
    masked_fraction: float = 1.0
    note: str | None = None

    @property
    def passed(self):
        return self.phi >= self.tau

    def to_dict(self):
        return {
            "phi": self.phi,
            "tau": self.tau,
            "dimension_d": self.dimension_d,
            "pass": self.passed,
            "transform": None if self.transform is None else self.transform.to_dict(),
            "masked_fraction": self.masked_fraction,
            "note": self.note,
        }


def _check_shapes(a: LatentTensor, b: LatentTensor):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")


def _cosine(ab, aa, bb):
    if aa == 0.0 or bb == 0.0:
        raise DegenerateInputError("cannot score a zero-norm tensor")
    return ab / (math.sqrt(aa) * math.sqrt(bb))


def noiseprint_score(z: LatentTensor, eps: LatentTensor) -> float:
    """Cosine similarity, accumulated sequentially in float64."""
    _check_shapes(z, eps)
    return _cosine(*kernels.dot3(z.flat(), eps.flat()))


def masked_score(z: LatentTensor, eps: LatentTensor, mask: np.ndarray) -> float:
    _check_shapes(z, eps)
    bits = np.ascontiguousarray(mask, dtype=np.bool_).reshape(-1)
    if bits.size != z.height * z.width:
        raise ShapeMismatchError("mask does not match the spatial frame")
    return _cosine(*kernels.dot3_masked(z.flat(), eps.flat(), bits, bits.size))


def extended_score(z: LatentTensor, eps: LatentTensor, g: TransformSpec | None,
                   min_coverage=MIN_COVERAGE):
    """Score ``g . z`` against ``eps`` on the transform's overlap region.

    Returns ``(phi, masked_fraction)``.
    """
    _check_shapes(z, eps)
    if g is None or g.is_identity:
        return noiseprint_score(z, eps), 1.0
    mask = transform_mask(g, z.height, z.width)
    frac = mask.fraction
    if frac < min_coverage:
        raise InsufficientOverlapError(f"overlap covers only {frac:.4f} of the frame")
    return masked_score(apply_transform(z, g), eps, mask.bits), frac


def correlation_map(z: LatentTensor, eps: LatentTensor, sigma=2.0, map_threshold=0.05):
    """Per-location correlation, Gaussian-smoothed, plus its threshold mask.

    The raw map is ``H*W * sum_c zhat * epshat`` so that its spatial mean is
    the NoisePrint score itself.
    """
    _check_shapes(z, eps)
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a = z.data.astype(np.float64)
    b = eps.data.astype(np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cannot map a zero-norm tensor")
    raw = (a / na * (b / nb)).sum(axis=0) * (z.height * z.width)
    smooth = ndimage.gaussian_filter(raw, sigma, mode="reflect", radius=int(math.ceil(3 * sigma)))
    return smooth, smooth > map_threshold


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    body = np.where(mask, 255, 0).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + body)


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w) > 127


def low_entropy_warning(z: LatentTensor, tau: float, phi: float):
    """Flag content likely to fail verification for lack of texture.

    Returns ``(flag, diagnostics)``.
    """
    a = z.data.astype(np.float64)
    C, H, W = a.shape
    bh, bw = min(BLOCK, H), min(BLOCK, W)
    nby, nbx = H // bh, W // bw
    blocks = a[:, :nby * bh, :nbx * bw].reshape(C, nby, bh, nbx, bw)
    var = blocks.transpose(1, 3, 0, 2, 4).reshape(nby, nbx, -1).var(axis=-1)
    flat_fraction = float((var < BLOCK_VAR_FLOOR).mean())
    margin = phi - tau
    thin_margin = 0.0 <= margin < MARGIN
    flag = flat_fraction > FLAT_FRACTION or thin_margin
    return flag, {
        "flat_block_fraction": flat_fraction,
        "blocks": int(nby * nbx),
        "margin": margin,
        "thin_margin": thin_margin,
    }
