"""Latent tensors, spatial transforms, overlap masks and the NPT1 file format."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, InvalidTransformError, ShapeMismatchError

NPT_MAGIC = b"NPT1"
_NPT_HEADER = struct.Struct("<4sIII")
# refuse to allocate absurd payloads from a corrupt header
MAX_ELEMENTS = 1 << 31

_MASK_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """A C x H x W grid of float32 values, channel-major then row-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeMismatchError(f"expected a non-empty C x H x W array, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("latent tensor contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, channels, height, width, values):
        values = np.asarray(values, dtype=np.float32)
        if values.size != channels * height * width:
            raise ShapeMismatchError(
                f"{values.size} values do not fill {channels}x{height}x{width}")
        return cls(values.reshape(channels, height, width))

    @property
    def shape(self):
        return self.data.shape

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def size(self):
        return self.data.size

    def flat(self):
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, LatentTensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(
            self.data.view(np.uint32), other.data.view(np.uint32))

    __hash__ = None


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

KINDS = ("identity", "rotation", "crop_scale", "similarity")


@dataclass(frozen=True)
class TransformSpec:
    """A spatial transform applied identically to every channel.

    ``rotation`` turns content counter-clockwise (x right, y down) about the
    frame center. ``crop_scale`` cuts a window of ``crop_factor`` times the
    frame size at integer ``offset`` and rescales it to the full frame.
    ``similarity`` scales content by ``scale``, rotates it by
    ``angle_degrees`` about the center, then translates by ``(tx, ty)``.
    """

    kind: str = "identity"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidTransformError(f"unknown transform kind {self.kind!r}")
        p = dict(self.params)
        if self.kind == "identity":
            if p:
                raise InvalidTransformError("identity takes no parameters")
        elif self.kind == "rotation":
            _require(p, ("angle_degrees",))
            p["angle_degrees"] = float(p["angle_degrees"])
        elif self.kind == "crop_scale":
            _require(p, ("crop_factor", "offset_x", "offset_y"))
            f = float(p["crop_factor"])
            if not (0.0 < f <= 1.0):
                raise InvalidTransformError(f"crop_factor must lie in (0, 1], got {f}")
            p["crop_factor"] = f
            for k in ("offset_x", "offset_y"):
                if int(p[k]) != p[k]:
                    raise InvalidTransformError(f"{k} must be an integer")
                p[k] = int(p[k])
        else:
            _require(p, ("scale", "angle_degrees", "tx", "ty"))
            p = {k: float(p[k]) for k in ("scale", "angle_degrees", "tx", "ty")}
            if not p["scale"] > 0:
                raise InvalidTransformError("similarity scale must be positive")
        for v in p.values():
            if not math.isfinite(v):
                raise InvalidTransformError("transform parameters must be finite")
        object.__setattr__(self, "params", p)

    # convenience constructors
    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def rotation(cls, angle_degrees):
        return cls("rotation", {"angle_degrees": angle_degrees})

    @classmethod
    def crop_scale(cls, crop_factor, offset_x=0, offset_y=0):
        return cls("crop_scale", {"crop_factor": crop_factor,
                                  "offset_x": offset_x, "offset_y": offset_y})

    @classmethod
    def centered_crop(cls, crop_factor, height, width):
        ox = int(math.floor((width - crop_factor * width) / 2))
        oy = int(math.floor((height - crop_factor * height) / 2))
        return cls.crop_scale(crop_factor, ox, oy)

    @classmethod
    def similarity(cls, scale, angle_degrees, tx=0.0, ty=0.0):
        return cls("similarity", {"scale": scale, "angle_degrees": angle_degrees,
                                  "tx": tx, "ty": ty})

    @property
    def is_identity(self):
        return self.kind == "identity"

    def to_dict(self):
        return {"kind": self.kind, **self.params}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls.identity()
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise InvalidTransformError("transform object lacks 'kind'") from None
        # accept both flat and nested {"params": {...}} layouts
        if "params" in d and isinstance(d["params"], dict):
            d = d["params"]
        return cls(kind, d)


def _require(p, keys):
    missing = [k for k in keys if k not in p]
    extra = [k for k in p if k not in keys]
    if missing or extra:
        raise InvalidTransformError(f"bad parameters: missing {missing}, unexpected {extra}")


def sampling_map(g: TransformSpec, height: int, width: int):
    """Affine map ``q = A p + t`` from output pixel ``p=(x, y)`` to source position."""
    if g.kind == "identity":
        return np.eye(2), np.zeros(2)
    if g.kind == "crop_scale":
        f = g.params["crop_factor"]
        ox, oy = g.params["offset_x"], g.params["offset_y"]
        tol = 1e-9
        if ox < 0 or oy < 0 or ox + f * width > width + tol or oy + f * height > height + tol:
            raise InvalidTransformError(
                f"crop window {f:g}x at ({ox}, {oy}) exceeds the {height}x{width} frame")
        A = np.array([[f, 0.0], [0.0, f]])
        t = np.array([ox - 0.5 + 0.5 * f, oy - 0.5 + 0.5 * f])
        return A, t
    if g.kind == "rotation":
        s, theta, tx, ty = 1.0, g.params["angle_degrees"], 0.0, 0.0
    else:
        s, theta = g.params["scale"], g.params["angle_degrees"]
        tx, ty = g.params["tx"], g.params["ty"]
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    th = math.radians(theta)
    # y points down, so counter-clockwise on screen is R(-theta) in (x, y)
    cos, sin = math.cos(th), math.sin(th)
    fwd = np.array([[cos, sin], [-sin, cos]]) * s
    A = np.linalg.inv(fwd)
    t = c - A @ (c + np.array([tx, ty]))
    return A, t


def similarity_from_map(A, t, height, width):
    """Express a similarity sampling map as a ``similarity`` TransformSpec."""
    fwd = np.linalg.inv(A)
    s = math.sqrt(abs(np.linalg.det(fwd)))
    theta = math.degrees(math.atan2(fwd[0, 1], fwd[0, 0]))
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    # t = c - A (c + shift)  =>  shift = A^-1 (c - t) - c
    shift = fwd @ (c - t) - c
    return TransformSpec.similarity(s, theta, float(shift[0]), float(shift[1]))


def inverse_transform(g: TransformSpec, height: int, width: int) -> TransformSpec:
    """The transform that undoes ``g`` on its valid region."""
    if g.kind == "identity":
        return g
    if g.kind == "rotation":
        return TransformSpec.rotation(-g.params["angle_degrees"])
    A, t = sampling_map(g, height, width)
    Ainv = np.linalg.inv(A)
    return similarity_from_map(Ainv, -Ainv @ t, height, width)


def apply_transform(t: LatentTensor, g: TransformSpec) -> LatentTensor:
    """Resample ``t`` under ``g`` with bilinear interpolation and zero fill."""
    if g.is_identity:
        return t
    A, off = sampling_map(g, t.height, t.width)
    out = kernels.warp_bilinear(t.data, A[0, 0], A[0, 1], A[1, 0], A[1, 1],
                                off[0], off[1], t.height, t.width, False)
    return LatentTensor(out)


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Edge-clamped bilinear resize of a C x H x W array (pixel-center aligned)."""
    C, H, W = data.shape
    sx, sy = W / out_w, H / out_h
    return kernels.warp_bilinear(np.ascontiguousarray(data, dtype=np.float32),
                                 sx, 0.0, 0.0, sy, 0.5 * sx - 0.5, 0.5 * sy - 0.5,
                                 out_h, out_w, True)


@dataclass(frozen=True, eq=False)
class OverlapMask:
    bits: np.ndarray

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def fraction(self):
        return float(self.bits.mean())


def transform_mask(g: TransformSpec, h: int, w: int) -> OverlapMask:
    """True where all four bilinear taps of the source position are in frame."""
    if h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")
    if g.is_identity:
        return OverlapMask(np.ones((h, w), dtype=bool))
    A, t = sampling_map(g, h, w)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    qx = A[0, 0] * xs + A[0, 1] * ys + t[0]
    qy = A[1, 0] * xs + A[1, 1] * ys + t[1]
    bits = ((qx >= -_MASK_EPS) & (qx <= w - 1 + _MASK_EPS)
            & (qy >= -_MASK_EPS) & (qy <= h - 1 + _MASK_EPS))
    return OverlapMask(bits)


# ---------------------------------------------------------------------------
# NPT1 serialization
# ---------------------------------------------------------------------------

def tensor_to_bytes(t: LatentTensor) -> bytes:
    header = _NPT_HEADER.pack(NPT_MAGIC, t.channels, t.height, t.width)
    return header + t.data.astype("<f4", copy=False).tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> LatentTensor:
    if len(buf) < _NPT_HEADER.size:
        raise FormatError("NPT1 file shorter than its header")
    magic, c, h, w = _NPT_HEADER.unpack_from(buf)
    if magic != NPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {NPT_MAGIC!r}")
    if c == 0 or h == 0 or w == 0:
        raise FormatError("NPT1 dimensions must be positive")
    n = c * h * w
    if n > MAX_ELEMENTS:
        raise FormatError(f"declared shape {c}x{h}x{w} overflows the element limit")
    payload = len(buf) - _NPT_HEADER.size
    if payload < 4 * n:
        raise FormatError(f"truncated payload: {payload // 4} of {n} values present")
    if payload > 4 * n:
        raise FormatError(f"{payload - 4 * n} trailing bytes after payload")
    values = np.frombuffer(buf, dtype="<f4", count=n, offset=_NPT_HEADER.size)
    try:
        return LatentTensor(values.astype(np.float32).reshape(c, h, w))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def write_tensor(path, t: LatentTensor) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def read_tensor(path) -> LatentTensor:
    return tensor_from_bytes(Path(path).read_bytes())
