"""Canonical seed -> Gaussian noise derivation.

A seed is a 32-byte private value plus a public ownership string. Each chunk
``c`` of the noise starts from ``p0 = SHA-256(s_priv || s_pub || u32le(c))``;
the chunk's uniforms come from the hash chain ``p_{i+1} = SHA-256(p_i)``
(``p_1`` first), each digest sliced little-endian into seven 33-bit parts.
A part ``u`` becomes a normal variate through Acklam's quantile approximation
at ``(u + 0.5) / 2**33``. The fixed-point circuit emulation in
:mod:`noiseprints.zk` consumes exactly the same uniforms.
"""
from __future__ import annotations

import hashlib
import math
import secrets
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, ShapeMismatchError
from .tensors import LatentTensor

SEED_MAGIC = b"NPS1"
PRIV_BYTES = 32
PARTS_PER_DIGEST = 7
BITS_PER_SAMPLE = 33


@dataclass(frozen=True)
class SeedRecord:
    s_priv: bytes
    s_pub: str = ""

    def __post_init__(self):
        if not isinstance(self.s_priv, (bytes, bytearray)) or len(self.s_priv) != PRIV_BYTES:
            raise ValueError(f"s_priv must be exactly {PRIV_BYTES} bytes")
        object.__setattr__(self, "s_priv", bytes(self.s_priv))
        if not isinstance(self.s_pub, str):
            raise TypeError("s_pub must be a str")

    @classmethod
    def generate(cls, s_pub=""):
        return cls(secrets.token_bytes(PRIV_BYTES), s_pub)

    @classmethod
    def from_hex(cls, hex_priv, s_pub=""):
        try:
            raw = bytes.fromhex(hex_priv)
        except ValueError:
            raise ValueError("s_priv must be 64 hex characters") from None
        if len(raw) != PRIV_BYTES:
            raise ValueError("s_priv must be 64 hex characters")
        return cls(raw, s_pub)

    def __repr__(self):
        return f"SeedRecord(s_priv=<{PRIV_BYTES} bytes>, s_pub={self.s_pub!r})"


def seed_to_bytes(seed: SeedRecord) -> bytes:
    pub = seed.s_pub.encode("utf-8")
    return SEED_MAGIC + struct.pack("<I", len(pub)) + pub + seed.s_priv


def seed_from_bytes(buf: bytes) -> SeedRecord:
    if len(buf) < 8 or buf[:4] != SEED_MAGIC:
        raise FormatError("not an NPS1 seed file")
    (n,) = struct.unpack_from("<I", buf, 4)
    if len(buf) != 8 + n + PRIV_BYTES:
        raise FormatError(f"seed file length {len(buf)} does not match header (s_pub {n} bytes)")
    try:
        pub = buf[8:8 + n].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("s_pub is not valid UTF-8") from exc
    return SeedRecord(buf[8 + n:], pub)


def write_seed(path, seed: SeedRecord) -> None:
    Path(path).write_bytes(seed_to_bytes(seed))


def read_seed(path) -> SeedRecord:
    return seed_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class NoiseSpec:
    """Length ``L`` of the noise vector split into ``n`` equal chunks.

    A chunk of length ``m`` consumes ``ceil(m / 7)`` digests; surplus parts of
    the final digest are discarded.
    """

    length: int
    chunks: int = 1
    parts_per_digest: int = PARTS_PER_DIGEST
    bits_per_sample: int = BITS_PER_SAMPLE

    def __post_init__(self):
        if self.length < 1 or self.chunks < 1:
            raise ValueError("length and chunk count must be positive")
        if self.length % self.chunks:
            raise ValueError(f"length {self.length} is not divisible by {self.chunks} chunks")
        if (self.parts_per_digest, self.bits_per_sample) != (PARTS_PER_DIGEST, BITS_PER_SAMPLE):
            raise ValueError("only 7 parts of 33 bits per digest are supported")

    @classmethod
    def for_length(cls, length, chunks=None):
        if chunks is None:
            chunks = 8 if length % 8 == 0 else 1
        return cls(length, chunks)

    @property
    def chunk_length(self):
        return self.length // self.chunks

    @property
    def digests_per_chunk(self):
        return -(-self.chunk_length // self.parts_per_digest)


def chunk_digest(seed: SeedRecord, c: int) -> bytes:
    if not 0 <= c < 1 << 32:
        raise ValueError("chunk index out of range")
    return hashlib.sha256(seed.s_priv + seed.s_pub.encode("utf-8")
                          + struct.pack("<I", c)).digest()


def hash_chain(p: bytes, count: int) -> np.ndarray:
    """``count`` chained digests ``H(p), H(H(p)), ...`` as a (count, 32) uint8 array."""
    sha = hashlib.sha256
    buf = bytearray()
    for _ in range(count):
        p = sha(p).digest()
        buf += p
    return np.frombuffer(bytes(buf), dtype=np.uint8).reshape(count, 32)


def uniforms(p: bytes, count: int) -> np.ndarray:
    """First ``count`` 33-bit uniforms of the stream rooted at ``p`` (any count)."""
    n_dig = -(-count // PARTS_PER_DIGEST)
    if n_dig == 0:
        return np.empty(0, dtype=np.int64)
    parts = kernels.unpack_parts(hash_chain(p, n_dig), PARTS_PER_DIGEST)
    return parts[:count]


def expand_uniforms(p: bytes, count: int) -> np.ndarray:
    """Expand a digest into ``count`` 33-bit unsigned integers (``count % 7 == 0``)."""
    if count < 0 or count % PARTS_PER_DIGEST:
        raise ValueError("count must be a non-negative multiple of 7")
    return uniforms(p, count)


def gaussian_from_uniform(u):
    """Standard normal variate for 33-bit uniform(s) ``u``; scalar in, scalar out."""
    arr = np.atleast_1d(np.asarray(u, dtype=np.int64))
    if arr.size and (arr.min() < 0 or arr.max() > kernels.PART_MASK):
        raise ValueError("u must lie in [0, 2**33)")
    out = kernels.gaussian_from_u(arr)
    if np.ndim(u) == 0:
        return float(out[0])
    return out


def acklam_ppf(p):
    """Acklam's approximation of the normal quantile at real ``p`` in (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    pl = min(p, 1.0 - p)
    if pl < kernels.ACKLAM_P_LOW:
        x = float(kernels._acklam_tail(pl))
        return x if p < 0.5 else -x
    return float(kernels._acklam_central(p - 0.5))


def chunk_uniforms(seed: SeedRecord, spec: NoiseSpec, c: int) -> np.ndarray:
    if not 0 <= c < spec.chunks:
        raise ValueError(f"chunk index {c} outside [0, {spec.chunks})")
    return uniforms(chunk_digest(seed, c), spec.chunk_length)


def derive_chunk(seed: SeedRecord, spec: NoiseSpec, c: int) -> np.ndarray:
    """Float64 noise of chunk ``c`` (before float32 storage)."""
    return kernels.gaussian_from_u(chunk_uniforms(seed, spec, c))


def derive_noise_flat(seed: SeedRecord, spec: NoiseSpec) -> np.ndarray:
    """Float64 noise vector of length ``spec.length``."""
    return np.concatenate([derive_chunk(seed, spec, c) for c in range(spec.chunks)])


def derive_noise(seed: SeedRecord, spec: NoiseSpec, shape) -> LatentTensor:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or math.prod(shape) != spec.length:
        raise ShapeMismatchError(f"shape {shape} does not hold {spec.length} values")
    flat = derive_noise_flat(seed, spec)
    return LatentTensor(flat.astype(np.float32).reshape(shape))
