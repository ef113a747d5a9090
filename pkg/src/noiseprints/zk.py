"""Executable emulation of the two verification circuits over a prime field.

``DPM`` derives one chunk of noise from the seed, accumulates its dot product
with the public image chunk plus its squared magnitude, and commits to both.
``Combine`` opens every commitment, sums the chunks and checks the magnitude
bracket, the cosine bracket and the threshold comparison.

Nothing here is zero-knowledge. The bundle carries ``s_priv`` and every
witness in the clear so that each constraint can be re-checked; it shows what
a real proof would establish, not how it would hide the seed.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import FormatError, ShapeMismatchError
from .noise import NoiseSpec, SeedRecord, chunk_digest, uniforms
from .tensors import LatentTensor

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

BN254_R = 21888242871839275222246405745257275088548364400416034343698204186575808495617
MAG_LIMIT = 1 << 64
TABLE_BITS = 16
BUNDLE_VERSION = 1


def _probably_prime(n: int) -> bool:
    if n < 2:
        return False
    for sp in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % sp == 0:
            return n == sp
    d, s = n - 1, 0
    while d % 2 == 0:
        d, s = d // 2, s + 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldConfig:
    prime: int = BN254_R
    frac_bits: int = 32
    sample_bits: int = 33
    parts_per_digest: int = 7
    length: int = 4096
    chunks: int = 8
    nd_mode: str = "exact"

    def __post_init__(self):
        if self.parts_per_digest * self.sample_bits > self.prime.bit_length() - 2:
            raise ValueError("digest packing would wrap around the field")
        if not _probably_prime(self.prime):
            raise ValueError("modulus is not prime")
        if (self.sample_bits, self.parts_per_digest) != (33, 7):
            raise ValueError("only 7 parts of 33 bits are supported")
        if not 1 <= self.frac_bits <= 48:
            raise ValueError("frac_bits must lie in [1, 48]")
        if self.nd_mode not in ("exact", "table"):
            raise ValueError("nd_mode must be 'exact' or 'table'")
        NoiseSpec(self.length, self.chunks)

    @property
    def scale(self):
        return 1 << self.frac_bits

    @property
    def noise_spec(self):
        return NoiseSpec(self.length, self.chunks)

    @classmethod
    def from_mapping(cls, m):
        m = dict(m.get("field", m))
        kw = {}
        if "prime" in m:
            p = m["prime"]
            kw["prime"] = int(p, 16) if isinstance(p, str) else int(p)
        for key, name in (("F", "frac_bits"), ("frac_bits", "frac_bits"), ("L", "length"),
                          ("length", "length"), ("n", "chunks"), ("chunks", "chunks")):
            if key in m:
                kw[name] = int(m[key])
        if "nd_mode" in m:
            kw["nd_mode"] = str(m["nd_mode"])
        return cls(**kw)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))

    def to_toml(self):
        return (f'[field]\nprime = "{self.prime:#x}"\nF = {self.frac_bits}\n'
                f'L = {self.length}\nn = {self.chunks}\nnd_mode = "{self.nd_mode}"\n')


@dataclass(frozen=True)
class SignedFixed:
    """``(-1)**sign * magnitude``. A negative zero is legal (ND emits one just below the midpoint)."""

    magnitude: int
    sign: int = 0

    @classmethod
    def from_int(cls, v: int):
        return cls(abs(v), 1 if v < 0 else 0)

    @classmethod
    def from_float(cls, x: float, frac_bits=32):
        mag = math.floor(abs(x) * (1 << frac_bits))
        return cls(mag, 1 if (x < 0 and mag) else 0)

    def value(self) -> int:
        return -self.magnitude if self.sign else self.magnitude

    def to_field(self, p: int) -> int:
        return (-self.magnitude) % p if self.sign else self.magnitude % p

    def well_formed(self) -> bool:
        return self.sign in (0, 1) and 0 <= self.magnitude < MAG_LIMIT


# ---------------------------------------------------------------------------
# ND lookup
# ---------------------------------------------------------------------------

def _nd_exact(u: np.ndarray, frac_bits: int):
    x = kernels.gaussian_from_u(u.astype(np.int64))
    mag = np.floor(np.abs(x) * float(1 << frac_bits)).astype(np.int64)
    sign = (u < kernels.U_HALF).astype(np.int64)
    return mag, sign


_TABLES: dict = {}


def _nd_table(frac_bits: int):
    if frac_bits not in _TABLES:
        step = 1 << (kernels.SAMPLE_BITS - TABLE_BITS)
        grid = np.minimum(np.arange((1 << TABLE_BITS) + 1, dtype=np.int64) * step,
                          kernels.PART_MASK)
        mag, sign = _nd_exact(grid, frac_bits)
        _TABLES[frac_bits] = np.where(sign == 1, -mag, mag)
    return _TABLES[frac_bits]


def _nd_interp(u: np.ndarray, frac_bits: int):
    table = _nd_table(frac_bits)
    shift = kernels.SAMPLE_BITS - TABLE_BITS
    j = u >> shift
    frac = u & ((1 << shift) - 1)
    lo, hi = table[j], table[j + 1]
    val = lo + (((hi - lo) * frac) >> shift)
    return np.abs(val), (u < kernels.U_HALF).astype(np.int64)


def nd_lookup_array(u, config: FieldConfig | None = None):
    """Vectorized ND lookup: ``(magnitudes, signs)`` as int64 arrays."""
    config = config or FieldConfig()
    u = np.asarray(u, dtype=np.int64)
    if u.size and (u.min() < 0 or u.max() > kernels.PART_MASK):
        raise ValueError("u must lie in [0, 2**33)")
    if config.nd_mode == "table":
        return _nd_interp(u, config.frac_bits)
    return _nd_exact(u, config.frac_bits)


def nd_lookup(u: int, config: FieldConfig | None = None) -> SignedFixed:
    """Fixed-point normal quantile of a 33-bit uniform (floor of the magnitude)."""
    mag, sign = nd_lookup_array(np.array([u]), config)
    return SignedFixed(int(mag[0]), int(sign[0]))


# ---------------------------------------------------------------------------
# commitments
# ---------------------------------------------------------------------------

def commit(dot_prod: SignedFixed, sq_mag: int, r: bytes) -> bytes:
    if len(r) != 32:
        raise ValueError("commitment randomness must be 32 bytes")
    return hashlib.sha256(bytes([dot_prod.sign & 0xFF])
                          + dot_prod.magnitude.to_bytes(32, "little")
                          + int(sq_mag).to_bytes(32, "little") + r).digest()


def commit_randomness(seed: SeedRecord, c: int, image_digest: bytes) -> bytes:
    return hashlib.sha256(b"np-commit" + seed.s_priv + struct.pack("<I", c)
                          + image_digest).digest()


def image_digest(image: LatentTensor) -> bytes:
    return hashlib.sha256(np.ascontiguousarray(image.data, dtype="<f4").tobytes()).digest()


# ---------------------------------------------------------------------------
# DPM circuit
# ---------------------------------------------------------------------------

@dataclass
class DpmInstance:
    c: int
    s_pub: str
    v: list                  # public image chunk, SignedFixed
    com: bytes
    s_priv: bytes
    r: bytes
    e: list                  # noise witness, SignedFixed
    dot_prod: SignedFixed
    sq_mag: int
    config: FieldConfig = field(default_factory=FieldConfig)


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    constraint: str | None = None
    index: int | None = None

    def __bool__(self):
        return self.ok


def quantize_chunk(values, frac_bits=32):
    """Image floats to SignedFixed (floor of magnitude, exact for float32 input)."""
    scale = float(1 << frac_bits)
    arr = np.asarray(values, dtype=np.float64)
    mags = np.floor(np.abs(arr) * scale).astype(np.int64).tolist()
    return [SignedFixed(m, 1 if (x < 0 and m) else 0) for m, x in zip(mags, arr.tolist())]


def _products(e, v, F):
    # each product is truncated on its magnitude, then given the combined sign
    out = []
    for ei, vi in zip(e, v):
        m = (ei.magnitude * vi.magnitude) >> F
        out.append(-m if (ei.sign ^ vi.sign) else m)
    return out


def _derive_e(seed: SeedRecord, c: int, m: int, config: FieldConfig):
    mag, sign = nd_lookup_array(uniforms(chunk_digest(seed, c), m), config)
    return [SignedFixed(a, b) for a, b in zip(mag.tolist(), sign.tolist())]


def dpm_generate_witness(seed: SeedRecord, c: int, image_chunk, r: bytes,
                         config: FieldConfig | None = None) -> DpmInstance:
    config = config or FieldConfig()
    if len(image_chunk) and isinstance(image_chunk[0], SignedFixed):
        v = list(image_chunk)
    else:
        v = quantize_chunk(image_chunk, config.frac_bits)
    e = _derive_e(seed, c, len(v), config)
    F = config.frac_bits
    dot = SignedFixed.from_int(sum(_products(e, v, F)))
    sq = sum((x.magnitude * x.magnitude) >> F for x in e)
    return DpmInstance(c, seed.s_pub, v, commit(dot, sq, r), seed.s_priv, bytes(r), e, dot, sq,
                       config)


def dpm_check(inst: DpmInstance) -> CheckResult:
    """Re-run every DPM constraint; report the first one that fails."""
    cfg = inst.config
    p, F = cfg.prime, cfg.frac_bits
    if len(inst.e) != len(inst.v):
        return CheckResult(False, "length")
    for k, x in enumerate(inst.v):
        if not x.well_formed():
            return CheckResult(False, "image_range", k)
    for k, x in enumerate(inst.e):
        if not x.well_formed():
            return CheckResult(False, "noise_range", k)
    if not inst.dot_prod.well_formed() or not 0 <= inst.sq_mag < p:
        return CheckResult(False, "accumulator_range")
    try:
        seed = SeedRecord(inst.s_priv, inst.s_pub)
    except (TypeError, ValueError):
        return CheckResult(False, "seed")
    expect = _derive_e(seed, inst.c, len(inst.v), cfg)
    for k, (got, want) in enumerate(zip(inst.e, expect)):
        if got != want:
            return CheckResult(False, "lookup", k)
    if sum(_products(inst.e, inst.v, F)) % p != inst.dot_prod.to_field(p):
        return CheckResult(False, "dot_prod")
    if sum((x.magnitude * x.magnitude) >> F for x in inst.e) % p != inst.sq_mag % p:
        return CheckResult(False, "sq_mag")
    if len(inst.r) != 32 or commit(inst.dot_prod, inst.sq_mag, inst.r) != inst.com:
        return CheckResult(False, "commitment")
    return CheckResult(True)


# ---------------------------------------------------------------------------
# Combine circuit
# ---------------------------------------------------------------------------

@dataclass
class CombineInstance:
    coms: list
    img_mag: int
    t: int
    rs: list
    dot_prods: list
    sq_mags: list
    mag: int
    ca: SignedFixed
    config: FieldConfig = field(default_factory=FieldConfig)


def img_magnitude(v, frac_bits=32) -> int:
    """Fixed-point norm (scale ``2**(F/2)``) of a quantized image."""
    return math.isqrt(sum((x.magnitude * x.magnitude) >> frac_bits for x in v))


def threshold_fixed(tau: float, frac_bits=32) -> int:
    return math.floor(tau * (1 << frac_bits))


def combine_witness(dpms, img_mag: int, t: int, config: FieldConfig | None = None):
    config = config or FieldConfig()
    fdp = sum(d.dot_prod.value() for d in dpms)
    fsm = sum(d.sq_mag for d in dpms)
    mag = math.isqrt(fsm)
    den = mag * img_mag
    ca = (fdp << config.frac_bits) // den if den else 0
    return CombineInstance([d.com for d in dpms], img_mag, t, [d.r for d in dpms],
                           [d.dot_prod for d in dpms], [d.sq_mag for d in dpms], mag,
                           SignedFixed.from_int(ca), config)


def combine_check(inst: CombineInstance) -> CheckResult:
    cfg = inst.config
    n = len(inst.coms)
    if not (len(inst.rs) == len(inst.dot_prods) == len(inst.sq_mags) == n) or n == 0:
        return CheckResult(False, "openings")
    for i in range(n):
        dp = inst.dot_prods[i]
        if not dp.well_formed() or not 0 <= inst.sq_mags[i] < cfg.prime:
            return CheckResult(False, "opening_range", i)
        if len(inst.rs[i]) != 32 or commit(dp, inst.sq_mags[i], inst.rs[i]) != inst.coms[i]:
            return CheckResult(False, "commitment", i)
    if not inst.ca.well_formed() or not 0 <= inst.mag < MAG_LIMIT:
        return CheckResult(False, "combine_range")
    fdp = sum(d.value() for d in inst.dot_prods)
    fsm = sum(inst.sq_mags)
    # verify magnitude of noise vector
    if not inst.mag * inst.mag <= fsm <= (inst.mag + 1) ** 2:
        return CheckResult(False, "magnitude_bracket")
    base = inst.mag * inst.img_mag
    ca = inst.ca.value()
    if base == 0 or not base * ca <= (fdp << cfg.frac_bits) <= base * (ca + 1):
        return CheckResult(False, "cosine_bracket")
    if not ca > inst.t:
        return CheckResult(False, "threshold")
    return CheckResult(True)


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------

@dataclass
class ProofBundle:
    config: FieldConfig
    s_pub: str
    tau: float
    dpms: list
    combine: CombineInstance


def _chunks_of(image: LatentTensor, config: FieldConfig):
    if image.size != config.length:
        raise ShapeMismatchError(f"image has {image.size} values, circuit expects {config.length}")
    m = config.length // config.chunks
    q = quantize_chunk(image.flat(), config.frac_bits)
    return [q[i * m:(i + 1) * m] for i in range(config.chunks)], q


def zk_prove_emulated(seed: SeedRecord, image: LatentTensor, tau: float,
                      config: FieldConfig | None = None) -> ProofBundle:
    """Build every DPM instance and the Combine instance for ``(seed, image)``.

    The result proves nothing in zero knowledge: it includes the private seed.
    """
    if config is None:
        config = FieldConfig(length=image.size, chunks=NoiseSpec.for_length(image.size).chunks)
    chunks, q = _chunks_of(image, config)
    digest = image_digest(image)
    dpms = [dpm_generate_witness(seed, c, ch, commit_randomness(seed, c, digest), config)
            for c, ch in enumerate(chunks)]
    comb = combine_witness(dpms, img_magnitude(q, config.frac_bits),
                           threshold_fixed(tau, config.frac_bits), config)
    return ProofBundle(config, seed.s_pub, float(tau), dpms, comb)


def zk_verify_emulated(bundle: ProofBundle, image: LatentTensor, s_pub: str,
                       tau: float) -> CheckResult:
    """Check a bundle using the public image, ownership string and threshold.

    Public inputs are substituted from the arguments, never taken from the bundle.
    """
    cfg = bundle.config
    try:
        chunks, q = _chunks_of(image, cfg)
    except ShapeMismatchError:
        return CheckResult(False, "image_shape")
    if len(bundle.dpms) != cfg.chunks:
        return CheckResult(False, "chunk_count")
    for i, d in enumerate(bundle.dpms):
        pub = replace(d, c=i, s_pub=s_pub, v=chunks[i], config=cfg)
        res = dpm_check(pub)
        if not res:
            return CheckResult(False, f"dpm[{i}].{res.constraint}", res.index)
    comb = replace(bundle.combine, coms=[d.com for d in bundle.dpms],
                   img_mag=img_magnitude(q, cfg.frac_bits),
                   t=threshold_fixed(tau, cfg.frac_bits), config=cfg)
    res = combine_check(comb)
    if not res:
        return CheckResult(False, f"combine.{res.constraint}", res.index)
    return CheckResult(True)


def _hx(v: int) -> str:
    return hex(v)


def bundle_to_dict(b: ProofBundle) -> dict:
    cfg = b.config
    return {
        "version": BUNDLE_VERSION,
        "warning": "emulation only: s_priv and all witnesses are included in the clear",
        "field": {"prime": _hx(cfg.prime), "F": cfg.frac_bits, "L": cfg.length,
                  "n": cfg.chunks, "nd_mode": cfg.nd_mode},
        "s_pub": b.s_pub,
        "s_priv": b.dpms[0].s_priv.hex() if b.dpms else "",
        "tau": b.tau,
        "chunks": [{
            "c": d.c,
            "com": d.com.hex(),
            "r": d.r.hex(),
            "dot_prod": _hx(d.dot_prod.magnitude),
            "sign": d.dot_prod.sign,
            "sq_mag": _hx(d.sq_mag),
            "noise": [[_hx(x.magnitude), x.sign] for x in d.e],
        } for d in b.dpms],
        "combine": {"mag": _hx(b.combine.mag), "CA": _hx(b.combine.ca.magnitude),
                    "CA_sign": b.combine.ca.sign, "t": _hx(b.combine.t),
                    "img_mag": _hx(b.combine.img_mag)},
    }


def bundle_from_dict(doc: dict) -> ProofBundle:
    try:
        if doc.get("version") != BUNDLE_VERSION:
            raise FormatError(f"unsupported bundle version {doc.get('version')!r}")
        cfg = FieldConfig.from_mapping(doc["field"])
        s_priv = bytes.fromhex(doc["s_priv"])
        s_pub = doc["s_pub"]
        h = lambda s: int(s, 16)  # noqa: E731
        dpms = []
        for rec in doc["chunks"]:
            dot = SignedFixed(h(rec["dot_prod"]), int(rec["sign"]))
            e = [SignedFixed(h(m), int(s)) for m, s in rec["noise"]]
            dpms.append(DpmInstance(int(rec["c"]), s_pub, [], bytes.fromhex(rec["com"]), s_priv,
                                    bytes.fromhex(rec["r"]), e, dot, h(rec["sq_mag"]), cfg))
        cb = doc["combine"]
        comb = CombineInstance([d.com for d in dpms], h(cb["img_mag"]), h(cb["t"]),
                               [d.r for d in dpms], [d.dot_prod for d in dpms],
                               [d.sq_mag for d in dpms], h(cb["mag"]),
                               SignedFixed(h(cb["CA"]), int(cb["CA_sign"])), cfg)
        return ProofBundle(cfg, s_pub, float(doc["tau"]), dpms, comb)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed proof bundle: {exc}") from exc


def write_bundle(path, b: ProofBundle) -> None:
    Path(path).write_text(json.dumps(bundle_to_dict(b), sort_keys=True) + "\n", encoding="utf-8")


def read_bundle(path) -> ProofBundle:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"bundle is not JSON: {exc}") from exc
    return bundle_from_dict(doc)
