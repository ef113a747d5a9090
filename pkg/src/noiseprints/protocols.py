"""Verification and dispute protocols, claim files, alignment search, registry."""
from __future__ import annotations

import contextlib
import datetime as _dt
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import calibrate_threshold
from .errors import (DegenerateInputError, EstimationFailedError, FormatError,
                     InsufficientOverlapError, ProtocolError, ShapeMismatchError)
from .noise import NoiseSpec, SeedRecord, derive_noise, read_seed, seed_to_bytes
from .scoring import ScoreReport, extended_score, noiseprint_score
from .tensors import (LatentTensor, TransformSpec, apply_transform, inverse_transform,
                      read_tensor, sampling_map, tensor_to_bytes)

log = logging.getLogger(__name__)

CLAIM_VERSION = 1
A, B, UNRESOLVED = "A", "B", "Unresolved"


@dataclass(frozen=True)
class Claim:
    claimant_id: str
    content: LatentTensor
    seed: SeedRecord
    transform: TransformSpec | None = None
    content_ref: str | None = None
    seed_ref: str | None = None

    def canonical(self) -> bytes:
        """Canonical encoding for registry digests; never includes ``s_priv``."""
        doc = {
            "version": CLAIM_VERSION,
            "claimant_id": self.claimant_id,
            "content_sha256": hashlib.sha256(tensor_to_bytes(self.content)).hexdigest(),
            "seed_sha256": hashlib.sha256(seed_to_bytes(self.seed)).hexdigest(),
            "s_pub": self.seed.s_pub,
            "transform": None if self.transform is None else self.transform.to_dict(),
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")

    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()


def claim_document(claimant_id, content_ref, seed_ref, transform=None) -> dict:
    return {
        "version": CLAIM_VERSION,
        "claimant_id": claimant_id,
        "content_ref": str(content_ref),
        "seed_ref": str(seed_ref),
        "transform": None if transform is None or transform.is_identity else transform.to_dict(),
    }


def write_claim(path, claimant_id, content_ref, seed_ref, transform=None) -> None:
    doc = claim_document(claimant_id, content_ref, seed_ref, transform)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_claim(path) -> Claim:
    """Read a claim file; relative refs resolve against the claim's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("version") != CLAIM_VERSION:
            raise ProtocolError(f"unsupported claim version {doc.get('version')!r}")
        base = path.parent
        content_ref, seed_ref = doc["content_ref"], doc["seed_ref"]
        content = read_tensor(base / content_ref)
        seed = read_seed(base / seed_ref)
        transform = doc.get("transform")
        g = None if transform is None else TransformSpec.from_dict(transform)
        return Claim(str(doc["claimant_id"]), content, seed, g, content_ref, seed_ref)
    except ProtocolError:
        raise
    except (OSError, KeyError, TypeError, ValueError, FormatError) as exc:
        raise ProtocolError(f"cannot read claim {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# verification and dispute
# ---------------------------------------------------------------------------

def _check_dims(x: LatentTensor, spec: NoiseSpec):
    if x.size != spec.length:
        raise ShapeMismatchError(f"content holds {x.size} values, noise spec expects {spec.length}")


def verify(x: LatentTensor, seed: SeedRecord, tau: float, spec: NoiseSpec) -> ScoreReport:
    """Accept iff the NoisePrint of ``x`` under ``seed`` reaches ``tau``."""
    _check_dims(x, spec)
    eps = derive_noise(seed, spec, x.shape)
    try:
        phi = noiseprint_score(x, eps)
    except DegenerateInputError as exc:
        return ScoreReport(0.0, tau, x.size, note=f"rejected: {exc}")
    return ScoreReport(phi, tau, x.size)


def _cross_report(x, eps, g, tau):
    try:
        phi, frac = extended_score(x, eps, g)
    except (DegenerateInputError, InsufficientOverlapError) as exc:
        return ScoreReport(-1.0, tau, x.size, g, 0.0, note=f"rejected: {exc}")
    return ScoreReport(phi, tau, x.size, g, frac)


@dataclass(frozen=True)
class DisputeVerdict:
    winner: str
    self_pass_a: bool
    self_pass_b: bool
    cross_pass_a: bool
    cross_pass_b: bool
    scores: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "winner": self.winner,
            "self_pass_a": self.self_pass_a,
            "self_pass_b": self.self_pass_b,
            "cross_pass_a": self.cross_pass_a,
            "cross_pass_b": self.cross_pass_b,
            "scores": {k: v.to_dict() for k, v in self.scores.items()},
        }


def decide(valid_a: bool, valid_b: bool) -> str:
    if valid_a and not valid_b:
        return A
    if valid_b and not valid_a:
        return B
    return UNRESOLVED


def dispute(claim_a: Claim, claim_b: Claim, tau: float, spec: NoiseSpec) -> DisputeVerdict:
    """Resolve two conflicting claims with self and cross checks.

    Each claimant's seed must match their own content (self check) and, after
    their declared transform, the opponent's content (cross check).
    """
    xa, xb = claim_a.content, claim_b.content
    if xa.shape != xb.shape:
        raise ShapeMismatchError(f"claims carry different shapes {xa.shape} and {xb.shape}")
    _check_dims(xa, spec)
    eps_a = derive_noise(claim_a.seed, spec, xa.shape)
    eps_b = derive_noise(claim_b.seed, spec, xb.shape)
    ga = claim_a.transform or TransformSpec.identity()
    gb = claim_b.transform or TransformSpec.identity()

    self_a = _cross_report(xa, eps_a, None, tau)
    self_b = _cross_report(xb, eps_b, None, tau)
    cross_a = _cross_report(xb, eps_a, ga, tau)
    cross_b = _cross_report(xa, eps_b, gb, tau)
    valid_a = self_a.passed and cross_a.passed
    valid_b = self_b.passed and cross_b.passed
    return DisputeVerdict(
        decide(valid_a, valid_b), self_a.passed, self_b.passed, cross_a.passed, cross_b.passed,
        {"self_a": self_a, "self_b": self_b, "cross_a": cross_a, "cross_b": cross_b},
    )


# ---------------------------------------------------------------------------
# claimant-side alignment estimation
# ---------------------------------------------------------------------------

def _safe_score(transformed, reference, g):
    try:
        return extended_score(transformed, reference, g)[0]
    except (InsufficientOverlapError, DegenerateInputError):
        return -math.inf


def _estimate_rotation(original_like, transformed):
    def score(theta):
        return _safe_score(transformed, original_like, TransformSpec.rotation(-theta))

    coarse = np.arange(-45, 46, 1.0)
    best = max(coarse, key=score)
    fine = np.round(np.arange(best - 1.0, best + 1.0 + 1e-9, 0.1), 10)
    best = max(fine, key=score)
    return TransformSpec.rotation(float(best) + 0.0), score(best)


def _offset_candidates(original_like, transformed, f, top=3):
    """Integer crop offsets ranked by FFT cross-correlation at crop factor ``f``."""
    C, H, W = original_like.shape
    max_ox = int(math.floor(W - f * W + 1e-9))
    max_oy = int(math.floor(H - f * H + 1e-9))
    # realignment assuming offset (0, 0): R0(p) = T((p + 0.5) / f - 0.5)
    realign = inverse_transform(TransformSpec.crop_scale(f, 0, 0), H, W)
    r0 = apply_transform(transformed, realign).data.astype(np.float64)
    ref = original_like.data.astype(np.float64)
    shape = (2 * H, 2 * W)
    spec = np.fft.rfft2(ref, shape) * np.conj(np.fft.rfft2(r0, shape))
    corr = np.fft.irfft2(spec.sum(axis=0), shape)[: max_oy + 1, : max_ox + 1]
    flat = np.argsort(corr, axis=None)[::-1][:top]
    return [(int(i % (max_ox + 1)), int(i // (max_ox + 1))) for i in flat]


def _estimate_crop(original_like, transformed):
    C, H, W = original_like.shape

    def score(g):
        return _safe_score(transformed, original_like, inverse_transform(g, H, W))

    def best_at(f):
        f = float(min(f, 1.0))
        cands = []
        for ox, oy in _offset_candidates(original_like, transformed, f):
            cands.append(TransformSpec.crop_scale(f, ox, oy))
        scored = [(score(g), g) for g in cands]
        return max(scored, key=lambda t: t[0])

    coarse = [best_at(f) for f in np.round(np.arange(0.6, 1.0 + 1e-9, 0.02), 10)]
    s0, g0 = max(coarse, key=lambda t: t[0])
    f0 = g0.params["crop_factor"]
    fine_f = [f for f in np.round(np.arange(f0 - 0.02, f0 + 0.02 + 1e-9, 0.002), 10)
              if 0.6 - 1e-9 <= f <= 1.0]
    fine = [best_at(f) for f in fine_f]
    s1, g1 = max(fine + [(s0, g0)], key=lambda t: t[0])
    # polish: integer offset neighbourhood at the chosen factor
    f1, ox1, oy1 = g1.params["crop_factor"], g1.params["offset_x"], g1.params["offset_y"]
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            try:
                g = TransformSpec.crop_scale(f1, ox1 + dx, oy1 + dy)
                sampling_map(g, H, W)
            except ValueError:
                continue
            s = score(g)
            if s > s1:
                s1, g1 = s, g
    return g1, s1


def estimate_alignment(original_like: LatentTensor, transformed: LatentTensor,
                       family: str, tau: float | None = None) -> TransformSpec:
    """Estimate the transform that produced ``transformed`` from content like ``original_like``.

    Returns the estimated forward transform; the claimant submits its
    :func:`~noiseprints.tensors.inverse_transform` in a dispute.
    """
    if original_like.shape != transformed.shape:
        raise ShapeMismatchError("alignment needs equal shapes")
    if family == "rotation":
        g, best = _estimate_rotation(original_like, transformed)
    elif family == "crop_scale":
        g, best = _estimate_crop(original_like, transformed)
    else:
        raise ValueError(f"unsupported alignment family {family!r}")
    if tau is None:
        tau = calibrate_threshold(original_like.size, (1.0, -128))
    if not best >= 2 * tau:
        raise EstimationFailedError(f"best alignment score {best:.4f} is below 2*tau={2 * tau:.4f}")
    return g


# ---------------------------------------------------------------------------
# append-only registry
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def _locked(path: Path):
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "a+") as fh:
        try:
            import fcntl
        except ImportError:  # pragma: no cover - non-POSIX
            yield
            return
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def registry_append(path, claims, verdict, now=None) -> dict:
    """Append one record for ``claims`` and their verdict; returns the record."""
    path = Path(path)
    if isinstance(claims, Claim):
        claims = [claims]
    if hasattr(verdict, "to_dict"):
        verdict = verdict.to_dict()
    stamp = (now or _dt.datetime.now(_dt.timezone.utc)).isoformat()
    record = {
        "timestamp": stamp,
        "claim_digests": [c.digest() for c in claims],
        "claimants": [c.claimant_id for c in claims],
        "verdict": verdict,
    }
    line = json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"
    with _locked(path):
        with open(path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
    return record


def registry_list(path) -> list:
    """Replay the registry, skipping corrupt lines with a warning."""
    path = Path(path)
    if not path.exists():
        return []
    records = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not an object")
            except ValueError as exc:
                log.warning("skipping corrupt registry line %d in %s: %s", n, path, exc)
                continue
            records.append(rec)
    return records
