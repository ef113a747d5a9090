"""Synthetic latents, latent-space attacks, quality metrics and TPR/FPR sweeps.

Real generators and encoders are out of reach here, so content is synthesized
as ``alpha * epshat + sqrt(1 - alpha^2) * uhat`` with ``uhat`` a smooth field
orthogonal to the noise; its score against the seed is exactly ``alpha``.
"""
from __future__ import annotations

import csv
import hashlib
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.fft import dctn, idctn

from ._accel import threads as _threads
from .calibration import FalsePositiveRate, calibrate_threshold
from .errors import AttackDivergedError, ShapeMismatchError
from .noise import NoiseSpec, SeedRecord, derive_noise
from .scoring import noiseprint_score
from .tensors import LatentTensor, TransformSpec, apply_transform, resize_bilinear

DEFAULT_SHAPE = (4, 64, 64)


@dataclass(frozen=True)
class SyntheticSpec:
    alpha: float
    structure_seed: SeedRecord
    shape: tuple = DEFAULT_SHAPE
    structure_cutoff: float = 0.25
    rms: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.structure_cutoff <= 1.0:
            raise ValueError("structure_cutoff must lie in (0, 1]")
        if not self.rms > 0:
            raise ValueError("rms must be positive")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


def _unit(v):
    return v / np.linalg.norm(v)


def lowpass(field_: np.ndarray, cutoff: float) -> np.ndarray:
    """Keep spatial frequencies below ``cutoff`` times Nyquist, per channel."""
    C, H, W = field_.shape
    fy = np.fft.fftfreq(H)[:, None]
    fx = np.fft.rfftfreq(W)[None, :]
    keep = np.hypot(fy, fx) <= 0.5 * cutoff
    spec = np.fft.rfft2(field_, axes=(1, 2)) * keep
    return np.fft.irfft2(spec, s=(H, W), axes=(1, 2))


def _seq_phi(z32, e32):
    from . import kernels
    ab, aa, bb = kernels.dot3(z32.reshape(-1), e32.reshape(-1))
    return ab / (math.sqrt(aa) * math.sqrt(bb))


def _pin_score(z32, e32, alpha, tol=2e-11, rounds=40):
    """Nudge a few float32 entries so the stored tensor scores ``alpha`` exactly."""
    flat = z32.reshape(-1)
    e = e32.reshape(-1).astype(np.float64)
    order = np.argsort(-np.abs(e))[:64]
    for k in range(rounds):
        phi = _seq_phi(flat, e32)
        err = alpha - phi
        if abs(err) <= tol:
            break
        i = order[k % order.size]
        zn = math.sqrt(float(np.dot(flat.astype(np.float64), flat.astype(np.float64))))
        en = math.sqrt(float(np.dot(e, e)))
        grad = e[i] / (zn * en) - phi * float(flat[i]) / (zn * zn)
        if grad == 0.0:
            continue
        target = float(flat[i]) + err / grad
        flat[i] = np.float32(target)
    return z32


def synth_latent(seed: SeedRecord, spec: SyntheticSpec, noise_spec: NoiseSpec | None = None):
    """Content latent whose NoisePrint under ``seed`` equals ``spec.alpha``."""
    d = math.prod(spec.shape)
    noise_spec = noise_spec or NoiseSpec.for_length(d)
    eps = derive_noise(seed, noise_spec, spec.shape)
    e = eps.data.astype(np.float64).reshape(-1)
    e_hat = _unit(e)
    raw = derive_noise(spec.structure_seed, noise_spec, spec.shape).data.astype(np.float64)
    u = lowpass(raw, spec.structure_cutoff).reshape(-1)
    u = u - np.dot(u, e_hat) * e_hat
    u = u - np.dot(u, e_hat) * e_hat
    u_hat = _unit(u)
    a = spec.alpha
    z = (a * e_hat + math.sqrt(max(0.0, 1.0 - a * a)) * u_hat) * (spec.rms * math.sqrt(d))
    z32 = z.astype(np.float32).reshape(spec.shape)
    if a < 1.0:
        _pin_score(z32, eps.data, a)
    return LatentTensor(z32)


# ---------------------------------------------------------------------------
# quality metrics
# ---------------------------------------------------------------------------

def psnr(a: LatentTensor, b: LatentTensor) -> float:
    """PSNR in dB with the dynamic range taken as max - min of ``a``."""
    if a.shape != b.shape:
        raise ShapeMismatchError("psnr needs equal shapes")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    rng = float(x.max() - x.min())
    if rng == 0.0:
        return -math.inf
    return 10.0 * math.log10(rng * rng / mse)


def ssim(a: LatentTensor, b: LatentTensor, win=8, k1=0.01, k2=0.03) -> float:
    """Mean SSIM over all 8x8 sliding windows of every channel."""
    if a.shape != b.shape:
        raise ShapeMismatchError("ssim needs equal shapes")
    x = a.data.astype(np.float64)
    y = b.data.astype(np.float64)
    if np.array_equal(x, y):
        return 1.0
    L = float(x.max() - x.min())
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    wy, wx = min(win, x.shape[1]), min(win, x.shape[2])
    view = np.lib.stride_tricks.sliding_window_view
    xw = view(x, (wy, wx), axis=(1, 2))
    yw = view(y, (wy, wx), axis=(1, 2))
    mx = xw.mean(axis=(-2, -1))
    my = yw.mean(axis=(-2, -1))
    vx = xw.var(axis=(-2, -1))
    vy = yw.var(axis=(-2, -1))
    cxy = (xw * yw).mean(axis=(-2, -1)) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# attacks
# ---------------------------------------------------------------------------

ATTACK_RANGES = {
    "none": (0.0, 0.0),
    "brightness": (1e-6, 1e6),
    "contrast": (1e-6, 1e6),
    "blur": (0.0, 64.0),
    "noise": (0.0, 100.0),
    "quantize": (1.0, 100.0),
    "resize": (0.01, 1.0),
    "renoise": (0.0, 1.0),
    "decorrelate": (0.0, 100.0),
    "rotation": (-180.0, 180.0),
    "crop_scale": (0.05, 1.0),
}
STOCHASTIC = {"noise", "renoise", "decorrelate"}

# IJG luminance quantization table
JPEG_LUMA = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    severity: float = 0.0
    attack_seed: SeedRecord | None = None
    estimate_mix: float = 0.0
    steps: int = 100

    def __post_init__(self):
        if self.kind not in ATTACK_RANGES:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        lo, hi = ATTACK_RANGES[self.kind]
        if not lo <= self.severity <= hi:
            raise ValueError(f"{self.kind} severity {self.severity} outside [{lo}, {hi}]")
        if not 0.0 <= self.estimate_mix <= 1.0:
            raise ValueError("estimate_mix must lie in [0, 1]")

    @property
    def label(self):
        return self.kind if self.kind == "none" else f"{self.kind}:{self.severity:g}"


def _fresh_noise(seed: SeedRecord, shape, tag: bytes):
    sub = SeedRecord(hashlib.sha256(seed.s_priv + tag).digest(), seed.s_pub)
    d = math.prod(shape)
    return derive_noise(sub, NoiseSpec.for_length(d), shape).data.astype(np.float64)


def jpeg_like(data: np.ndarray, quality: float) -> np.ndarray:
    """8x8 block-DCT coefficient quantization with the IJG quality scaling."""
    q = max(1.0, min(100.0, float(quality)))
    scale = 5000.0 / q if q < 50 else 200.0 - 2.0 * q
    table = np.maximum(np.floor((JPEG_LUMA * scale + 50.0) / 100.0), 1.0)
    out = np.array(data, dtype=np.float64)
    lo, hi = float(out.min()), float(out.max())
    unit = (hi - lo) / 255.0 if hi > lo else 1.0
    C, H, W = out.shape
    Hp, Wp = -(-H // 8) * 8, -(-W // 8) * 8
    pad = np.pad((out - lo) / unit - 128.0, ((0, 0), (0, Hp - H), (0, Wp - W)), mode="edge")
    blocks = pad.reshape(C, Hp // 8, 8, Wp // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = dctn(blocks, axes=(-2, -1), norm="ortho")
    coef = np.round(coef / table) * table
    rec = idctn(coef, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(C, Hp, Wp)[:, :H, :W]
    return (rec + 128.0) * unit + lo


def apply_attack(z: LatentTensor, a: AttackSpec, eps: LatentTensor | None = None) -> LatentTensor:
    """Apply one attack; deterministic given ``(z, a)`` (and ``eps`` for decorrelate)."""
    if a.kind in STOCHASTIC and a.attack_seed is None:
        raise ValueError(f"{a.kind} attack requires attack_seed")
    x = z.data.astype(np.float64)
    s = a.severity
    if a.kind == "none":
        return z
    if a.kind == "brightness":
        out = x * s
    elif a.kind == "contrast":
        mu = x.mean(axis=(1, 2), keepdims=True)
        out = mu + s * (x - mu)
    elif a.kind == "blur":
        if s == 0:
            return z
        out = np.stack([ndimage.gaussian_filter(ch, s, mode="reflect") for ch in x])
    elif a.kind == "noise":
        out = x + s * _fresh_noise(a.attack_seed, z.shape, b"noise")
    elif a.kind == "quantize":
        out = jpeg_like(x, s)
    elif a.kind == "resize":
        h = max(1, int(round(z.height * s)))
        w = max(1, int(round(z.width * s)))
        small = resize_bilinear(z.data, h, w)
        return LatentTensor(resize_bilinear(small, z.height, z.width))
    elif a.kind == "renoise":
        out = math.sqrt(1.0 - s * s) * x + s * _fresh_noise(a.attack_seed, z.shape, b"renoise")
    elif a.kind == "decorrelate":
        if eps is None:
            raise ValueError("decorrelate attack needs the noise it targets")
        est = noise_estimate(eps, a.estimate_mix, a.attack_seed)
        return decorrelate_attack(z, est, s, a.steps)
    elif a.kind == "rotation":
        return apply_transform(z, TransformSpec.rotation(s))
    else:
        return apply_transform(z, TransformSpec.centered_crop(s, z.height, z.width))
    return LatentTensor(out.astype(np.float32))


def noise_estimate(eps: LatentTensor, mix: float, seed: SeedRecord) -> LatentTensor:
    """Adversary's noise estimate: ``mix`` of its variance is independent noise."""
    e = eps.data.astype(np.float64)
    if mix == 0.0:
        return eps
    other = _fresh_noise(seed, eps.shape, b"estimate")
    other *= np.linalg.norm(e) / np.linalg.norm(other)
    return LatentTensor((math.sqrt(1.0 - mix) * e + math.sqrt(mix) * other).astype(np.float32))


def decorrelate_loss_and_grad(y, x_hat, e_hat, w):
    """Loss ``|y - x_hat|^2 + w cos(y, e)`` and its gradient in normalized units."""
    ny = np.linalg.norm(y)
    y_hat = y / ny
    c = float(np.dot(y_hat, e_hat))
    diff = y - x_hat
    loss = float(np.dot(diff, diff)) + w * c
    grad = 2.0 * diff + w * (e_hat - c * y_hat) / ny
    return loss, grad


def decorrelate_attack(z: LatentTensor, eps_estimate: LatentTensor, w: float, steps: int = 100,
                       step_size: float = 0.1, patience: int = 10) -> LatentTensor:
    """Gradient descent on ``|x_t - x|^2 / |x|^2 + w * cos(x_t, eps_estimate)``.

    The fidelity term is measured relative to ``|x|^2`` so the attack acts the
    same on a latent and on any rescaling of it.
    """
    if z.shape != eps_estimate.shape:
        raise ShapeMismatchError("latent and noise estimate differ in shape")
    x = z.data.astype(np.float64).reshape(-1)
    scale = np.linalg.norm(x)
    if scale == 0.0:
        raise ValueError("cannot attack a zero latent")
    if w == 0.0 or steps == 0:
        return z
    x_hat = x / scale
    e_hat = _unit(eps_estimate.data.astype(np.float64).reshape(-1))
    y = x_hat.copy()
    prev = math.inf
    rising = 0
    for _ in range(steps):
        loss, grad = decorrelate_loss_and_grad(y, x_hat, e_hat, w)
        rising = rising + 1 if loss > prev else 0
        if rising >= patience or not math.isfinite(loss):
            raise AttackDivergedError(
                f"loss rose for {rising} consecutive steps (last {loss:.6g}); lower step_size")
        prev = loss
        y = y - step_size * grad
    return LatentTensor((y * scale).astype(np.float32).reshape(z.shape))


# ---------------------------------------------------------------------------
# robustness sweep
# ---------------------------------------------------------------------------

def trial_seed(master: bytes, t: int, tag: bytes = b"") -> bytes:
    return hashlib.sha256(master + struct.pack("<I", t) + tag).digest()


@dataclass
class RobustnessReport:
    fpr_log2_grid: list
    dimension_d: int
    rows: list = field(default_factory=list)

    def cell(self, label):
        return [r for r in self.rows if r["attack_label"] == label]

    def tpr(self, label, fpr_log2):
        for r in self.rows:
            if r["attack_label"] == label and r["fpr_log2"] == fpr_log2:
                return r["tpr"]
        raise KeyError((label, fpr_log2))

    COLUMNS = ("attack", "severity", "fpr_log2", "tpr", "mean_psnr_db", "mean_ssim", "trials")

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.COLUMNS)
            for r in self.rows:
                wr.writerow([r[c] if not isinstance(r[c], float) else repr(r[c])
                             for c in self.COLUMNS])


def _run_trial(args):
    t, master, alpha, attacks, shape, cutoff = args
    seed = SeedRecord(trial_seed(master, t), f"trial-{t}")
    structure = SeedRecord(trial_seed(master, t, b"structure"))
    attack_seed = SeedRecord(trial_seed(master, t, b"attack"))
    spec = SyntheticSpec(alpha, structure, shape, cutoff)
    d = math.prod(shape)
    ns = NoiseSpec.for_length(d)
    z = synth_latent(seed, spec, ns)
    eps = derive_noise(seed, ns, shape)
    out = []
    for a in attacks:
        a = AttackSpec(a.kind, a.severity, attack_seed, a.estimate_mix, a.steps)
        za = apply_attack(z, a, eps)
        out.append((noiseprint_score(za, eps), psnr(z, za), ssim(z, za)))
    return out


def evaluate_robustness(trials: int, alpha: float, attacks, fpr_log2_grid,
                        master_seed: bytes = b"noiseprints-eval", shape=DEFAULT_SHAPE,
                        structure_cutoff: float = 0.25, workers: int | None = None):
    """TPR at each FPR for every attack over ``trials`` synthetic latents."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    attacks = list(attacks)
    shape = tuple(shape)
    d = math.prod(shape)
    grid = [float(f) for f in fpr_log2_grid]
    taus = {f: calibrate_threshold(d, FalsePositiveRate.from_log2(f)) for f in grid}
    jobs = [(t, master_seed, alpha, attacks, shape, structure_cutoff) for t in range(trials)]
    workers = _threads() if workers is None else max(1, workers)
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_run_trial(j) for j in jobs]

    report = RobustnessReport(grid, d)
    for k, a in enumerate(attacks):
        phis = np.array([r[k][0] for r in results])
        ps = np.array([r[k][1] for r in results])
        ss = np.array([r[k][2] for r in results])
        for f in grid:
            report.rows.append({
                "attack": a.kind,
                "severity": float(a.severity),
                "attack_label": a.label,
                "fpr_log2": f,
                "tau": taus[f],
                "tpr": float(np.mean(phis >= taus[f])),
                "mean_psnr_db": float(np.mean(ps)),
                "mean_ssim": float(np.mean(ss)),
                "trials": trials,
            })
    return report
