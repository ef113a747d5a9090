import math

import numpy as np
import pytest

from conftest import make_pair
from noiseprints import (AttackDivergedError, AttackSpec, LatentTensor, SeedRecord, SyntheticSpec,
                         apply_attack, decorrelate_attack, evaluate_robustness,
                         noiseprint_score, psnr, ssim, synth_latent)

ATTACK_SEED = SeedRecord(b"\x42" * 32, "attack")


@pytest.mark.parametrize("alpha", [0.0, 0.1, 0.482, 0.9])
def test_synthetic_score_is_exact(alice, structure, alpha):
    z, eps = make_pair(alice, structure, alpha)
    assert noiseprint_score(z, eps) == pytest.approx(alpha, abs=1e-10)


def test_alpha_one_is_noise_direction(alice, structure):
    z, eps = make_pair(alice, structure, 1.0)
    assert noiseprint_score(z, eps) == pytest.approx(1.0, abs=1e-7)


def test_synthetic_rms_and_validation(alice, structure):
    z = synth_latent(alice, SyntheticSpec(0.3, structure, (4, 32, 32), rms=2.0))
    assert np.sqrt(np.mean(z.data.astype(float) ** 2)) == pytest.approx(2.0, rel=1e-5)
    with pytest.raises(ValueError):
        SyntheticSpec(1.2, structure)


def test_attack_validation():
    with pytest.raises(ValueError):
        AttackSpec("melt", 1.0)
    with pytest.raises(ValueError):
        AttackSpec("resize", 2.0)
    with pytest.raises(ValueError):
        apply_attack(LatentTensor(np.ones((1, 4, 4), np.float32)), AttackSpec("noise", 0.1))


@pytest.mark.parametrize("s", [2.0, 4.0, 0.5])
def test_brightness_power_of_two_is_exact(alice, structure, s):
    z, eps = make_pair(alice, structure)
    za = apply_attack(z, AttackSpec("brightness", s))
    assert noiseprint_score(za, eps) == pytest.approx(noiseprint_score(z, eps), abs=1e-12)


def test_brightness_other_factors_within_float32_rounding(alice, structure):
    # x * 3 is rounded back to float32, so only the decision (not every bit) is invariant
    z, eps = make_pair(alice, structure)
    za = apply_attack(z, AttackSpec("brightness", 3.0))
    assert noiseprint_score(za, eps) == pytest.approx(noiseprint_score(z, eps), abs=1e-9)


def test_attacks_preserve_shape_and_are_deterministic(alice, structure):
    z, eps = make_pair(alice, structure)
    for a in [AttackSpec("contrast", 0.5), AttackSpec("blur", 2), AttackSpec("quantize", 25),
              AttackSpec("resize", 0.3), AttackSpec("renoise", 0.4, ATTACK_SEED),
              AttackSpec("noise", 0.2, ATTACK_SEED), AttackSpec("rotation", 10),
              AttackSpec("crop_scale", 0.8), AttackSpec("decorrelate", 0.3, ATTACK_SEED)]:
        out = apply_attack(z, a, eps)
        assert out.shape == z.shape
        assert out == apply_attack(z, a, eps)


def test_noise_attack_matches_analytic(structure):
    # phi after adding sigma * n to a unit-rms latent is alpha / sqrt(1 + sigma^2) on average
    sigma, alpha, vals = 0.2, 0.48, []
    for i in range(40):
        seed = SeedRecord(i.to_bytes(32, "little"), "t")
        z, eps = make_pair(seed, structure, alpha)
        att = SeedRecord(i.to_bytes(32, "big"), "n")
        vals.append(noiseprint_score(apply_attack(z, AttackSpec("noise", sigma, att)), eps))
    assert np.mean(vals) == pytest.approx(alpha / math.sqrt(1 + sigma ** 2), abs=2e-3)


def test_blur_lowers_score(structure):
    drops = 0
    for i in range(50):
        z, eps = make_pair(SeedRecord(i.to_bytes(32, "little"), "t"), structure)
        drops += noiseprint_score(apply_attack(z, AttackSpec("blur", 2)), eps) < 0.482
    assert drops >= 50 * 0.99


def test_renoise_variance_preserving(alice, structure):
    z, eps = make_pair(alice, structure)
    out = apply_attack(z, AttackSpec("renoise", 0.6, ATTACK_SEED))
    assert np.var(out.data) == pytest.approx(np.var(z.data), rel=0.05)
    assert noiseprint_score(out, eps) == pytest.approx(0.482 * 0.8, abs=0.02)


def test_quantize_degrades_monotonically(alice, structure):
    z, eps = make_pair(alice, structure)
    scores = [noiseprint_score(apply_attack(z, AttackSpec("quantize", q)), eps)
              for q in (90, 25, 10)]
    assert scores[0] > scores[1] > scores[2]


def test_psnr_ssim_basics(rng, alice, structure):
    z, _ = make_pair(alice, structure)
    assert psnr(z, z) == math.inf and ssim(z, z) == 1.0
    # negation is anti-correlated when windows are near zero-mean
    yy, xx = np.mgrid[:64, :64]
    checker = np.where((yy + xx) % 2, 1.0, -1.0) * (1.5 + np.sin(xx / 9.0))
    a = LatentTensor(np.stack([checker] * 2).astype(np.float32))
    assert ssim(a, LatentTensor(-a.data)) < 0
    noise = rng.uniform(-0.1, 0.1, z.shape).astype(np.float32)
    b = LatentTensor(z.data + noise)
    mse = np.mean((b.data.astype(float) - z.data.astype(float)) ** 2)
    rng_ = float(z.data.max()) - float(z.data.min())
    assert psnr(z, b) == pytest.approx(10 * math.log10(rng_ ** 2 / mse), rel=1e-12)


def test_ssim_against_windowed_oracle(rng):
    a = rng.standard_normal((1, 12, 12))
    b = a + 0.3 * rng.standard_normal((1, 12, 12))
    L = a.max() - a.min()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    vals = []
    for i in range(5):
        for j in range(5):
            x, y = a[0, i:i + 8, j:j + 8].ravel(), b[0, i:i + 8, j:j + 8].ravel()
            mx, my = x.mean(), y.mean()
            cov = ((x - mx) * (y - my)).mean()
            vals.append((2 * mx * my + c1) * (2 * cov + c2)
                        / ((mx ** 2 + my ** 2 + c1) * (x.var() + y.var() + c2)))
    got = ssim(LatentTensor(a.astype(np.float32)), LatentTensor(b.astype(np.float32)))
    assert got == pytest.approx(np.mean(vals), abs=1e-6)


def test_decorrelate_zero_weight_is_identity(alice, structure):
    z, eps = make_pair(alice, structure)
    assert decorrelate_attack(z, eps, 0.0) == z


def test_decorrelate_lowers_score_and_estimate_quality_matters(alice, structure):
    z, eps = make_pair(alice, structure)
    perfect = apply_attack(z, AttackSpec("decorrelate", 0.5, ATTACK_SEED, 0.0), eps)
    mixed = apply_attack(z, AttackSpec("decorrelate", 0.5, ATTACK_SEED, 0.5), eps)
    assert noiseprint_score(perfect, eps) < noiseprint_score(mixed, eps) < 0.482
    assert psnr(z, perfect) >= 20


def test_decorrelate_divergence_detected(alice, structure):
    z, eps = make_pair(alice, structure)
    with pytest.raises(AttackDivergedError):
        decorrelate_attack(z, eps, 0.5, steps=100, step_size=1.5)


def test_evaluate_robustness(tmp_path):
    attacks = [AttackSpec("none"), AttackSpec("brightness", 4), AttackSpec("noise", 0.1),
               AttackSpec("noise", 0.3), AttackSpec("blur", 4)]
    grid = [-128, -32, -8]
    r1 = evaluate_robustness(12, 0.482, attacks, grid, workers=1)
    r2 = evaluate_robustness(12, 0.482, attacks, grid, workers=2)
    assert r1.rows == r2.rows
    assert r1.tpr("none", -128) == 1.0
    assert r1.tpr("brightness:4", -128) == r1.tpr("none", -128)
    assert r1.tpr("noise:0.3", -128) <= r1.tpr("noise:0.1", -128)
    for label in {r["attack_label"] for r in r1.rows}:
        tprs = [r1.tpr(label, f) for f in grid]
        assert tprs == sorted(tprs)
    r1.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "attack,severity,fpr_log2,tpr,mean_psnr_db,mean_ssim,trials"
    assert len(lines) == 1 + len(attacks) * len(grid)
