"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (also collected into
the pytest terminal summary). Run directly with ``python tests/test_acceptance.py``
for the lines alone.
"""
from __future__ import annotations

import hashlib
import math
import statistics
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

sys.path.insert(0, str(Path(__file__).parent))

from noiseprints import (AttackSpec, LatentTensor, NoiseSpec, SeedRecord, SyntheticSpec,  # noqa: E402
                         apply_attack, calibrate_threshold, cap_bound, dispute,
                         exact_cap_probability, gaussian_from_uniform, noiseprint_score, psnr,
                         synth_latent, verify, zk_prove_emulated, zk_verify_emulated)
from noiseprints._accel import threads  # noqa: E402
from noiseprints.noise import derive_noise, derive_noise_flat  # noqa: E402
from noiseprints.zk import FieldConfig, bundle_from_dict, bundle_to_dict, nd_lookup_array  # noqa: E402
from scenarios import injection_scenario, removal_scenario  # noqa: E402

RESULTS: list = []


def report(n, title, ok, detail):
    line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def sub_seed(tag: bytes, i: int) -> SeedRecord:
    return SeedRecord(hashlib.sha256(tag + struct.pack("<I", i)).digest(), tag.decode())


# 1 -------------------------------------------------------------------------

TABLE1 = [(16384, 0.101739), (65536, 0.051000), (262144, 0.025500), (1297920, 0.011460)]


def test_01_threshold_reproduction():
    t0 = time.perf_counter()
    got = [(d, calibrate_threshold(d, (1.0, -128)), ref) for d, ref in TABLE1]
    elapsed = time.perf_counter() - t0
    misses = [f"d={d}: {tau:.6f} vs {ref:.6f} (off {tau - ref:+.1e})"
              for d, tau, ref in got if abs(tau - ref) > 5e-6]
    ok = not misses and elapsed < 1.0
    detail = (f"{len(TABLE1) - len(misses)}/4 within 5e-6 in {elapsed:.2f}s"
              + (f"; {'; '.join(misses)}" if misses else ""))
    report(1, "threshold reproduction", ok, detail)


# 2 -------------------------------------------------------------------------

def test_02_cap_formula_vs_monte_carlo():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    n = 10_000_000
    worst, rows = 0.0, 0
    for d in (3, 8, 64, 512):
        # cosine with a fixed axis: X1 / sqrt(X1^2 + chi2_{d-1})
        x1 = rng.standard_normal(n)
        cos = x1 / np.sqrt(x1 * x1 + rng.chisquare(d - 1, n))
        for p_target in (0.25, 1e-2, 1e-3):
            tau = calibrate_threshold(d, p_target)
            p = math.exp(exact_cap_probability(d, tau))
            assert p >= 1e-4
            z = abs((cos >= tau).mean() - p) / math.sqrt(p * (1 - p) / n)
            worst, rows = max(worst, z), rows + 1
    closed = max(abs(math.exp(exact_cap_probability(3, t)) - (1 - t) / 2)
                 for t in np.linspace(0, 0.99, 100))
    elapsed = time.perf_counter() - t0
    ok = worst <= 3.0 and closed <= 1e-12 and elapsed < 60
    report(2, "exact cap vs Monte Carlo", ok,
           f"{rows} cells, worst {worst:.2f} sd; d=3 closed-form error {closed:.1e}; "
           f"{elapsed:.1f}s")


# 3 -------------------------------------------------------------------------

def test_03_bound_dominance():
    dims = np.unique(np.round(np.logspace(math.log10(2), 6, 50)).astype(int))
    taus = np.linspace(0.0, 0.99, 50)
    bad = sum(exact_cap_probability(int(d), float(t)) > cap_bound(int(d), float(t))
              for d in dims for t in taus)
    report(3, "bound dominance", bad == 0,
           f"{bad} violations on {len(dims)}x{len(taus)} grid")


# 4 -------------------------------------------------------------------------

_FPR_SHAPE = (4, 64, 64)


def _fpr_chunk(args):
    lo, hi, tau = args
    z = synth_latent(sub_seed(b"fpr-owner", 0),
                     SyntheticSpec(0.482, sub_seed(b"fpr-structure", 0), _FPR_SHAPE))
    zf = z.flat().astype(np.float64)
    zn = np.linalg.norm(zf)
    spec = NoiseSpec.for_length(zf.size)
    hits = 0
    for i in range(lo, hi):
        e = derive_noise_flat(sub_seed(b"fpr-guess", i), spec).astype(np.float32)
        hits += float(zf @ e) / (zn * float(np.linalg.norm(e.astype(np.float64)))) >= tau
    return hits


def test_04_empirical_fpr():
    t0 = time.perf_counter()
    n, delta, d = 100_000, 1e-3, 16384
    tau = calibrate_threshold(d, delta)
    workers = threads()
    bounds = np.linspace(0, n, 4 * workers + 1).astype(int)
    jobs = [(int(a), int(b), tau) for a, b in zip(bounds[:-1], bounds[1:])]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            hits = sum(pool.map(_fpr_chunk, jobs))
    else:
        hits = sum(map(_fpr_chunk, jobs))
    lo, hi = stats.binom.interval(0.99, n, delta)
    elapsed = time.perf_counter() - t0
    ok = lo <= hits <= hi and elapsed < 300
    report(4, "empirical FPR", ok,
           f"{hits}/{n} false accepts at tau={tau:.6f}; 99% interval [{lo:.0f}, {hi:.0f}]; "
           f"{elapsed:.0f}s")


# 5 -------------------------------------------------------------------------

def test_05_unattacked_pass_rate():
    spec = NoiseSpec.for_length(16384)
    passes = 0
    for t in range(200):
        seed = sub_seed(b"tpr-seed", t)
        z = synth_latent(seed, SyntheticSpec(0.482, sub_seed(b"tpr-structure", t)))
        passes += verify(z, seed, 0.101739, spec).passed
    report(5, "unattacked pass rate", passes == 200, f"TPR {passes / 200:.2f} over 200 trials")


# 6 -------------------------------------------------------------------------

def test_06_geometric_disputes():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    spec, tau = NoiseSpec.for_length(16384), 0.101739
    wins, worst = 0, {}
    for i in range(100):
        if i % 2 == 0:
            fam, p = "rotation", float(rng.uniform(-45, 45))
        else:
            fam, p = "crop_scale", float(rng.uniform(0.6, 0.9))
        try:
            a, b, _, _ = removal_scenario(1000 + i, fam, p)
            v = dispute(a, b, tau, spec)
            won = v.winner == "A"
            margin = v.scores["cross_a"].phi
        except Exception as exc:  # estimation failure counts as a loss
            won, margin = False, float("nan")
            worst.setdefault("errors", []).append(f"{fam}({p:.3f}): {exc}")
        wins += won
        if not (margin >= worst.get(fam, (math.inf,))[0]):
            worst[fam] = (margin, p)
    elapsed = time.perf_counter() - t0
    ok = wins == 100 and elapsed < 600
    mins = ", ".join(f"{k} min cross {v[0]:.3f} at {v[1]:.2f}"
                     for k, v in worst.items() if k != "errors")
    report(6, "geometric dispute resolution", ok,
           f"owner won {wins}/100; {mins}; {elapsed:.0f}s")


# 7 -------------------------------------------------------------------------

def _mutations(doc):
    """Every single-witness-element change of a JSON bundle, as (label, mutated doc)."""
    def bump(h):
        return hex(int(h, 16) + 1)

    out = []
    for ci, ch in enumerate(doc["chunks"]):
        for key in ("dot_prod", "sq_mag"):
            out.append((f"chunk{ci}.{key}", ("chunks", ci, key), bump(ch[key])))
        out.append((f"chunk{ci}.sign", ("chunks", ci, "sign"), 1 - ch["sign"]))
        for key in ("com", "r"):
            raw = bytearray.fromhex(ch[key])
            raw[0] ^= 1
            out.append((f"chunk{ci}.{key}", ("chunks", ci, key), raw.hex()))
        for k, (m, s) in enumerate(ch["noise"]):
            out.append((f"chunk{ci}.e{k}.mag", ("noise", ci, k, 0), bump(m)))
            out.append((f"chunk{ci}.e{k}.sign", ("noise", ci, k, 1), 1 - s))
    for key in ("mag", "CA"):
        out.append((f"combine.{key}", ("combine", key), bump(doc["combine"][key])))
    out.append(("combine.CA_sign", ("combine", "CA_sign"), 1 - doc["combine"]["CA_sign"]))
    raw = bytearray.fromhex(doc["s_priv"])
    raw[5] ^= 0x80
    out.append(("s_priv", ("s_priv",), raw.hex()))
    return out


def _apply(doc, path, value):
    import copy
    d = copy.deepcopy(doc)
    if path[0] == "chunks":
        d["chunks"][path[1]][path[2]] = value
    elif path[0] == "noise":
        d["chunks"][path[1]]["noise"][path[2]][path[3]] = value
    elif path[0] == "combine":
        d["combine"][path[1]] = value
    else:
        d["s_priv"] = value
    return d


def test_07_zk_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    shape, spec = (4, 32, 32), NoiseSpec(4096, 8)
    cfg = FieldConfig(length=4096, chunks=8)
    agree = cases = 0
    disagreements = []
    while cases < 1000:
        i = cases
        seed = sub_seed(b"zk-seed", i)
        alpha, tau = float(rng.uniform(0.0, 0.5)), float(rng.uniform(0.0, 0.5))
        z = synth_latent(seed, SyntheticSpec(alpha, sub_seed(b"zk-structure", i), shape,
                                             rms=float(rng.uniform(0.2, 5.0))))
        float_rep = verify(z, seed, tau, spec)
        if abs(float_rep.phi - tau) <= 1e-4:
            continue
        circuit = zk_verify_emulated(zk_prove_emulated(seed, z, tau, cfg), z, seed.s_pub, tau).ok
        cases += 1
        if circuit == float_rep.passed:
            agree += 1
        else:
            disagreements.append((i, float_rep.phi, tau))

    small_cfg = FieldConfig(length=56, chunks=2)
    sites = accepted_mutants = honest_bad = 0
    for j in range(5):
        seed = sub_seed(b"zk-mut", j)
        z = synth_latent(seed, SyntheticSpec(0.6, sub_seed(b"zk-mut-structure", j), (1, 7, 8)),
                         small_cfg.noise_spec)
        doc = bundle_to_dict(zk_prove_emulated(seed, z, 0.1, small_cfg))
        honest_bad += not zk_verify_emulated(bundle_from_dict(doc), z, seed.s_pub, 0.1).ok
        for _label, path, value in _mutations(doc):
            sites += 1
            res = zk_verify_emulated(bundle_from_dict(_apply(doc, path, value)), z, seed.s_pub, 0.1)
            accepted_mutants += res.ok
    elapsed = time.perf_counter() - t0
    ok = agree == 1000 and accepted_mutants == 0 and honest_bad == 0 and elapsed < 600
    report(7, "ZK emulation equivalence", ok,
           f"{agree}/1000 circuit/float agreements; {sites - accepted_mutants}/{sites} "
           f"mutations rejected on L=56 ({5 - honest_bad}/5 honest accepted); {elapsed:.0f}s")


# 8 -------------------------------------------------------------------------

def test_08_fixed_float_agreement():
    u = np.random.default_rng(8).integers(0, 1 << 33, 100_000)
    mag, sign = nd_lookup_array(u)
    fixed = np.where(sign == 1, -mag, mag) / 2.0 ** 32
    err = np.abs(fixed - gaussian_from_uniform(u))
    bad = int(np.sum(err > 2.0 ** -32 + 2e-9))
    report(8, "fixed/float noise agreement", bad == 0,
           f"{bad} violations over 1e5 draws, max error {err.max():.2e}")


# 9 -------------------------------------------------------------------------

def _time_score(d, rng):
    a = LatentTensor(rng.standard_normal((1, 1, d)).astype(np.float32))
    b = LatentTensor(rng.standard_normal((1, 1, d)).astype(np.float32))
    noiseprint_score(a, b)
    reps = max(5, int(4e6 // d))
    best = math.inf
    for _ in range(7):
        t0 = time.perf_counter()
        for _ in range(reps):
            noiseprint_score(a, b)
        best = min(best, (time.perf_counter() - t0) / reps)
    return best


def test_09_scoring_cost():
    rng = np.random.default_rng(9)
    dims = (2 ** 14, 2 ** 18, 1297920)
    t = {d: _time_score(d, rng) for d in dims}
    per = [t[d] / d for d in dims]
    ratio = max(per) / min(per)
    ok = t[1297920] <= 0.050 and ratio <= 1.5
    report(9, "scoring cost scaling", ok,
           f"{t[1297920] * 1e3:.2f} ms at d=1297920; per-element cost spread x{ratio:.2f}")


# 10 ------------------------------------------------------------------------

def test_10_decorrelation_ordering():
    tau = 0.101739
    eps_spec = NoiseSpec.for_length(16384)
    perfect, mixed, psnrs = [], [], []
    for t in range(100):
        seed = sub_seed(b"dec-seed", t)
        z = synth_latent(seed, SyntheticSpec(0.48, sub_seed(b"dec-structure", t)))
        eps = derive_noise(seed, eps_spec, z.shape)
        att = sub_seed(b"dec-attack", t)
        zp = apply_attack(z, AttackSpec("decorrelate", 0.5, att, 0.0, 100), eps)
        zm = apply_attack(z, AttackSpec("decorrelate", 0.5, att, 0.5, 100), eps)
        perfect.append(noiseprint_score(zp, eps))
        mixed.append(noiseprint_score(zm, eps))
        psnrs.append(psnr(z, zp))
    med_phi, med_psnr = statistics.median(perfect), statistics.median(psnrs)
    p = stats.wilcoxon(mixed, perfect, alternative="greater").pvalue
    raised = statistics.median(mixed) > med_phi and p < 0.01
    ok = med_phi < tau and med_psnr >= 20 and raised
    report(10, "decorrelation-attack ordering", ok,
           f"median phi {med_phi:.4f} (needs < {tau}); median PSNR {med_psnr:.1f} dB; "
           f"50% mixing median phi {statistics.median(mixed):.4f}, paired p={p:.1e}")


# 11 ------------------------------------------------------------------------

def test_11_injection_only_disputes():
    spec, tau = NoiseSpec.for_length(16384), 0.101739
    wins = valid = 0
    for i in range(100):
        a, b = injection_scenario(500 + i)
        v = dispute(a, b, tau, spec)
        # fixture validity: adversary self-passes, owner's print survives on modified content
        valid += v.self_pass_b and v.cross_pass_a
        wins += v.winner == "A"
    ok = valid == 100 and wins == 100
    report(11, "injection-only disputes", ok,
           f"{valid}/100 valid fixtures, owner won {wins}/100")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
