"""``noiseprints`` command line.

Exit codes: 0 success, accept or winner A; 1 reject or winner B; 2 unresolved;
3 usage error; 4 runtime error. ``NOISEPRINTS_THREADS`` caps worker processes
for ``evaluate`` (0 means one per CPU).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys

import numpy as np

from .calibration import LN2, calibrate, cap_bound, FalsePositiveRate
from .errors import NoisePrintsError
from .harness import (AttackSpec, SyntheticSpec, apply_attack, evaluate_robustness, psnr, ssim,
                      synth_latent)
from .noise import NoiseSpec, SeedRecord, derive_noise, read_seed, write_seed
from .protocols import A, B, dispute, estimate_alignment, load_claim, registry_append, verify
from .scoring import (correlation_map, extended_score, low_entropy_warning, noiseprint_score,
                      write_pgm)
from .tensors import TransformSpec, inverse_transform, read_tensor, write_tensor
from .zk import FieldConfig, read_bundle, write_bundle, zk_prove_emulated, zk_verify_emulated

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_REJECT, EXIT_UNRESOLVED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3, 4
DEFAULT_FPR_LOG2 = -128.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _emit(args, obj, human):
    if args.json:
        print(json.dumps(obj, sort_keys=True, allow_nan=True))
    else:
        for line in human:
            print(line)


def _noise_spec(args, d):
    chunks = getattr(args, "chunks", None)
    return NoiseSpec.for_length(d, chunks)


def _threshold(args, d):
    """Resolve exactly one of ``--tau`` and ``--fpr-log2`` (default 2**-128)."""
    tau = getattr(args, "tau", None)
    fpr = getattr(args, "fpr_log2", None)
    if tau is not None and fpr is not None:
        raise UsageError("give either --tau or --fpr-log2, not both")
    if tau is not None:
        if not -1.0 <= tau <= 1.0:
            raise UsageError("--tau must lie in [-1, 1]")
        return tau
    return calibrate(d, FalsePositiveRate.from_log2(DEFAULT_FPR_LOG2 if fpr is None else fpr)).tau


def _transform_arg(text):
    if text is None:
        return None
    try:
        return TransformSpec.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise UsageError(f"--transform is not JSON: {exc}") from None


def _load_seed(args):
    return read_seed(args.seed)


def _tag_seed(tag: str) -> SeedRecord:
    return SeedRecord(hashlib.sha256(tag.encode("utf-8")).digest(), tag)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_derive(args):
    if args.new_seed:
        seed = SeedRecord.generate(args.s_pub or "")
        write_seed(args.new_seed, seed)
    elif args.seed:
        seed = read_seed(args.seed)
    else:
        raise UsageError("derive needs --seed or --new-seed")
    shape = tuple(args.shape)
    d = math.prod(shape)
    eps = derive_noise(seed, _noise_spec(args, d), shape)
    if args.out:
        write_tensor(args.out, eps)
    digest = hashlib.sha256(np.ascontiguousarray(eps.data, "<f4").tobytes()).hexdigest()
    _emit(args, {"shape": list(shape), "s_pub": seed.s_pub, "noise_sha256": digest,
                 "out": args.out},
          [f"derived {shape} noise for s_pub={seed.s_pub!r}", f"sha256 {digest}"])
    return EXIT_OK


def cmd_calibrate(args):
    fpr = FalsePositiveRate.from_log2(args.fpr_log2)
    params = calibrate(args.dim, fpr)
    achieved = params.achieved_log2
    bound_tau = math.sqrt(min(1.0, 2.0 * -fpr.log() / (args.dim - 1)))
    _emit(args, {"dimension_d": args.dim, "fpr_log2": args.fpr_log2, "tau": params.tau,
                 "achieved_fpr_log2": achieved, "bound_tau": bound_tau,
                 "bound_log2_at_tau": cap_bound(args.dim, params.tau) / LN2},
          [f"{params.tau:.6f}",
           f"achieved log2 FPR {achieved:.6f} (target {args.fpr_log2:g}); "
           f"exponential-bound threshold {bound_tau:.6f}"])
    return EXIT_OK


def cmd_score(args):
    z = read_tensor(args.tensor)
    seed = _load_seed(args)
    eps = derive_noise(seed, _noise_spec(args, z.size), z.shape)
    g = _transform_arg(args.transform)
    phi, frac = extended_score(z, eps, g) if g else (noiseprint_score(z, eps), 1.0)
    tau = _threshold(args, z.size)
    _emit(args, {"phi": phi, "tau": tau, "pass": phi >= tau, "masked_fraction": frac,
                 "dimension_d": z.size},
          [f"phi {phi:.6f}", f"tau {tau:.6f} -> {'pass' if phi >= tau else 'fail'}"
           f" (margin {phi - tau:+.6f}, overlap {frac:.3f})"])
    return EXIT_OK


def cmd_verify(args):
    if args.claim:
        if args.tensor or args.seed:
            raise UsageError("--claim excludes --tensor/--seed")
        claim = load_claim(args.claim)
        z, seed = claim.content, claim.seed
    elif args.tensor and args.seed:
        z, seed = read_tensor(args.tensor), read_seed(args.seed)
    else:
        raise UsageError("verify needs --claim or both --tensor and --seed")
    tau = _threshold(args, z.size)
    rep = verify(z, seed, tau, _noise_spec(args, z.size))
    flag, diag = low_entropy_warning(z, tau, rep.phi)
    out = rep.to_dict()
    out["low_entropy_warning"] = flag
    out["diagnostics"] = diag
    human = [f"{'ACCEPT' if rep.passed else 'REJECT'}: phi {rep.phi:.6f} vs tau {tau:.6f}"]
    if rep.note:
        human.append(rep.note)
    if flag:
        human.append("warning: content looks low-entropy or the margin is thin")
    _emit(args, out, human)
    return EXIT_OK if rep.passed else EXIT_REJECT


def cmd_dispute(args):
    ca, cb = load_claim(args.claim_a), load_claim(args.claim_b)
    tau = _threshold(args, ca.content.size)
    v = dispute(ca, cb, tau, _noise_spec(args, ca.content.size))
    if args.registry:
        registry_append(args.registry, [ca, cb], v)
    s = v.scores
    _emit(args, dict(v.to_dict(), tau=tau),
          [f"winner: {v.winner}",
           f"A self {s['self_a'].phi:.4f} cross {s['cross_a'].phi:.4f}; "
           f"B self {s['self_b'].phi:.4f} cross {s['cross_b'].phi:.4f}; tau {tau:.6f}"])
    return {A: EXIT_OK, B: EXIT_REJECT}.get(v.winner, EXIT_UNRESOLVED)


def cmd_estimate_align(args):
    orig, tr = read_tensor(args.original), read_tensor(args.transformed)
    tau = _threshold(args, orig.size)
    g = estimate_alignment(orig, tr, args.family, tau)
    inv = inverse_transform(g, orig.height, orig.width)
    _emit(args, {"estimated": g.to_dict(), "realign": inv.to_dict()},
          [f"estimated {json.dumps(g.to_dict(), sort_keys=True)}",
           f"claim transform {json.dumps(inv.to_dict(), sort_keys=True)}"])
    return EXIT_OK


def cmd_simulate(args):
    seed = _load_seed(args)
    structure = read_seed(args.structure_seed) if args.structure_seed \
        else _tag_seed(args.structure_tag)
    spec = SyntheticSpec(args.alpha, structure, tuple(args.shape), args.cutoff, args.rms)
    z = synth_latent(seed, spec, _noise_spec(args, math.prod(spec.shape)))
    write_tensor(args.out, z)
    eps = derive_noise(seed, _noise_spec(args, z.size), z.shape)
    phi = noiseprint_score(z, eps)
    _emit(args, {"phi": phi, "shape": list(z.shape), "out": args.out},
          [f"wrote {z.shape} latent with phi {phi:.10f} to {args.out}"])
    return EXIT_OK


def cmd_attack(args):
    z = read_tensor(args.tensor)
    eps = None
    if args.seed:
        eps = derive_noise(_load_seed(args), _noise_spec(args, z.size), z.shape)
    a = AttackSpec(args.kind, args.severity, _tag_seed(args.attack_tag), args.estimate_mix,
                   args.steps)
    if a.kind == "decorrelate" and eps is None:
        raise UsageError("decorrelate needs --seed for the targeted noise")
    za = apply_attack(z, a, eps)
    write_tensor(args.out, za)
    out = {"attack": a.kind, "severity": a.severity, "psnr_db": psnr(z, za),
           "ssim": ssim(z, za), "out": args.out}
    human = [f"{a.label}: PSNR {out['psnr_db']:.2f} dB, SSIM {out['ssim']:.4f}"]
    if eps is not None:
        out["phi_before"] = noiseprint_score(z, eps)
        out["phi_after"] = noiseprint_score(za, eps)
        human.append(f"phi {out['phi_before']:.4f} -> {out['phi_after']:.4f}")
    _emit(args, out, human)
    return EXIT_OK


def _parse_attack(text):
    kind, _, sev = text.partition(":")
    try:
        return AttackSpec(kind, float(sev) if sev else 0.0)
    except ValueError as exc:
        raise UsageError(f"bad --attack {text!r}: {exc}") from None


def cmd_evaluate(args):
    attacks = [_parse_attack(t) for t in (args.attack or ["none"])]
    grid = list(args.fpr_log2_grid)
    rep = evaluate_robustness(args.trials, args.alpha, attacks, grid,
                              master_seed=args.master_seed.encode("utf-8"),
                              shape=tuple(args.shape), workers=args.workers)
    if args.csv:
        rep.to_csv(args.csv)
    rows = [{k: r[k] for k in rep.COLUMNS} for r in rep.rows]
    _emit(args, {"rows": rows, "dimension_d": rep.dimension_d, "csv": args.csv},
          [f"{r['attack']:>11} {r['severity']:>7g}  log2FPR {r['fpr_log2']:>7g}  "
           f"TPR {r['tpr']:.3f}  PSNR {r['mean_psnr_db']:.2f}  SSIM {r['mean_ssim']:.4f}"
           for r in rows])
    return EXIT_OK


def cmd_corr_map(args):
    z = read_tensor(args.tensor)
    eps = derive_noise(_load_seed(args), _noise_spec(args, z.size), z.shape)
    smooth, mask = correlation_map(z, eps, args.sigma, args.threshold)
    if args.out:
        write_pgm(args.out, mask)
    _emit(args, {"mean": float(smooth.mean()), "fraction_above": float(mask.mean()),
                 "max": float(smooth.max()), "min": float(smooth.min()), "out": args.out},
          [f"map mean {smooth.mean():.4f}, {100 * mask.mean():.1f}% above {args.threshold:g}"])
    return EXIT_OK


def _field_config(args, image_size):
    if args.field_config:
        return FieldConfig.load(args.field_config)
    return FieldConfig(length=image_size, chunks=NoiseSpec.for_length(image_size, args.chunks).chunks)


def cmd_zk_prove(args):
    z = read_tensor(args.tensor)
    cfg = _field_config(args, z.size)
    tau = _threshold(args, z.size)
    b = zk_prove_emulated(_load_seed(args), z, tau, cfg)
    write_bundle(args.out, b)
    ca = b.combine.ca.value() / cfg.scale
    _emit(args, {"out": args.out, "CA": ca, "tau": tau, "chunks": cfg.chunks},
          [f"wrote emulated proof ({cfg.chunks} chunks) to {args.out}",
           f"fixed-point cosine {ca:.6f} vs tau {tau:.6f}",
           "note: the bundle contains s_priv in the clear; it is not a zero-knowledge proof"])
    return EXIT_OK


def cmd_zk_verify(args):
    z = read_tensor(args.tensor)
    b = read_bundle(args.bundle)
    tau = _threshold(args, z.size)
    res = zk_verify_emulated(b, z, args.s_pub, tau)
    _emit(args, {"ok": res.ok, "constraint": res.constraint, "index": res.index, "tau": tau},
          [("ACCEPT" if res.ok else f"REJECT at {res.constraint}"
            + ("" if res.index is None else f" (index {res.index})"))])
    return EXIT_OK if res.ok else EXIT_REJECT


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_threshold(p):
    p.add_argument("--tau", type=float, help="decision threshold")
    p.add_argument("--fpr-log2", type=float,
                   help="calibrate tau for this log2 false-positive rate (default -128)")


def _add_shape(p, default=(4, 64, 64)):
    p.add_argument("--shape", type=int, nargs=3, metavar=("C", "H", "W"), default=list(default))


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="print one JSON object")
    common.add_argument("--config", help="TOML file with defaults ([run], [noise] tables)")
    common.add_argument("--chunks", type=int, help="noise chunk count (default 8 when it divides L)")
    common.add_argument("-v", "--verbose", action="store_true")

    root = _Parser(prog="noiseprints", description="NoisePrint authorship tools")
    sub = root.add_subparsers(dest="command", required=True, parser_class=_Parser)

    root.subcommands = {}

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=fn)
        root.subcommands[name] = p
        return p

    p = add("derive", cmd_derive, "derive the seed's Gaussian noise tensor")
    p.add_argument("--seed", help="existing NPS1 seed file")
    p.add_argument("--new-seed", help="generate a fresh seed and write it here")
    p.add_argument("--s-pub", help="ownership string for --new-seed")
    _add_shape(p)
    p.add_argument("--out", help="write the noise as an NPT1 tensor")

    p = add("calibrate", cmd_calibrate, "threshold for a target false-positive rate")
    p.add_argument("--dim", type=int, required=True, help="latent dimension d")
    p.add_argument("--fpr-log2", type=float, default=DEFAULT_FPR_LOG2)

    p = add("score", cmd_score, "NoisePrint score of a tensor under a seed")
    p.add_argument("--tensor", required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--transform", help='JSON such as {"kind": "rotation", "angle_degrees": 30}')
    _add_threshold(p)

    p = add("verify", cmd_verify, "accept or reject a claim")
    p.add_argument("--claim")
    p.add_argument("--tensor")
    p.add_argument("--seed")
    _add_threshold(p)

    p = add("dispute", cmd_dispute, "resolve two conflicting claims")
    p.add_argument("--claim-a", required=True)
    p.add_argument("--claim-b", required=True)
    p.add_argument("--registry", help="append the verdict to this JSON-lines registry")
    _add_threshold(p)

    p = add("estimate-align", cmd_estimate_align, "estimate the transform between two tensors")
    p.add_argument("--original", required=True)
    p.add_argument("--transformed", required=True)
    p.add_argument("--family", choices=["rotation", "crop_scale"], required=True)
    _add_threshold(p)

    p = add("simulate", cmd_simulate, "synthesize a latent correlated with the seed")
    p.add_argument("--seed", required=True)
    p.add_argument("--alpha", type=float, default=0.482)
    p.add_argument("--structure-seed", help="seed file for the structure field")
    p.add_argument("--structure-tag", default="structure",
                   help="derive the structure seed from this string when no file is given")
    p.add_argument("--cutoff", type=float, default=0.25)
    p.add_argument("--rms", type=float, default=1.0)
    _add_shape(p)
    p.add_argument("--out", required=True)

    p = add("attack", cmd_attack, "apply one latent-space attack")
    p.add_argument("--tensor", required=True)
    p.add_argument("--kind", required=True, choices=sorted(
        ["none", "brightness", "contrast", "blur", "noise", "quantize", "resize", "renoise",
         "decorrelate", "rotation", "crop_scale"]))
    p.add_argument("--severity", type=float, default=0.0)
    p.add_argument("--seed", help="seed whose noise is reported on or targeted")
    p.add_argument("--attack-tag", default="attack", help="string the attack randomness derives from")
    p.add_argument("--estimate-mix", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "TPR/FPR sweep over synthetic trials")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.482)
    p.add_argument("--attack", action="append", help="kind:severity, repeatable")
    p.add_argument("--fpr-log2-grid", type=float, nargs="+", default=[-128.0, -64.0, -32.0, -16.0, -10.0])
    p.add_argument("--master-seed", default="noiseprints-eval")
    p.add_argument("--workers", type=int, help="worker processes (default NOISEPRINTS_THREADS)")
    _add_shape(p)
    p.add_argument("--csv", help="write the report CSV here")

    p = add("corr-map", cmd_corr_map, "spatial correlation map and threshold mask")
    p.add_argument("--tensor", required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out", help="write the mask as a binary PGM")

    p = add("zk-prove", cmd_zk_prove, "build an emulated (non-hiding) proof bundle")
    p.add_argument("--tensor", required=True)
    p.add_argument("--seed", required=True)
    p.add_argument("--field-config", help="TOML with prime, F, L, n")
    p.add_argument("--out", required=True)
    _add_threshold(p)

    p = add("zk-verify", cmd_zk_verify, "check an emulated proof bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--tensor", required=True)
    p.add_argument("--s-pub", required=True)
    _add_threshold(p)
    return root


def _config_defaults(path, command):
    """Option defaults for ``command`` from a TOML file; flags still win."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for table in ("run", "noise", command.replace("-", "_")):
        out.update({k.replace("-", "_"): v for k, v in doc.get(table, {}).items()})
    if "field" in doc:
        out.setdefault("field_config", path)
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    try:
        known, _ = pre.parse_known_args(argv)
        if known.config and known.command in parser.subcommands:
            parser.subcommands[known.command].set_defaults(
                **_config_defaults(known.config, known.command))
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"noiseprints: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoisePrintsError, OSError, ValueError, ArithmeticError) as exc:
        print(f"noiseprints: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
