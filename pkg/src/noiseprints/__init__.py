"""Verifiable authorship for generated content via seed-derived noise correlation.

Generated latents correlate with the Gaussian noise they were sampled from.
Re-deriving that noise from a seed and measuring the cosine similarity (the
NoisePrint) yields a hypothesis test whose false-positive rate is known
exactly from spherical-cap geometry.
"""
from .calibration import (CalibrationParams, FalsePositiveRate, calibrate, calibrate_threshold,
                          cap_bound, exact_cap_probability, log_reg_inc_beta)
from .errors import (AttackDivergedError, DegenerateInputError, EstimationFailedError,
                     FormatError, InsufficientOverlapError, InvalidTransformError,
                     NoisePrintsError, NumericalError, ProtocolError, ShapeMismatchError)
from .harness import (AttackSpec, RobustnessReport, SyntheticSpec, apply_attack,
                      decorrelate_attack, evaluate_robustness, psnr, ssim, synth_latent)
from .kernels import BACKEND
from .noise import (NoiseSpec, SeedRecord, acklam_ppf, chunk_digest, derive_noise,
                    expand_uniforms, gaussian_from_uniform, read_seed, write_seed)
from .protocols import (Claim, DisputeVerdict, dispute, estimate_alignment, load_claim,
                        registry_append, registry_list, verify, write_claim)
from .scoring import (ScoreReport, correlation_map, extended_score, low_entropy_warning,
                      masked_score, noiseprint_score)
from .tensors import (LatentTensor, OverlapMask, TransformSpec, apply_transform,
                      inverse_transform, read_tensor, transform_mask, write_tensor)
from .zk import (CombineInstance, DpmInstance, FieldConfig, SignedFixed, combine_check, commit,
                 dpm_check, dpm_generate_witness, nd_lookup, zk_prove_emulated,
                 zk_verify_emulated)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
