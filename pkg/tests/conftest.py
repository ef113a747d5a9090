import numpy as np
import pytest

from noiseprints import NoiseSpec, SeedRecord, SyntheticSpec, derive_noise, synth_latent


@pytest.fixture
def alice():
    return SeedRecord(bytes(range(32)), "alice")


@pytest.fixture
def bob():
    return SeedRecord(bytes(range(100, 132)), "bob")


@pytest.fixture
def structure():
    return SeedRecord(b"\x07" * 32, "structure")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def make_pair(seed, structure, alpha=0.482, shape=(4, 64, 64)):
    """Synthetic latent plus the noise it was correlated with."""
    z = synth_latent(seed, SyntheticSpec(alpha, structure, shape))
    eps = derive_noise(seed, NoiseSpec.for_length(int(np.prod(shape))), shape)
    return z, eps


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
