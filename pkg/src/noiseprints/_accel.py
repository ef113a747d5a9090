"""Backend selection for the numeric kernels.

Set ``NOISEPRINTS_DISABLE_NUMBA=1`` to force the pure-numpy code paths.
Both paths produce bit-identical results; numba is only faster.
"""
import os

_FLAG = "NOISEPRINTS_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    Kernels are always compiled if numba exists so that benchmarks and the
    cross-backend tests can reach them even when the env flag is set.
    """
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def threads():
    """Parallelism cap from ``NOISEPRINTS_THREADS`` (0 or unset means auto)."""
    raw = os.environ.get("NOISEPRINTS_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n
