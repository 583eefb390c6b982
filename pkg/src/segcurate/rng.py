"""Deterministic random streams used everywhere randomness is needed.

All stochastic behaviour in this package is a pure function of a 64-bit
seed, built on the splitmix64 finaliser. The same functions are
re-implemented verbatim by conforming external workers, so the exact
bit-level behaviour here is a compatibility contract: do not change the
constants, the stream indexing, or the seed derivation encoding.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _finalize(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def stream(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Words ``offset .. offset+n-1`` of the splitmix64 sequence for ``seed``.

    Word ``i`` depends only on ``(seed, i)``, so any slice of the stream can
    be produced without generating its prefix.
    """
    idx = np.arange(offset + 1, offset + n + 1, dtype=np.uint64)
    return _finalize(np.uint64(seed & MASK64) + idx * _GOLDEN)


def uniform(seed: int, n: int, offset: int = 0) -> np.ndarray:
    """Stream words mapped to float64 uniforms in [0, 1)."""
    return (stream(seed, n, offset) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_at(seed: int, index: int) -> float:
    """Single uniform draw for stream position ``index``."""
    return float(uniform(seed, 1, offset=index)[0])


def derive_seed(base: int, *parts: int | str) -> int:
    """Derive an independent 64-bit seed from a base seed and a label path.

    Stable across processes and platforms: the parts are rendered to a
    canonical ASCII string and hashed with SHA-256. Used to key candidate
    generation, per-component corruption, pixel jitter, and labeller noise
    off one pipeline seed.
    """
    text = "scv1|" + str(base & MASK64) + "".join("|" + str(p) for p in parts)
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")
