"""Counter-based random streams.

All randomness goes through Philox keyed by a 64-bit seed. Independent streams
are addressed by putting the stream index in the third counter word, so stream
``k`` for a given seed is the same no matter which thread or order draws it.
"""

from __future__ import annotations

import os

import numpy as np

GENERATOR_NAME = "philox4x64"
_MAX_SEED = 2**64


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must be in [0, 2**64), got {seed}")
    return seed


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for stream ``index`` under ``seed``."""
    if index < 0:
        raise ValueError("stream index must be non-negative")
    bitgen = np.random.Philox(key=check_seed(seed), counter=[0, 0, int(index), 0])
    return np.random.Generator(bitgen)


def resolve_threads() -> int:
    """Worker count from ``AUGMENT_VR_THREADS`` (0 or unset means cpu count)."""
    raw = os.environ.get("AUGMENT_VR_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"AUGMENT_VR_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("AUGMENT_VR_THREADS must be >= 0")
    return n or (os.cpu_count() or 1)
