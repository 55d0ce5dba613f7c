"""Counter-based random streams.

A stream is a Philox generator whose 128-bit key is a hash of
``(seed, *path)``.  Any stream can be rebuilt from its key alone, so layers of
an environment or trajectories of an ensemble are reproducible one at a time
and in any order.
"""
from __future__ import annotations

import numpy as np

# Philox draws are 4x64-bit blocks; one step block covers this many doubles.
BLOCK = 1 << 16


def _zigzag(k: int) -> int:
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


def stream_key(seed: int, *path: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=_zigzag(seed), spawn_key=tuple(_zigzag(p) for p in path))
    return ss.generate_state(2, dtype=np.uint64)


def stream(seed: int, *path: int, block: int = 0) -> np.random.Generator:
    """Generator keyed by ``(seed, *path)``, positioned at step block ``block``."""
    bitgen = np.random.Philox(key=stream_key(seed, *path))
    if block:
        # each double consumes one 64-bit output; Philox advances in 256-bit units
        bitgen = bitgen.advance(block * BLOCK // 4)
    return np.random.Generator(bitgen)


def uniforms(seed: int, index: int, n: int, out: np.ndarray | None = None) -> np.ndarray:
    """``n`` uniforms in [0, 1) for trajectory ``index`` of ensemble ``seed``."""
    gen = stream(seed, index)
    if out is None:
        return gen.random(n)
    gen.random(out=out[:n])
    return out
