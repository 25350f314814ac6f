"""Per-trajectory random streams.

Each trajectory owns a counter-based Philox generator keyed by
``(seed, trajectory index)``, so adding trajectories or changing the worker
count never changes the noise an existing trajectory sees.
"""

from __future__ import annotations

import hashlib
from typing import Iterator, Sequence

import numpy as np

NOISE_KINDS = ("gaussian", "two-point")


def trajectory_generator(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def draw_increments(gen: np.random.Generator, n: int, dt: float,
                    kind: str = "gaussian") -> np.ndarray:
    """``n`` Wiener increments with variance ``dt``.

    ``"two-point"`` draws ``+-sqrt(dt)`` with equal probability, which has
    the right first two moments and makes ``dW^2 = dt`` hold exactly.
    """
    if kind == "gaussian":
        return gen.standard_normal(n) * np.sqrt(dt)
    if kind == "two-point":
        return (2.0 * gen.integers(0, 2, size=n) - 1.0) * np.sqrt(dt)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


class NoiseStream:
    """Chunked increments for one trajectory."""

    def __init__(self, seed: int, index: int, dt: float, kind: str = "gaussian"):
        self.gen = trajectory_generator(seed, index)
        self.dt = dt
        self.kind = kind

    def take(self, n: int) -> np.ndarray:
        return draw_increments(self.gen, n, self.dt, self.kind)


def increments(seed: int, index: int, n_steps: int, dt: float, kind: str = "gaussian") -> np.ndarray:
    """The full increment sequence of one trajectory."""
    return NoiseStream(seed, index, dt, kind).take(n_steps)


def block_chunks(seed: int, indices: Sequence[int], n_steps: int, dt: float,
                 kind: str = "gaussian", chunk: int = 2048) -> Iterator[np.ndarray]:
    """Yield ``(len(indices), m)`` blocks of increments covering ``n_steps`` steps.

    Row ``b`` is exactly the stream of trajectory ``indices[b]``; the chunk
    size only changes how it is sliced.
    """
    streams = [NoiseStream(seed, i, dt, kind) for i in indices]
    done = 0
    while done < n_steps:
        m = min(chunk, n_steps - done)
        yield np.stack([s.take(m) for s in streams])
        done += m


def checksum(dW: np.ndarray) -> str:
    """Hex digest of an increment array, for asserting streams are shared."""
    return hashlib.sha256(np.ascontiguousarray(dW, dtype=np.float64).tobytes()).hexdigest()[:16]
