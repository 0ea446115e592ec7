"""Splittable counter-based random streams.

A stream is addressed by ``(seed, key...)``.  Child streams append an
integer to the key, so replicate ``k`` of an experiment always draws from
``stream.child(k)`` no matter which worker runs it or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Stream:
    seed: int
    key: tuple[int, ...] = ()

    def child(self, *idx: int) -> "Stream":
        return Stream(self.seed, self.key + tuple(int(i) for i in idx))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(ss))

    def label(self) -> str:
        return ":".join(str(k) for k in (self.seed,) + self.key)


def as_generator(rng) -> np.random.Generator:
    """Accept a Stream, an int seed or a ready Generator."""
    if isinstance(rng, Stream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def as_stream(rng) -> Stream:
    if isinstance(rng, Stream):
        return rng
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng))
    raise TypeError(f"expected a Stream or int seed, got {type(rng).__name__}")


def standard_exponential(gen: np.random.Generator, size) -> np.ndarray:
    # inverse CDF on (0, 1]; platform independent unlike the ziggurat sampler
    u = gen.random(size)
    return -np.log1p(-u)
