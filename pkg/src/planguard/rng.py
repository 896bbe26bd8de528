"""Deterministic named random streams.

Every stochastic draw in an episode comes from a named stream whose seed is
derived by hashing the episode key and the stream name with SHA-256.  The
generators themselves are ``random.Random`` (Mersenne Twister), which is
bit-identical across platforms and Python versions.  Keeping streams separate
(layout, drop, pickfail, place, detector) means adding draws to one process
never perturbs another, so per-module calibration tests stay stable.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(*parts: object) -> int:
    """Stable 64-bit seed from arbitrary key parts (order-sensitive)."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class StreamSet:
    """Lazily-created independent streams sharing one base key."""

    def __init__(self, *key: object):
        self.key = tuple(key)
        self._streams: dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            rng = random.Random(derive_seed(*self.key, name))
            self._streams[name] = rng
        return rng


def poisson(rng: random.Random, mu: float) -> int:
    """Knuth's multiplicative Poisson sampler (fine for the small means here)."""
    if mu <= 0.0:
        return 0
    limit = 2.718281828459045 ** (-mu)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def unit_direction(rng: random.Random) -> tuple[float, float]:
    """Uniform direction on the circle via rejection sampling.

    Avoids trig so results are bit-identical across libm implementations.
    """
    while True:
        x = rng.uniform(-1.0, 1.0)
        y = rng.uniform(-1.0, 1.0)
        s = x * x + y * y
        if 1e-9 < s <= 1.0:
            norm = s ** 0.5
            return x / norm, y / norm
