"""Keyed, counter-based random streams.

Every random quantity in a run is drawn from a generator whose Philox key is a
hash of ``(seed, *key)``, so any loop can be re-derived from its key alone and
results do not depend on evaluation order or worker count.
"""
import hashlib
from dataclasses import dataclass

import numpy as np


def _canon(part):
    if isinstance(part, (bool, np.bool_)):
        return "b1" if part else "b0"
    if isinstance(part, (int, np.integer)):
        return f"i{int(part)}"
    if isinstance(part, (float, np.floating)):
        return f"f{float(part).hex()}"
    if isinstance(part, str):
        return f"s{part}"
    if isinstance(part, (tuple, list, np.ndarray)):
        return "(" + ",".join(_canon(p) for p in part) + ")"
    raise TypeError(f"unsupported stream key part {part!r}")


@dataclass(frozen=True)
class RandomStream:
    seed: int
    key: tuple = ()

    def child(self, *parts):
        return RandomStream(self.seed, self.key + tuple(parts))

    def philox_key(self):
        text = _canon((self.seed,) + self.key).encode()
        return int.from_bytes(hashlib.blake2b(text, digest_size=16).digest(), "little")

    def generator(self):
        return np.random.Generator(np.random.Philox(key=self.philox_key()))


def open_uniform(rng, size=None):
    """Uniform draws on the open interval (0, 1)."""
    return rng.random(size) + 2.0 ** -54
