"""
Named, reproducible random streams

Every stochastic site (initialization, shuffling, noise, sampling) draws from a
stream identified by a name. Streams are counter-based Philox generators keyed
by (seed, crc32(name)), so adding a new stream never perturbs existing ones.
"""
import zlib
from typing import Dict

import numpy as np


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode('utf-8'))


class RngStreams:
    """Splittable family of named random generators"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Persistent generator for name (continues where it left off)"""
        if name not in self._streams:
            self._streams[name] = self.fresh(name)
        return self._streams[name]

    def fresh(self, name: str) -> np.random.Generator:
        """New generator for name, always starting from the same state"""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(_stream_key(name),))
        return np.random.Generator(np.random.Philox(sequence))

    def split(self, name: str) -> 'RngStreams':
        """Independent child family"""
        sequence = np.random.SeedSequence(self.seed, spawn_key=(_stream_key(name),))
        return RngStreams(int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)))

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed})"
