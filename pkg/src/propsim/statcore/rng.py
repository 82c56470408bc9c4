"""Counter-based random streams keyed by (master seed, replicate index).

Each stream is a Philox-4x64 generator whose 128-bit key packs the master
seed in the low 64 bits and the replicate index in the high 64 bits, so two
streams with different keys share no state.  Normal variates come from
numpy's ziggurat transform of the Philox output.
"""

from __future__ import annotations

import numpy as np

_U64 = 1 << 64


class RngStream:
    """Deterministic random stream for one Monte Carlo replicate.

    Parameters
    ----------
    master_seed : int
        Unsigned 64-bit experiment seed.
    replicate_index : int
        Unsigned 64-bit replicate number.
    """

    __slots__ = ("master_seed", "replicate_index", "_bitgen", "_gen")

    def __init__(self, master_seed: int, replicate_index: int = 0):
        master_seed = int(master_seed)
        replicate_index = int(replicate_index)
        if not 0 <= master_seed < _U64:
            raise ValueError(f"master_seed must be an unsigned 64-bit integer, got {master_seed}")
        if not 0 <= replicate_index < _U64:
            raise ValueError(f"replicate_index must be an unsigned 64-bit integer, got {replicate_index}")
        self.master_seed = master_seed
        self.replicate_index = replicate_index
        self._bitgen = np.random.Philox(key=master_seed | (replicate_index << 64))
        self._gen = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        """Current 256-bit Philox counter, as an integer."""
        words = self._bitgen.state["state"]["counter"]
        return sum(int(w) << (64 * i) for i, w in enumerate(words))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, replicate_index={self.replicate_index})"

    def __getstate__(self):
        return (self.master_seed, self.replicate_index, self._bitgen.state)

    def __setstate__(self, state):
        master_seed, replicate_index, bitgen_state = state
        self.__init__(master_seed, replicate_index)
        self._bitgen.state = bitgen_state


def normal_draws(stream: RngStream, n: int, mean: float = 0.0, sd: float = 1.0) -> np.ndarray:
    """Draw ``n`` Normal(mean, sd^2) variates, advancing ``stream``."""
    if sd < 0:
        raise ValueError(f"sd must be non-negative, got {sd}")
    z = stream.standard_normal(int(n))
    if sd == 0:
        return np.full(int(n), float(mean))
    return mean + sd * z


def derive_seed(master_seed: int, key: str) -> int:
    """Map (master seed, text key) to a 64-bit seed for one experiment cell."""
    words = [int(master_seed) & 0xFFFFFFFF, int(master_seed) >> 32]
    words += list(key.encode("utf-8"))
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])
