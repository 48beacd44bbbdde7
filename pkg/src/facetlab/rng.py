"""Counter-based random streams keyed by (seed, stream_id)."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _seed_numba(seed):
    np.random.seed(seed)


class RngStream:
    """Philox stream: the same (seed, stream_id) always yields the same draws.

    Compiled kernels keep their own generator; ``kernel_seed`` draws a fresh
    seed for it from this stream, so kernel output is reproducible too.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def kernel_seed(self) -> int:
        s = int(self.generator.integers(0, 2**31 - 1))
        _seed_numba(s)
        return s

    def random(self, size=None):
        return self.generator.random(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def get_state(self) -> dict:
        st = self.generator.bit_generator.state
        inner = st["state"]
        return {
            "seed": self.seed,
            "stream_id": self.stream_id,
            "counter": [int(c) for c in inner["counter"]],
            "key": [int(c) for c in inner["key"]],
            "buffer": [int(c) for c in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        rng = cls(state["seed"], state["stream_id"])
        bg = rng.generator.bit_generator
        bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        return rng


def as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    if rng is None:
        return RngStream(0)
    return RngStream(int(rng))
